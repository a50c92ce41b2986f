#pragma once

// Shared helpers for the test binaries: fixture paths, small random
// generators and a tiny seeded model.

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "aspectcl/corpus.hpp"
#include "aspectcl/model.hpp"
#include "aspectcl/templates.hpp"
#include "aspectcl/types.hpp"

namespace testing {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(ASPECTCL_FIXTURE_DIR) / name;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("aspectcl-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline const std::vector<std::string>& word_pool() {
  static const std::vector<std::string> pool{
      "food", "service", "battery", "life",  "screen", "great", "bad",  "not",  "very", "wine",
      "list", "the",     "POS",     "NEU",   "NEG",    "a",     "b-c",  "x's",  "café", "2.5",
      "of",   "dinner",  "place",   "quiet", "MASK",   "[mask]", "<a>", "ssep", "it",   "and"};
  return pool;
}

inline std::string random_phrase(std::mt19937_64& rng, int max_words = 3) {
  std::uniform_int_distribution<int> len(1, max_words);
  std::uniform_int_distribution<std::size_t> pick(0, word_pool().size() - 1);
  std::string out;
  for (int n = len(rng); n > 0; --n) {
    if (!out.empty()) out += ' ';
    out += word_pool()[pick(rng)];
  }
  return out;
}

inline aspectcl::Sentiment random_sentiment(std::mt19937_64& rng) {
  return static_cast<aspectcl::Sentiment>(std::uniform_int_distribution<int>(0, 2)(rng));
}

// A tuple carrying exactly the fields of `task`.
inline aspectcl::Tuple random_tuple(std::mt19937_64& rng, aspectcl::TaskKind task) {
  aspectcl::Tuple t;
  for (auto f : aspectcl::schema(task)) {
    switch (f) {
      case aspectcl::Field::kCategory: t.category = random_phrase(rng, 2); break;
      case aspectcl::Field::kAspect: t.aspect = random_phrase(rng); break;
      case aspectcl::Field::kOpinion: t.opinion = random_phrase(rng); break;
      case aspectcl::Field::kSentiment: t.sentiment = random_sentiment(rng); break;
    }
  }
  return t;
}

inline std::vector<aspectcl::AnnotatedSentence> load(const std::string& name) {
  return aspectcl::load_split(fixture(name), aspectcl::Split::kTrain).sentences;
}

inline aspectcl::ModelConfig tiny_config() {
  aspectcl::ModelConfig c;
  c.d_model = 16;
  c.num_heads = 2;
  c.d_ff = 32;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.max_positions = 96;
  c.tce_hidden = 8;
  return c;
}

inline aspectcl::ModelBundle tiny_model(const std::vector<aspectcl::AnnotatedSentence>& sentences,
                                        std::uint64_t seed = 3,
                                        aspectcl::ModelConfig config = tiny_config()) {
  std::vector<std::vector<std::string>> texts;
  for (const auto& s : sentences) texts.push_back(s.tokens);
  return aspectcl::ModelBundle(config, aspectcl::Vocabulary::build(texts, 500), seed);
}

}  // namespace testing
