#pragma once

// ASTE-Data-V2 ingestion and the labels derived from it: aspect prompts for
// contrastive pre-training, BIO opinion tags, triplet counts, and the
// sentence-level baseline examples.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "aspectcl/types.hpp"

namespace aspectcl {

enum class Split { kTrain, kDev, kTest };
enum class Domain { kRestaurant, kLaptop };

std::string_view to_string(Split split);
std::string_view to_string(Domain domain);
Split split_from_string(std::string_view name);
Domain domain_from_string(std::string_view name);

struct AnnotatedSentence {
  std::vector<std::string> tokens;
  std::string raw_text;
  std::vector<Triplet> triplets;
  Split split = Split::kTrain;
  Domain domain = Domain::kRestaurant;

  bool operator==(const AnnotatedSentence&) const = default;
};

// One line of the released format:
//   <sentence>####[([a, ...], [o, ...], 'POS'), ...]
// A fourth tuple element, when present, is the category string; only such
// category-bearing tuples may carry an empty (implicit) index list, whose
// surface is "NULL". Duplicate triplets are dropped, first occurrence kept.
// Throws MalformedLine (without line context).
AnnotatedSentence parse_aste_v2_line(std::string_view line, Split split = Split::kTrain,
                                     Domain domain = Domain::kRestaurant);

// Inverse of parse_aste_v2_line.
std::string to_aste_v2_line(const AnnotatedSentence& sentence);

struct SplitStats {
  std::size_t sentences = 0;
  std::size_t positive = 0;
  std::size_t neutral = 0;
  std::size_t negative = 0;

  std::size_t triplets() const { return positive + neutral + negative; }
  bool operator==(const SplitStats&) const = default;
};

SplitStats compute_stats(const std::vector<AnnotatedSentence>& sentences);

struct LoadedSplit {
  std::vector<AnnotatedSentence> sentences;
  SplitStats stats;
};

// Blank lines are skipped. Throws IOFailure, or MalformedLine carrying the
// file and line number.
LoadedSplit load_split(const std::filesystem::path& path, Split split,
                       Domain domain = Domain::kRestaurant);

struct PromptExample {
  std::size_t sentence_index = 0;  // into the sequence the examples came from
  std::string aspect;
  std::string prompt;
  Sentiment label = Sentiment::kPositive;

  bool operator==(const PromptExample&) const = default;
};

struct SentimentConflict {
  std::size_t sentence_index = 0;
  std::string aspect;
};

struct PromptDerivation {
  std::vector<PromptExample> examples;
  std::vector<SentimentConflict> conflicts;  // skipped (sentence, aspect) pairs
};

// One example per distinct aspect surface per sentence, in sentence order
// then first-occurrence order. Aspects annotated with two sentiments in the
// same sentence are skipped and logged.
PromptDerivation derive_prompt_examples(const std::vector<AnnotatedSentence>& sentences);

enum class BioTag { kB = 0, kI = 1, kO = 2 };
inline constexpr int kNumBioTags = 3;

char to_char(BioTag tag);

struct BioSequence {
  std::vector<BioTag> tags;

  bool operator==(const BioSequence&) const = default;
};

// First token of each (merged) gold opinion span gets B, the rest I.
BioSequence build_bio_labels(const AnnotatedSentence& sentence);

// Spans recovered from tags as [begin, end) pairs. A stray I opens a span.
std::vector<std::pair<int, int>> decode_bio(const BioSequence& bio);

// Sorted union of gold opinion spans with overlapping ranges
// merged, as [begin, end) pairs.
std::vector<std::pair<int, int>> merged_opinion_spans(const AnnotatedSentence& sentence);

std::size_t triplet_count_label(const AnnotatedSentence& sentence);

struct SentenceExample {
  std::size_t sentence_index = 0;
  Sentiment label = Sentiment::kPositive;

  bool operator==(const SentenceExample&) const = default;
};

// Sentences whose triplets all share one sentiment; mixed or triplet-free
// sentences are excluded.
std::vector<SentenceExample> derive_sentence_level_examples(const std::vector<AnnotatedSentence>& sentences);

inline constexpr int kCorpusFormatVersion = 1;

// Canonical dump: sentences, triplets with spans, BIO tags, counts and the
// derived prompt examples, under a "format_version" field.
nlohmann::json corpus_to_json(const std::vector<AnnotatedSentence>& sentences);
std::vector<AnnotatedSentence> corpus_from_json(const nlohmann::json& doc);

}  // namespace aspectcl
