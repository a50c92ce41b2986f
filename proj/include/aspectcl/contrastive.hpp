#pragma once

// Supervised contrastive pre-training on aspect-aware [MASK] embeddings
// (or, for the sentence-level baseline, on mean-pooled encoder states).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "aspectcl/autograd.hpp"
#include "aspectcl/corpus.hpp"
#include "aspectcl/model.hpp"

namespace aspectcl {

enum class SclMode { kAspectLevel, kSentenceLevel };

std::string_view to_string(SclMode mode);
SclMode scl_mode_from_string(std::string_view name);

struct ContrastiveConfig {
  double temperature = 0.07;
  int batch_size = 16;
  int epochs = 14;
  double learning_rate = 2e-7;
  double weight_decay = 0.01;
  SclMode mode = SclMode::kAspectLevel;
  std::uint64_t seed = 42;
  bool normalize_embeddings = true;

  void validate() const;  // throws InvalidConfig
  bool operator==(const ContrastiveConfig&) const = default;
};

void to_json(nlohmann::json& j, const ContrastiveConfig& c);
void from_json(const nlohmann::json& j, ContrastiveConfig& c);

struct EmbeddingBatch {
  ag::Matrix embeddings;  // one row per anchor
  std::vector<int> labels;
};

struct SclResult {
  double loss = 0.0;       // summed over anchors that have a positive
  double mean_loss = 0.0;  // loss / anchors (0 when degenerate)
  std::size_t anchors = 0;
  std::size_t skipped_anchors = 0;  // anchors without any positive
  bool degenerate = false;          // no anchor had a positive
  ag::Matrix grad;                  // d loss / d embeddings
};

// Supervised contrastive loss over all rows of the batch. Each anchor's
// positives are the other rows with its label, its denominator runs over
// every other row. Rows are L2-normalised first when `normalize` is set.
// Throws InvalidArgument on fewer than two rows, tau <= 0, a label count
// mismatch or non-finite entries.
SclResult scl_loss(const EmbeddingBatch& batch, double tau, bool normalize = true);

// Decoder final-layer state at the [MASK] position of `prompt`, with the
// sentence encoded by the encoder and the prompt teacher-forced after the
// start symbol. Throws NoMaskToken / MultipleMaskTokens.
ag::Var mask_embedding(ModelBundle& model, const std::vector<std::string>& sentence, std::string_view prompt);
ag::RowVector extract_mask_embedding(ModelBundle& model, const std::vector<std::string>& sentence,
                                     std::string_view prompt);

// Mean of the encoder final-layer states over the sentence positions.
ag::Var sentence_embedding(ModelBundle& model, const std::vector<std::string>& sentence);
ag::RowVector mean_pooled_sentence_embedding(ModelBundle& model, const std::vector<std::string>& sentence);

struct ContrastiveItem {
  std::vector<std::string> sentence;
  std::string prompt;  // empty for sentence-level items
  Sentiment label = Sentiment::kPositive;
};

std::vector<ContrastiveItem> aspect_level_items(const std::vector<AnnotatedSentence>& sentences);
std::vector<ContrastiveItem> sentence_level_items(const std::vector<AnnotatedSentence>& sentences);

// Seeded, label-stratified batching: each label's indices are shuffled and
// paired, the pairs are shuffled together and the stream is cut into
// batches. Batches smaller than two are dropped.
std::vector<std::vector<std::size_t>> label_aware_batches(const std::vector<int>& labels, int batch_size,
                                                          std::mt19937_64& rng);

struct PretrainEpoch {
  int epoch = 0;
  double mean_loss = 0.0;  // mean over non-degenerate batches of the per-anchor loss
  std::size_t skipped_anchors = 0;
  std::size_t batches = 0;
  std::size_t degenerate_batches = 0;
};

struct PretrainResult {
  ModelBundle model;
  std::vector<PretrainEpoch> trace;
};

// Trains `init` with the contrastive objective. When `checkpoint_dir` is
// given, config.json, trace.csv and checkpoint/ are refreshed every epoch.
// Throws EmptyCorpus, NonFiniteLoss.
PretrainResult pretrain(const std::vector<ContrastiveItem>& corpus, const ContrastiveConfig& config,
                        ModelBundle init, const std::optional<std::filesystem::path>& checkpoint_dir = {});

std::string pretrain_trace_csv(const std::vector<PretrainEpoch>& trace);

// Mean silhouette coefficient with Euclidean distances. Points in singleton
// clusters score 0. Returns 0 when fewer than two clusters exist.
double silhouette_score(const ag::Matrix& points, const std::vector<int>& labels);

struct EmbeddingRow {
  std::string id;
  Sentiment label = Sentiment::kPositive;
  ag::RowVector vector;
};

// One "<id>\t<label>\t<v1,v2,...>" line per row.
std::string embeddings_to_tsv(const std::vector<EmbeddingRow>& rows);

}  // namespace aspectcl
