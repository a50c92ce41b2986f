#pragma once

// Joint fine-tuning of the generator with the opinion tagger (OTD) and the
// triplet counter (TCE):  L = L_ED + alpha * L_OTD + beta * L_TCE.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "aspectcl/autograd.hpp"
#include "aspectcl/corpus.hpp"
#include "aspectcl/metrics.hpp"
#include "aspectcl/model.hpp"
#include "aspectcl/templates.hpp"

namespace aspectcl {

enum class TooLongPolicy { kTruncate, kSkip };

struct DecodingConfig {
  int beam_width = 1;  // 1 = greedy
  int max_length = 128;

  bool operator==(const DecodingConfig&) const = default;
};

struct FinetuneConfig {
  double alpha = 0.0;
  double beta = 0.0;
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  int batch_size = 16;
  int epochs = 20;
  TaskKind task = TaskKind::kASTE;
  std::uint64_t seed = 42;
  int max_target_length = 128;  // target pieces plus </s>
  TooLongPolicy too_long = TooLongPolicy::kTruncate;
  DecodingConfig decoding;
  // Dev F1 is computed every `eval_every` epochs and after the last one.
  int eval_every = 1;
  // Stop as soon as dev F1 reaches this value.
  std::optional<double> stop_at_dev_f1;

  void validate() const;  // throws InvalidConfig
  bool operator==(const FinetuneConfig&) const = default;
};

void to_json(nlohmann::json& j, const FinetuneConfig& c);
void from_json(const nlohmann::json& j, FinetuneConfig& c);

// Special tokens plus the sentiment codes, registered as whole tokens so a
// target never needs <unk>.
std::vector<std::string> target_tokens(TaskKind task);

// Token ids of a target string; placeholders must already be in the vocabulary.
std::vector<int> target_ids(const Vocabulary& vocab, const LinearizedTarget& target);

// Teacher-forced NLL summed over the target pieces and the closing </s>.
// Throws TargetTooLong when pieces + 1 exceeds `max_length` or the decoder
// position table.
ag::Var generation_loss(ModelBundle& model, const std::vector<std::string>& sentence,
                        const LinearizedTarget& target, int max_length = 128);

// Mean cross-entropy over each word's first sub-token. Throws
// AlignmentFailure, InvalidArgument when tag and word counts differ.
ag::Var otd_loss(ModelBundle& model, const std::vector<std::string>& sentence, const BioSequence& bio);

// (prediction - count)^2.
ag::Var tce_loss(ModelBundle& model, const std::vector<std::string>& sentence, std::size_t count);

// Throws NonFiniteComponent.
double joint_loss(double ed, double otd, double tce, double alpha, double beta);
ag::Var joint_loss(const ag::Var& ed, const ag::Var& otd, const ag::Var& tce, double alpha, double beta);

struct TrainingExample {
  std::vector<std::string> sentence;
  std::vector<int> target;  // ids without </s>
  BioSequence bio;
  std::size_t count = 0;
};

// Applies the too-long policy; returns nullopt for a skipped example.
std::optional<TrainingExample> make_training_example(const Vocabulary& vocab, const AnnotatedSentence& sentence,
                                                     const FinetuneConfig& config);

struct ComponentLosses {
  ag::Var ed, otd, tce;
};

// All three losses sharing one encoder pass.
ComponentLosses component_losses(ModelBundle& model, const TrainingExample& example);

struct FinetuneEpoch {
  int epoch = 0;
  double ed = 0.0;  // per-example means
  double otd = 0.0;
  double tce = 0.0;
  double total = 0.0;
  std::optional<double> dev_f1;
};

struct FinetuneResult {
  ModelBundle model;  // best dev F1 snapshot, or the last epoch without dev data
  std::vector<FinetuneEpoch> trace;
  int best_epoch = 0;
  std::optional<double> best_dev_f1;
  std::size_t skipped_examples = 0;
};

// Adds target_tokens(task) to `init`, then trains. Throws
// EmptyTrainSet, NonFiniteLoss.
FinetuneResult finetune(const std::vector<AnnotatedSentence>& train, const std::vector<AnnotatedSentence>& dev,
                        const FinetuneConfig& config, ModelBundle init,
                        const std::optional<std::filesystem::path>& checkpoint_dir = {});

std::string finetune_trace_csv(const std::vector<FinetuneEpoch>& trace);

LinearizedTarget generate(ModelBundle& model, const std::vector<std::string>& sentence, TaskKind task,
                          const DecodingConfig& decoding = {});

// Nearest integer, an exact .5 rounds down, negatives clamp to 0.
std::size_t tce_round(double prediction);

double tce_predict_value(ModelBundle& model, const std::vector<std::string>& sentence);

struct Prediction {
  std::string sentence;
  std::string generated_text;
  ParseResult parsed;
  double tce_raw = 0.0;
  std::size_t tce_rounded = 0;
};

// The generated text is never adjusted to the count estimate. With
// `log_count_disagreement`, a mismatch between parsed tuples and the
// rounded count is logged.
Prediction predict(ModelBundle& model, const std::vector<std::string>& sentence, TaskKind task,
                   const DecodingConfig& decoding = {}, bool log_count_disagreement = false);

nlohmann::json prediction_to_json(const Prediction& p);

// Generation-backed predictor for metrics::evaluate.
Predictor model_predictor(ModelBundle& model, TaskKind task, const DecodingConfig& decoding = {});

}  // namespace aspectcl
