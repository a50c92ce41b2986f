#pragma once

// Experiment configuration and the resumable pipeline behind the CLI:
// backbone -> contrastive pre-training -> multi-task fine-tuning -> scoring.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "aspectcl/contrastive.hpp"
#include "aspectcl/corpus.hpp"
#include "aspectcl/metrics.hpp"
#include "aspectcl/model.hpp"
#include "aspectcl/multitask.hpp"

namespace aspectcl {

struct DatasetPaths {
  std::string name;
  Domain domain = Domain::kRestaurant;
  std::filesystem::path train, dev, test;

  bool operator==(const DatasetPaths&) const = default;
};

enum class SclChoice { kAspectLevel, kSentenceLevel, kNone };

std::string_view to_string(SclChoice choice);
SclChoice scl_choice_from_string(std::string_view name);

struct AblationFlags {
  bool use_contrastive_init = true;
  bool use_otd = true;
  bool use_tce = true;
  SclChoice scl_mode = SclChoice::kAspectLevel;

  // CON / OTD / TCE columns, e.g. "101".
  std::string tag() const;
  bool operator==(const AblationFlags&) const = default;
};

// The six ablation rows in reporting order, from the plain backbone to all
// three components.
std::vector<AblationFlags> ablation_rows();

struct ExperimentConfig {
  TaskKind task = TaskKind::kASTE;
  std::vector<DatasetPaths> datasets;
  // "random" builds a seeded backbone from the corpus text; anything else is
  // a checkpoint directory.
  std::string backbone = "random";
  std::uint64_t backbone_seed = 7;
  std::size_t vocab_max_words = 4000;
  ModelConfig model;
  ContrastiveConfig contrastive;
  FinetuneConfig finetune;
  AblationFlags ablation;
  std::filesystem::path output_dir = "runs";
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<double> sweep_grid{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  double sweep_initial_beta = 0.4;

  void validate() const;  // throws InvalidConfig
  const DatasetPaths& dataset(std::string_view name) const;
  bool operator==(const ExperimentConfig&) const = default;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

// Small profile that runs on a laptop CPU in minutes.
ExperimentConfig desk_profile();

ExperimentConfig load_experiment_config(const std::filesystem::path& path);
// "a.b.c=value"; the value is read as JSON when it parses, else as a string.
void apply_override(nlohmann::json& doc, std::string_view assignment);

// Stage bookkeeping: a stage directory holds manifest.json with the hash of
// everything the stage consumed. A matching manifest means the stage is done.
struct StageOutcome {
  std::filesystem::path dir;
  bool skipped = false;
};

StageOutcome run_stage(const std::filesystem::path& dir, std::string_view stage, const std::string& input_hash,
                       const std::function<void(const std::filesystem::path&)>& body);
bool stage_complete(const std::filesystem::path& dir, const std::string& input_hash);

// Cache directory for generated backbones: $ASPECTCL_CACHE_DIR, else
// <output_dir>/cache.
std::filesystem::path cache_dir(const ExperimentConfig& config);

class Experiment {
 public:
  explicit Experiment(ExperimentConfig config);

  const ExperimentConfig& config() const { return config_; }

  struct Data {
    std::vector<AnnotatedSentence> train, dev, test;
  };
  const Data& data(std::string_view dataset);
  // Training splits of every configured dataset, in configuration order.
  std::vector<AnnotatedSentence> merged_train();

  ModelBundle backbone();
  std::string backbone_hash();

  // Each stage returns its directory; checkpoints live in <dir>/checkpoint.
  std::filesystem::path pretrain_stage(SclChoice mode, std::uint64_t seed);
  std::filesystem::path finetune_stage(std::string_view dataset, const AblationFlags& flags, double alpha, double beta,
                                       std::uint64_t seed);
  // Writes report.json in the stage directory and returns the scores.
  ScoreSummary evaluate_stage(std::string_view dataset, const AblationFlags& flags, double alpha, double beta,
                              std::uint64_t seed, Split split = Split::kTest);

 private:
  std::filesystem::path root() const { return config_.output_dir; }
  std::string file_hash(const std::filesystem::path& path);

  ExperimentConfig config_;
  std::map<std::string, Data, std::less<>> data_;
  std::optional<ModelBundle> backbone_;
  std::optional<std::string> backbone_hash_;
};

struct SweepRow {
  int stage = 1;
  double alpha = 0.0;
  double beta = 0.0;
  double dev_f1 = 0.0;
};

struct SweepResult {
  double alpha = 0.0;
  double beta = 0.0;
  double dev_f1 = 0.0;
  std::vector<SweepRow> rows;
};

// Stage 1 scans alpha over `grid` at beta = initial_beta; stage 2 scans beta
// at the best alpha. Ties keep the first maximum. With `csv_path`, rows are
// appended as they finish, so a failing cell leaves the earlier ones on disk.
SweepResult two_stage_sweep(const std::vector<double>& grid, double initial_beta,
                            const std::function<double(double alpha, double beta)>& objective,
                            const std::optional<std::filesystem::path>& csv_path = {});

std::string sweep_csv_header();
std::string sweep_csv_row(const SweepRow& row);

struct Table4Row {
  AblationFlags flags;
  std::optional<ScoreSummary> scores;  // mean over datasets of per-dataset seed medians
  std::string error;                   // set when the row failed
};

std::vector<Table4Row> run_table4(Experiment& experiment, double alpha, double beta);
nlohmann::json table4_to_json(const std::vector<Table4Row>& rows);
std::string table4_text(const std::vector<Table4Row>& rows);

}  // namespace aspectcl
