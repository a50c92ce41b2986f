#include "aspectcl/experiment.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>

#include <spdlog/spdlog.h>

#include "aspectcl/errors.hpp"
#include "aspectcl/io.hpp"

namespace aspectcl {

namespace fs = std::filesystem;

std::string_view to_string(SclChoice choice) {
  switch (choice) {
    case SclChoice::kAspectLevel: return "aspect_level";
    case SclChoice::kSentenceLevel: return "sentence_level";
    case SclChoice::kNone: return "none";
  }
  return "none";
}

SclChoice scl_choice_from_string(std::string_view name) {
  if (name == "aspect_level") return SclChoice::kAspectLevel;
  if (name == "sentence_level") return SclChoice::kSentenceLevel;
  if (name == "none") return SclChoice::kNone;
  throw InvalidConfig("scl_mode must be aspect_level, sentence_level or none, got '" + std::string(name) + "'");
}

std::string AblationFlags::tag() const {
  std::string t;
  t += use_contrastive_init ? '1' : '0';
  t += use_otd ? '1' : '0';
  t += use_tce ? '1' : '0';
  if (scl_mode == SclChoice::kSentenceLevel) t += "-sentence";
  return t;
}

std::vector<AblationFlags> ablation_rows() {
  auto row = [](bool con, bool otd, bool tce) {
    return AblationFlags{con, otd, tce, con ? SclChoice::kAspectLevel : SclChoice::kNone};
  };
  return {row(false, false, false), row(true, false, false), row(false, true, true),
          row(true, false, true),   row(true, true, false),  row(true, true, true)};
}

void ExperimentConfig::validate() const {
  contrastive.validate();
  finetune.validate();
  if (ablation.use_contrastive_init != (ablation.scl_mode != SclChoice::kNone)) {
    throw InvalidConfig("use_contrastive_init must be set exactly when scl_mode is not none");
  }
  if (seeds.empty()) throw InvalidConfig("seed list is empty");
  if (sweep_grid.empty()) throw InvalidConfig("sweep grid is empty");
  for (double v : sweep_grid) {
    if (!(v >= 0.0)) throw InvalidConfig("sweep grid values must be >= 0");
  }
  if (model.d_model % model.num_heads != 0) throw InvalidConfig("d_model must be divisible by num_heads");
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      if (datasets[k].name == datasets[i].name) throw InvalidConfig("duplicate dataset '" + datasets[i].name + "'");
    }
  }
}

const DatasetPaths& ExperimentConfig::dataset(std::string_view name) const {
  for (const auto& d : datasets) {
    if (d.name == name) return d;
  }
  throw InvalidArgument("no dataset named '" + std::string(name) + "' in the configuration");
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  nlohmann::json datasets = nlohmann::json::array();
  for (const auto& d : c.datasets) {
    datasets.push_back({{"name", d.name},
                        {"domain", to_string(d.domain)},
                        {"train", d.train.string()},
                        {"dev", d.dev.string()},
                        {"test", d.test.string()}});
  }
  j = {{"task", to_string(c.task)},
       {"datasets", datasets},
       {"backbone", c.backbone},
       {"backbone_seed", c.backbone_seed},
       {"vocab_max_words", c.vocab_max_words},
       {"model", c.model},
       {"contrastive", c.contrastive},
       {"finetune", c.finetune},
       {"ablation",
        {{"use_contrastive_init", c.ablation.use_contrastive_init},
         {"use_otd", c.ablation.use_otd},
         {"use_tce", c.ablation.use_tce},
         {"scl_mode", to_string(c.ablation.scl_mode)}}},
       {"output_dir", c.output_dir.string()},
       {"seeds", c.seeds},
       {"sweep_grid", c.sweep_grid},
       {"sweep_initial_beta", c.sweep_initial_beta}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  const ExperimentConfig d;
  c.task = task_from_string(j.value("task", std::string(to_string(d.task))));
  c.datasets.clear();
  if (j.contains("datasets")) {
    for (const auto& e : j.at("datasets")) {
      DatasetPaths p;
      p.name = e.at("name").get<std::string>();
      p.domain = domain_from_string(e.value("domain", std::string("restaurant")));
      p.train = e.value("train", std::string());
      p.dev = e.value("dev", std::string());
      p.test = e.value("test", std::string());
      c.datasets.push_back(std::move(p));
    }
  }
  c.backbone = j.value("backbone", d.backbone);
  c.backbone_seed = j.value("backbone_seed", d.backbone_seed);
  c.vocab_max_words = j.value("vocab_max_words", d.vocab_max_words);
  c.model = j.contains("model") ? j.at("model").get<ModelConfig>() : d.model;
  c.contrastive = j.contains("contrastive") ? j.at("contrastive").get<ContrastiveConfig>() : d.contrastive;
  c.finetune = j.contains("finetune") ? j.at("finetune").get<FinetuneConfig>() : d.finetune;
  c.ablation = d.ablation;
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    c.ablation.scl_mode = scl_choice_from_string(a.value("scl_mode", std::string(to_string(d.ablation.scl_mode))));
    c.ablation.use_contrastive_init = a.value("use_contrastive_init", c.ablation.scl_mode != SclChoice::kNone);
    c.ablation.use_otd = a.value("use_otd", d.ablation.use_otd);
    c.ablation.use_tce = a.value("use_tce", d.ablation.use_tce);
  }
  c.output_dir = j.value("output_dir", d.output_dir.string());
  c.seeds = j.value("seeds", d.seeds);
  c.sweep_grid = j.value("sweep_grid", d.sweep_grid);
  c.sweep_initial_beta = j.value("sweep_initial_beta", d.sweep_initial_beta);
}

ExperimentConfig desk_profile() {
  ExperimentConfig c;
  c.model.d_model = 32;
  c.model.num_heads = 2;
  c.model.d_ff = 64;
  c.model.encoder_layers = 1;
  c.model.decoder_layers = 1;
  c.model.max_positions = 160;
  c.model.tce_hidden = 128;
  c.contrastive.learning_rate = 3e-3;
  c.contrastive.epochs = 12;
  c.finetune.learning_rate = 3e-3;
  c.finetune.batch_size = 8;
  c.finetune.epochs = 30;
  c.finetune.alpha = 0.2;
  c.finetune.beta = 0.6;
  c.seeds = {1, 2, 3};
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig("cannot parse " + path.string() + ": " + e.what());
  }
  try {
    auto config = doc.get<ExperimentConfig>();
    config.validate();
    return config;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig("bad configuration in " + path.string() + ": " + e.what());
  }
}

void apply_override(nlohmann::json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw InvalidArgument("override must look like key.path=value, got '" + std::string(assignment) + "'");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw InvalidArgument("empty component in override key '" + key + "'");
    if (node->is_null()) *node = nlohmann::json::object();
    if (!node->is_object()) throw InvalidArgument("override key '" + key + "' descends into a non-object");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

bool stage_complete(const fs::path& dir, const std::string& input_hash) {
  const auto manifest = dir / "manifest.json";
  if (!fs::exists(manifest)) return false;
  const auto doc = nlohmann::json::parse(read_file(manifest), nullptr, false);
  return !doc.is_discarded() && doc.value("input_hash", std::string()) == input_hash &&
         doc.value("completed", false);
}

StageOutcome run_stage(const fs::path& dir, std::string_view stage, const std::string& input_hash,
                       const std::function<void(const fs::path&)>& body) {
  if (stage_complete(dir, input_hash)) {
    spdlog::info("{}: up to date in {}", stage, dir.string());
    return {dir, true};
  }
  fs::create_directories(dir);
  fs::remove(dir / "manifest.json");
  body(dir);
  const nlohmann::json manifest = {{"stage", stage}, {"input_hash", input_hash}, {"completed", true}};
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  return {dir, false};
}

fs::path cache_dir(const ExperimentConfig& config) {
  if (const char* env = std::getenv("ASPECTCL_CACHE_DIR"); env && *env) return env;
  return config.output_dir / "cache";
}

namespace {

std::string manifest_hash(const fs::path& dir) {
  return nlohmann::json::parse(read_file(dir / "manifest.json")).at("input_hash").get<std::string>();
}

std::string number_tag(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace

Experiment::Experiment(ExperimentConfig config) : config_(std::move(config)) { config_.validate(); }

std::string Experiment::file_hash(const fs::path& path) { return sha256_hex(read_file(path)); }

const Experiment::Data& Experiment::data(std::string_view dataset) {
  if (auto it = data_.find(dataset); it != data_.end()) return it->second;
  const auto& paths = config_.dataset(dataset);
  Data d;
  d.train = load_split(paths.train, Split::kTrain, paths.domain).sentences;
  if (!paths.dev.empty()) d.dev = load_split(paths.dev, Split::kDev, paths.domain).sentences;
  if (!paths.test.empty()) d.test = load_split(paths.test, Split::kTest, paths.domain).sentences;
  return data_.emplace(std::string(dataset), std::move(d)).first->second;
}

std::vector<AnnotatedSentence> Experiment::merged_train() {
  std::vector<AnnotatedSentence> merged;
  for (const auto& d : config_.datasets) {
    const auto& train = data(d.name).train;
    merged.insert(merged.end(), train.begin(), train.end());
  }
  return merged;
}

ModelBundle Experiment::backbone() {
  if (backbone_) return *backbone_;
  if (config_.backbone != "random") {
    backbone_ = ModelBundle::load(config_.backbone);
    backbone_hash_ = sha256_hex(read_file(fs::path(config_.backbone) / "model.json") +
                                read_file(fs::path(config_.backbone) / "weights.bin"));
    return *backbone_;
  }
  // The vocabulary covers the text of every split (no labels are read), as a
  // pretrained tokenizer would.
  std::vector<std::vector<std::string>> texts;
  for (const auto& d : config_.datasets) {
    const auto& splits = data(d.name);
    for (const auto* part : {&splits.train, &splits.dev, &splits.test}) {
      for (const auto& s : *part) texts.push_back(s.tokens);
    }
  }
  Vocabulary vocab = Vocabulary::build(texts, config_.vocab_max_words);
  const nlohmann::json key = {
      {"model", config_.model}, {"seed", config_.backbone_seed}, {"vocabulary", vocab.tokens()}};
  backbone_hash_ = sha256_hex(key.dump());
  const auto cached = cache_dir(config_) / "backbones" / *backbone_hash_;
  if (fs::exists(cached / "weights.bin")) {
    backbone_ = ModelBundle::load(cached);
  } else {
    backbone_ = ModelBundle(config_.model, std::move(vocab), config_.backbone_seed);
    save_checkpoint(*backbone_, cached);
  }
  return *backbone_;
}

std::string Experiment::backbone_hash() {
  if (!backbone_hash_) backbone();
  return *backbone_hash_;
}

fs::path Experiment::pretrain_stage(SclChoice mode, std::uint64_t seed) {
  if (mode == SclChoice::kNone) throw InvalidArgument("pretrain stage needs a contrastive mode");
  ContrastiveConfig cfg = config_.contrastive;
  cfg.mode = mode == SclChoice::kAspectLevel ? SclMode::kAspectLevel : SclMode::kSentenceLevel;
  cfg.seed = seed;
  nlohmann::json key = {{"stage", "pretrain"}, {"backbone", backbone_hash()}, {"config", cfg}};
  for (const auto& d : config_.datasets) key["train"].push_back(file_hash(d.train));
  const auto dir = root() / "pretrain" / std::string(to_string(mode)) / ("seed-" + std::to_string(seed));
  run_stage(dir, "pretrain", sha256_hex(key.dump()), [&](const fs::path& out) {
    const auto merged = merged_train();
    const auto items = mode == SclChoice::kAspectLevel ? aspect_level_items(merged) : sentence_level_items(merged);
    pretrain(items, cfg, backbone(), out);
  });
  return dir;
}

fs::path Experiment::finetune_stage(std::string_view dataset, const AblationFlags& flags, double alpha, double beta,
                                    std::uint64_t seed) {
  FinetuneConfig cfg = config_.finetune;
  cfg.task = config_.task;
  cfg.alpha = flags.use_otd ? alpha : 0.0;
  cfg.beta = flags.use_tce ? beta : 0.0;
  cfg.seed = seed;
  const auto& paths = config_.dataset(dataset);

  std::optional<fs::path> init_dir;
  std::string init_hash = backbone_hash();
  if (flags.use_contrastive_init) {
    init_dir = pretrain_stage(flags.scl_mode, seed) / "checkpoint";
    init_hash = manifest_hash(init_dir->parent_path());
  }
  nlohmann::json key = {{"stage", "finetune"}, {"init", init_hash}, {"config", cfg}, {"train", file_hash(paths.train)}};
  if (!paths.dev.empty()) key["dev"] = file_hash(paths.dev);

  const auto dir = root() / "finetune" / std::string(dataset) / flags.tag() /
                   ("a" + number_tag(cfg.alpha) + "-b" + number_tag(cfg.beta)) / ("seed-" + std::to_string(seed));
  run_stage(dir, "finetune", sha256_hex(key.dump()), [&](const fs::path& out) {
    const auto& splits = data(dataset);
    ModelBundle init = init_dir ? ModelBundle::load(*init_dir) : backbone();
    finetune(splits.train, splits.dev, cfg, std::move(init), out);
  });
  return dir;
}

ScoreSummary Experiment::evaluate_stage(std::string_view dataset, const AblationFlags& flags, double alpha,
                                        double beta, std::uint64_t seed, Split split) {
  const auto model_dir = finetune_stage(dataset, flags, alpha, beta, seed);
  const auto& paths = config_.dataset(dataset);
  const fs::path split_path = split == Split::kTrain ? paths.train : split == Split::kDev ? paths.dev : paths.test;
  if (split_path.empty()) throw InvalidArgument("dataset '" + std::string(dataset) + "' has no " +
                                                std::string(to_string(split)) + " split");
  const nlohmann::json key = {{"stage", "evaluate"},
                              {"model", manifest_hash(model_dir)},
                              {"split", file_hash(split_path)},
                              {"beam_width", config_.finetune.decoding.beam_width},
                              {"max_length", config_.finetune.decoding.max_length}};
  const auto dir = model_dir / ("eval-" + std::string(to_string(split)));
  run_stage(dir, "evaluate", sha256_hex(key.dump()), [&](const fs::path& out) {
    const auto& splits = data(dataset);
    const auto& sentences = split == Split::kTrain ? splits.train : split == Split::kDev ? splits.dev : splits.test;
    ModelBundle model = ModelBundle::load(model_dir / "checkpoint");
    const auto report = evaluate(sentences, config_.task, model_predictor(model, config_.task, config_.finetune.decoding));
    write_file_atomic(out / "report.json", report_to_json(report, true).dump(2) + "\n");
    write_file_atomic(out / "summary.json", summary_to_json(summarize(report)).dump(2) + "\n");
    write_file_atomic(out / "errors.csv", errors_csv(report));
  });
  const auto s = nlohmann::json::parse(read_file(dir / "summary.json"));
  return {s.at("precision"), s.at("recall"), s.at("f1"), s.at("aspect_f1"), s.at("opinion_f1"),
          s.at("sentiment_accuracy")};
}

std::string sweep_csv_header() { return "stage,alpha,beta,dev_f1\n"; }

std::string sweep_csv_row(const SweepRow& row) {
  return std::to_string(row.stage) + "," + format_double(row.alpha) + "," + format_double(row.beta) + "," +
         format_double(row.dev_f1) + "\n";
}

SweepResult two_stage_sweep(const std::vector<double>& grid, double initial_beta,
                            const std::function<double(double, double)>& objective,
                            const std::optional<fs::path>& csv_path) {
  if (grid.empty()) throw InvalidArgument("sweep grid is empty");
  std::optional<std::ofstream> csv;
  if (csv_path) {
    if (csv_path->has_parent_path()) fs::create_directories(csv_path->parent_path());
    csv.emplace(*csv_path, std::ios::trunc);
    if (!*csv) throw IOFailure("cannot write " + csv_path->string());
    *csv << sweep_csv_header() << std::flush;
  }
  SweepResult result;
  auto record = [&](int stage, double alpha, double beta) {
    const SweepRow row{stage, alpha, beta, objective(alpha, beta)};
    result.rows.push_back(row);
    if (csv) *csv << sweep_csv_row(row) << std::flush;
    return row.dev_f1;
  };

  double best = 0.0;
  bool first = true;
  for (double alpha : grid) {
    const double f1 = record(1, alpha, initial_beta);
    if (first || f1 > best) {
      best = f1;
      result.alpha = alpha;
      first = false;
    }
  }
  first = true;
  for (double beta : grid) {
    const double f1 = record(2, result.alpha, beta);
    if (first || f1 > best) {
      best = f1;
      result.beta = beta;
      first = false;
    }
  }
  result.dev_f1 = best;
  return result;
}

std::vector<Table4Row> run_table4(Experiment& experiment, double alpha, double beta) {
  std::vector<Table4Row> rows;
  const auto& config = experiment.config();
  if (config.datasets.empty()) throw InvalidConfig("no datasets configured");
  for (const auto& flags : ablation_rows()) {
    Table4Row row{flags, std::nullopt, {}};
    try {
      std::vector<ScoreSummary> per_dataset;
      for (const auto& d : config.datasets) {
        std::vector<ScoreSummary> runs;
        for (auto seed : config.seeds) runs.push_back(experiment.evaluate_stage(d.name, flags, alpha, beta, seed));
        per_dataset.push_back(median_over_seeds(runs));
      }
      row.scores = mean_of(per_dataset);
    } catch (const Error& e) {
      spdlog::error("ablation row {} failed: {}", flags.tag(), e.what());
      row.error = std::string(e.kind()) + ": " + e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json table4_to_json(const std::vector<Table4Row>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j = {{"con", r.flags.use_contrastive_init}, {"otd", r.flags.use_otd}, {"tce", r.flags.use_tce}};
    if (r.scores) {
      j["triplet_f1"] = r.scores->f1;
      j["aspect_f1"] = r.scores->aspect_f1;
      j["opinion_f1"] = r.scores->opinion_f1;
      j["sentiment_accuracy"] = r.scores->sentiment_accuracy;
    } else {
      j["error"] = r.error;
    }
    out.push_back(std::move(j));
  }
  return out;
}

std::string table4_text(const std::vector<Table4Row>& rows) {
  std::string out = "CON  OTD  TCE  Triplet   Aspect  Opinion  Sentiment\n";
  auto mark = [](bool on) { return on ? std::string("yes  ") : std::string("no   "); };
  for (const auto& r : rows) {
    out += mark(r.flags.use_contrastive_init) + mark(r.flags.use_otd) + mark(r.flags.use_tce);
    if (r.scores) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "%7.3f  %7.3f  %7.3f  %9.3f\n", r.scores->f1, r.scores->aspect_f1,
                    r.scores->opinion_f1, r.scores->sentiment_accuracy);
      out += buf;
    } else {
      out += "failed: " + r.error + "\n";
    }
  }
  return out;
}

}  // namespace aspectcl
