// Command-line front end for the experiment pipeline.

#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "aspectcl/contrastive.hpp"
#include "aspectcl/corpus.hpp"
#include "aspectcl/errors.hpp"
#include "aspectcl/experiment.hpp"
#include "aspectcl/io.hpp"
#include "aspectcl/metrics.hpp"
#include "aspectcl/multitask.hpp"
#include "aspectcl/templates.hpp"

namespace fs = std::filesystem;
using namespace aspectcl;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string log_level = "info";
};

ExperimentConfig resolve_config(const Common& common) {
  nlohmann::json doc;
  if (common.config_path.empty()) {
    doc = desk_profile();
  } else {
    try {
      doc = nlohmann::json::parse(read_file(common.config_path));
    } catch (const nlohmann::json::exception& e) {
      throw InvalidConfig("cannot parse " + common.config_path + ": " + e.what());
    }
  }
  for (const auto& o : common.overrides) apply_override(doc, o);
  try {
    auto config = doc.get<ExperimentConfig>();
    config.validate();
    return config;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("bad configuration: ") + e.what());
  }
}

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

std::vector<std::vector<std::string>> read_sentences(const fs::path& path) {
  std::vector<std::vector<std::string>> out;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    const auto sep = line.find("####");
    auto words = split_whitespace(sep == std::string::npos ? line : line.substr(0, sep));
    if (!words.empty()) out.push_back(std::move(words));
  }
  return out;
}

std::vector<AnnotatedSentence> load_any(const fs::path& path, Split split = Split::kTest) {
  return load_split(path, split).sentences;
}

int dispatch(CLI::App& app, const Common& common, const std::map<std::string, std::function<int()>>& handlers) {
  for (const auto& [name, handler] : handlers) {
    if (app.got_subcommand(name)) return handler();
  }
  (void)common;
  std::cerr << app.help();
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Aspect sentiment triplet extraction with contrastive pre-training and multi-task fine-tuning"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config_path, "experiment configuration (JSON); defaults to the desk profile");
  app.add_option("--set", common.overrides, "override a configuration value, e.g. finetune.alpha=0.2")
      ->allow_extra_args(false);
  app.add_option("--log-level", common.log_level, "trace, debug, info, warn, error, off");

  std::string input, output, dataset, checkpoint, split_name = "test", domain_name = "restaurant", mode_name,
                                                   task_name;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha, beta;
  bool log_disagreement = false, silhouette = false;

  auto* ingest = app.add_subcommand("ingest", "parse an annotated file and dump the canonical corpus JSON");
  ingest->add_option("--input", input, "annotated file")->required();
  ingest->add_option("--split", split_name, "train, dev or test");
  ingest->add_option("--domain", domain_name, "restaurant or laptop");
  ingest->add_option("--out", output, "corpus JSON path (default: stdout)");

  auto* derive = app.add_subcommand("derive-prompts", "derive contrastive examples from the configured training sets");
  derive->add_option("--out", output, "TSV of aspect-level prompts");

  auto* pretrain_cmd = app.add_subcommand("pretrain", "run contrastive pre-training");
  pretrain_cmd->add_option("--mode", mode_name, "aspect_level or sentence_level (default: config)");
  pretrain_cmd->add_option("--seed", seed);

  auto* finetune_cmd = app.add_subcommand("finetune", "multi-task fine-tuning on one dataset");
  finetune_cmd->add_option("--dataset", dataset)->required();
  finetune_cmd->add_option("--seed", seed);
  finetune_cmd->add_option("--alpha", alpha);
  finetune_cmd->add_option("--beta", beta);

  auto* evaluate_cmd = app.add_subcommand("evaluate", "score a fine-tuned model");
  evaluate_cmd->add_option("--dataset", dataset, "configured dataset (runs the pipeline as needed)");
  evaluate_cmd->add_option("--split", split_name);
  evaluate_cmd->add_option("--seed", seed);
  evaluate_cmd->add_option("--alpha", alpha);
  evaluate_cmd->add_option("--beta", beta);
  evaluate_cmd->add_option("--checkpoint", checkpoint, "score this checkpoint on --input instead");
  evaluate_cmd->add_option("--input", input);
  evaluate_cmd->add_option("--task", task_name, "task of the checkpoint (default ASTE)");
  evaluate_cmd->add_option("--out", output, "directory for report.json and errors.csv");

  auto* predict_cmd = app.add_subcommand("predict", "generate tuples for raw or annotated sentences (JSON lines)");
  predict_cmd->add_option("--checkpoint", checkpoint)->required();
  predict_cmd->add_option("--input", input)->required();
  predict_cmd->add_option("--out", output, "JSON-lines path (default: stdout)");
  predict_cmd->add_flag("--log-count-disagreement", log_disagreement);

  auto* sweep_cmd = app.add_subcommand("sweep", "two-stage alpha/beta search on the dev split");
  sweep_cmd->add_option("--dataset", dataset)->required();
  sweep_cmd->add_option("--seed", seed);

  auto* export_cmd = app.add_subcommand("export-embeddings", "dump [MASK] embeddings of every prompt as TSV");
  export_cmd->add_option("--checkpoint", checkpoint)->required();
  export_cmd->add_option("--input", input)->required();
  export_cmd->add_option("--out", output, "TSV path (default: stdout)");
  export_cmd->add_flag("--silhouette", silhouette, "print the silhouette score by sentiment to stderr");

  auto* table_cmd = app.add_subcommand("run-table4", "run the six-row component ablation");

  auto* roundtrip_cmd = app.add_subcommand("roundtrip-targets", "parse and re-render a file of target strings");
  roundtrip_cmd->add_option("--input", input)->required();
  roundtrip_cmd->add_option("--task", task_name, "ASTE, ACOS, TASD or AESC")->required();

  auto* show_cmd = app.add_subcommand("show-config", "print the resolved configuration");

  CLI11_PARSE(app, argc, argv);

  auto logger = spdlog::stderr_color_mt("aspectcl");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(common.log_level));

  auto flags_seed = [&](const ExperimentConfig& c) { return seed.value_or(c.seeds.front()); };

  const std::map<std::string, std::function<int()>> handlers{
      {"ingest",
       [&] {
         const auto loaded = load_split(input, split_from_string(split_name), domain_from_string(domain_name));
         const auto doc = corpus_to_json(loaded.sentences);
         if (output.empty()) {
           print_json(doc);
         } else {
           write_file_atomic(output, doc.dump(2) + "\n");
           print_json(doc.at("stats"));
         }
         return 0;
       }},
      {"derive-prompts",
       [&] {
         Experiment exp(resolve_config(common));
         const auto merged = exp.merged_train();
         const auto prompts = derive_prompt_examples(merged);
         const auto sentences = derive_sentence_level_examples(merged);
         if (!output.empty()) {
           std::string tsv = "sentence_index\taspect\tprompt\tlabel\n";
           for (const auto& p : prompts.examples) {
             tsv += std::to_string(p.sentence_index) + "\t" + p.aspect + "\t" + p.prompt + "\t" +
                    std::string(to_string(p.label)) + "\n";
           }
           write_file_atomic(output, tsv);
         }
         print_json({{"sentences", merged.size()},
                     {"aspect_level", prompts.examples.size()},
                     {"sentence_level", sentences.size()},
                     {"conflicts", prompts.conflicts.size()}});
         return 0;
       }},
      {"pretrain",
       [&] {
         auto config = resolve_config(common);
         const auto mode = mode_name.empty() ? config.ablation.scl_mode : scl_choice_from_string(mode_name);
         Experiment exp(config);
         const auto dir = exp.pretrain_stage(mode, flags_seed(config));
         print_json({{"stage", "pretrain"}, {"dir", dir.string()}});
         return 0;
       }},
      {"finetune",
       [&] {
         auto config = resolve_config(common);
         Experiment exp(config);
         const auto dir = exp.finetune_stage(dataset, config.ablation, alpha.value_or(config.finetune.alpha),
                                             beta.value_or(config.finetune.beta), flags_seed(config));
         print_json({{"stage", "finetune"}, {"dir", dir.string()}});
         return 0;
       }},
      {"evaluate",
       [&] {
         if (!checkpoint.empty()) {
           if (input.empty()) throw InvalidArgument("--checkpoint needs --input");
           ModelBundle model = ModelBundle::load(checkpoint);
           const auto task = task_name.empty() ? TaskKind::kASTE : task_from_string(task_name);
           const auto report = evaluate(load_any(input), task, model_predictor(model, task));
           if (!output.empty()) {
             write_file_atomic(fs::path(output) / "report.json", report_to_json(report, true).dump(2) + "\n");
             write_file_atomic(fs::path(output) / "errors.csv", errors_csv(report));
           }
           std::cout << format_table({{input, summarize(report)}});
           return 0;
         }
         if (dataset.empty()) throw InvalidArgument("evaluate needs --dataset or --checkpoint");
         auto config = resolve_config(common);
         Experiment exp(config);
         const auto scores =
             exp.evaluate_stage(dataset, config.ablation, alpha.value_or(config.finetune.alpha),
                                beta.value_or(config.finetune.beta), flags_seed(config), split_from_string(split_name));
         std::cout << format_table({{dataset + "/" + split_name, scores}});
         return 0;
       }},
      {"predict",
       [&] {
         ModelBundle model = ModelBundle::load(checkpoint);
         const auto config = resolve_config(common);
         std::string lines;
         for (const auto& words : read_sentences(input)) {
           const auto p = predict(model, words, config.task, config.finetune.decoding, log_disagreement);
           lines += prediction_to_json(p).dump() + "\n";
         }
         if (output.empty()) {
           std::cout << lines;
         } else {
           write_file_atomic(output, lines);
         }
         return 0;
       }},
      {"sweep",
       [&] {
         auto config = resolve_config(common);
         Experiment exp(config);
         const auto s = flags_seed(config);
         const auto dir = config.output_dir / "sweep" / dataset;
         const auto result = two_stage_sweep(
             config.sweep_grid, config.sweep_initial_beta,
             [&](double a, double b) { return exp.evaluate_stage(dataset, config.ablation, a, b, s, Split::kDev).f1; },
             dir / "sweep.csv");
         const nlohmann::json best = {{"alpha", result.alpha}, {"beta", result.beta}, {"dev_f1", result.dev_f1}};
         write_file_atomic(dir / "best.json", best.dump(2) + "\n");
         print_json(best);
         return 0;
       }},
      {"export-embeddings",
       [&] {
         ModelBundle model = ModelBundle::load(checkpoint);
         const auto tokens = special_tokens(TaskKind::kASTE);
         model.add_special_tokens(tokens);
         const auto sentences = load_any(input);
         const auto prompts = derive_prompt_examples(sentences);
         std::vector<EmbeddingRow> rows;
         std::map<std::size_t, int> seen;
         for (const auto& p : prompts.examples) {
           const int k = seen[p.sentence_index]++;
           rows.push_back({"s" + std::to_string(p.sentence_index) + "-a" + std::to_string(k), p.label,
                           extract_mask_embedding(model, sentences[p.sentence_index].tokens, p.prompt)});
         }
         const auto tsv = embeddings_to_tsv(rows);
         if (output.empty()) {
           std::cout << tsv;
         } else {
           write_file_atomic(output, tsv);
         }
         if (silhouette && !rows.empty()) {
           ag::Matrix points(static_cast<Eigen::Index>(rows.size()), rows.front().vector.size());
           std::vector<int> labels;
           for (std::size_t i = 0; i < rows.size(); ++i) {
             points.row(static_cast<Eigen::Index>(i)) = rows[i].vector;
             labels.push_back(static_cast<int>(rows[i].label));
           }
           std::cerr << "silhouette " << silhouette_score(points, labels) << "\n";
         }
         return 0;
       }},
      {"run-table4",
       [&] {
         auto config = resolve_config(common);
         Experiment exp(config);
         const auto rows = run_table4(exp, config.finetune.alpha, config.finetune.beta);
         write_file_atomic(config.output_dir / "table4.json", table4_to_json(rows).dump(2) + "\n");
         const auto text = table4_text(rows);
         write_file_atomic(config.output_dir / "table4.txt", text);
         std::cout << text;
         for (const auto& r : rows) {
           if (!r.scores) return 3;
         }
         return 0;
       }},
      {"roundtrip-targets",
       [&] {
         const auto task = task_from_string(task_name);
         std::istringstream in(read_file(input));
         std::string line;
         std::size_t total = 0, changed = 0;
         while (std::getline(in, line)) {
           ++total;
           const auto parsed = parse(line, task);
           const auto rendered = linearize(parsed.tuples, task).text;
           std::cout << rendered << "\n";
           if (rendered != join(split_whitespace(line))) ++changed;
         }
         std::cerr << total << " targets, " << changed << " changed by the round trip\n";
         return changed == 0 ? 0 : 4;
       }},
      {"show-config",
       [&] {
         print_json(resolve_config(common));
         return 0;
       }},
  };

  try {
    return dispatch(app, common, handlers);
  } catch (const Error& e) {
    std::cerr << nlohmann::json{{"error", e.kind()}, {"message", e.what()}}.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "InternalError"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
}
