#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "aspectcl/errors.hpp"
#include "aspectcl/experiment.hpp"
#include "support.hpp"

using namespace aspectcl;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Peak at (0.6, 0.2); a separable bowl, so the two-stage search is exact.
double bowl(double alpha, double beta) { return 1.0 - (alpha - 0.6) * (alpha - 0.6) - (beta - 0.2) * (beta - 0.2); }

ExperimentConfig toy_config(const fs::path& out, const fs::path& train) {
  ExperimentConfig c;
  c.datasets.push_back({"toy", Domain::kRestaurant, train, train, train});
  c.model = testing::tiny_config();
  c.contrastive.learning_rate = 3e-3;
  c.contrastive.epochs = 1;
  c.contrastive.batch_size = 4;
  c.finetune.learning_rate = 3e-3;
  c.finetune.epochs = 2;
  c.finetune.batch_size = 4;
  c.finetune.decoding.max_length = 24;
  c.seeds = {1};
  c.output_dir = out;
  return c;
}

}  // namespace

TEST_SUITE("experiment") {
  TEST_CASE("ablation rows") {
    std::vector<std::string> tags;
    for (const auto& r : ablation_rows()) {
      tags.push_back(r.tag());
      CHECK(r.use_contrastive_init == (r.scl_mode != SclChoice::kNone));
    }
    CHECK(tags == std::vector<std::string>{"000", "100", "011", "101", "110", "111"});
    AblationFlags sentence{true, true, true, SclChoice::kSentenceLevel};
    CHECK(sentence.tag() == "111-sentence");
  }

  TEST_CASE("config JSON and file round trip") {
    auto c = desk_profile();
    c.datasets.push_back({"res", Domain::kRestaurant, "a/train.txt", "a/dev.txt", "a/test.txt"});
    c.datasets.push_back({"lap", Domain::kLaptop, "b/train.txt", "", ""});
    c.task = TaskKind::kACOS;
    c.ablation = {false, true, false, SclChoice::kNone};
    c.finetune.stop_at_dev_f1 = 1.0;
    CHECK(nlohmann::json(c).get<ExperimentConfig>() == c);

    const auto dir = testing::scratch_dir("config");
    std::ofstream(dir / "c.json") << nlohmann::json(c).dump(2);
    CHECK(load_experiment_config(dir / "c.json") == c);
    std::ofstream(dir / "bad.json") << "{ not json";
    CHECK_THROWS_AS(load_experiment_config(dir / "bad.json"), InvalidConfig);
    CHECK_THROWS_AS(load_experiment_config(dir / "absent.json"), IOFailure);
  }

  TEST_CASE("validation") {
    auto c = desk_profile();
    CHECK_NOTHROW(c.validate());
    c.ablation.scl_mode = SclChoice::kNone;
    CHECK_THROWS_AS(c.validate(), InvalidConfig);
    c = desk_profile();
    c.seeds.clear();
    CHECK_THROWS_AS(c.validate(), InvalidConfig);
    c = desk_profile();
    c.finetune.beta = -0.1;
    CHECK_THROWS_AS(c.validate(), InvalidConfig);
    c = desk_profile();
    c.datasets = {{"x", Domain::kLaptop, "a", "", ""}, {"x", Domain::kLaptop, "b", "", ""}};
    CHECK_THROWS_AS(c.validate(), InvalidConfig);
    CHECK_THROWS_AS(desk_profile().dataset("missing"), InvalidArgument);
  }

  TEST_CASE("desk profile stays small") {
    const auto c = desk_profile();
    CHECK(c.model.d_model <= 64);
    CHECK(c.contrastive.epochs >= 10);
    CHECK(c.finetune.alpha == 0.2);
    CHECK(c.finetune.beta == 0.6);
  }

  TEST_CASE("overrides") {
    nlohmann::json doc = desk_profile();
    apply_override(doc, "finetune.alpha=0.8");
    apply_override(doc, "contrastive.mode=sentence_level");
    apply_override(doc, "seeds=[7,8]");
    apply_override(doc, "extra.nested.key=true");
    CHECK(doc["finetune"]["alpha"] == 0.8);
    CHECK(doc["contrastive"]["mode"] == "sentence_level");
    CHECK(doc["extra"]["nested"]["key"] == true);
    const auto c = doc.get<ExperimentConfig>();
    CHECK(c.finetune.alpha == 0.8);
    CHECK(c.contrastive.mode == SclMode::kSentenceLevel);
    CHECK(c.seeds == std::vector<std::uint64_t>{7, 8});
    CHECK_THROWS_AS(apply_override(doc, "no_equals_sign"), InvalidArgument);
    CHECK_THROWS_AS(apply_override(doc, "a..b=1"), InvalidArgument);
    CHECK_THROWS_AS(apply_override(doc, "seeds.x=1"), InvalidArgument);
  }

  TEST_CASE("two-stage sweep recovers the optimum and writes its CSV") {
    const std::vector<double> grid{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    const auto dir = testing::scratch_dir("sweep");
    const auto r = two_stage_sweep(grid, 0.4, bowl, dir / "a.csv");
    CHECK(r.alpha == 0.6);
    CHECK(r.beta == 0.2);
    CHECK(r.dev_f1 == bowl(0.6, 0.2));
    REQUIRE(r.rows.size() == 12);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(r.rows[i].stage == 1);
      CHECK(r.rows[i].beta == 0.4);
      CHECK(r.rows[i + 6].stage == 2);
      CHECK(r.rows[i + 6].alpha == 0.6);
    }
    const auto csv = slurp(dir / "a.csv");
    CHECK(csv.rfind("stage,alpha,beta,dev_f1\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);
    two_stage_sweep(grid, 0.4, bowl, dir / "b.csv");
    CHECK(slurp(dir / "b.csv") == csv);
  }

  TEST_CASE("sweep edge cases") {
    const auto single = two_stage_sweep({0.3}, 0.3, bowl);
    CHECK(single.alpha == 0.3);
    CHECK(single.beta == 0.3);
    CHECK(single.rows.size() == 2);
    // A flat objective keeps the first grid point.
    const auto flat = two_stage_sweep({0.0, 0.5, 1.0}, 0.5, [](double, double) { return 0.25; });
    CHECK(flat.alpha == 0.0);
    CHECK(flat.beta == 0.0);
    CHECK_THROWS_AS(two_stage_sweep({}, 0.4, bowl), InvalidArgument);

    // A failing cell leaves the finished rows on disk.
    const auto dir = testing::scratch_dir("sweep-fail");
    int calls = 0;
    CHECK_THROWS(two_stage_sweep({0.0, 0.5, 1.0}, 0.5,
                                 [&](double a, double b) {
                                   if (++calls == 3) throw NonFiniteLoss("boom", 1, 0);
                                   return a + b;
                                 },
                                 dir / "s.csv"));
    const auto csv = slurp(dir / "s.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  }

  TEST_CASE("stages are skipped when their inputs are unchanged") {
    const auto dir = testing::scratch_dir("stage");
    int runs = 0;
    auto body = [&](const fs::path& out) {
      ++runs;
      std::ofstream(out / "result.txt") << runs;
    };
    CHECK_FALSE(run_stage(dir / "s", "demo", "hash-1", body).skipped);
    CHECK(run_stage(dir / "s", "demo", "hash-1", body).skipped);
    CHECK(runs == 1);
    CHECK_FALSE(run_stage(dir / "s", "demo", "hash-2", body).skipped);
    CHECK(runs == 2);
    // An interrupted stage has no manifest and runs again.
    CHECK_THROWS(run_stage(dir / "t", "demo", "h", [](const fs::path&) { throw IOFailure("disk full"); }));
    CHECK_FALSE(stage_complete(dir / "t", "h"));
  }

  TEST_CASE("toy ablation grid: six rows, failures isolated, reruns skip") {
    const auto dir = testing::scratch_dir("table4");
    setenv("ASPECTCL_CACHE_DIR", (dir / "cache").c_str(), 1);
    Experiment e(toy_config(dir / "runs", testing::fixture("desk/overfit8.txt")));
    const auto rows = run_table4(e, 0.2, 0.6);
    REQUIRE(rows.size() == 6);
    for (const auto& r : rows) CHECK(r.scores.has_value());
    CHECK(table4_to_json(rows).size() == 6);
    const auto text = table4_text(rows);
    CHECK(std::count(text.begin(), text.end(), '\n') == 7);
    CHECK(fs::exists(dir / "runs" / "finetune" / "toy" / "111" / "a0.2-b0.6" / "seed-1" / "eval-test" / "report.json"));
    // Rows without OTD / TCE train with the weight zeroed.
    CHECK(fs::exists(dir / "runs" / "finetune" / "toy" / "100" / "a0-b0" / "seed-1"));
    CHECK(fs::exists(dir / "cache" / "backbones"));

    const auto before = fs::last_write_time(dir / "runs" / "finetune" / "toy" / "111" / "a0.2-b0.6" / "seed-1" /
                                            "checkpoint" / "weights.bin");
    Experiment again(toy_config(dir / "runs", testing::fixture("desk/overfit8.txt")));
    const auto rerun = run_table4(again, 0.2, 0.6);
    for (std::size_t i = 0; i < 6; ++i) CHECK(rerun[i].scores == rows[i].scores);
    CHECK(fs::last_write_time(dir / "runs" / "finetune" / "toy" / "111" / "a0.2-b0.6" / "seed-1" / "checkpoint" /
                              "weights.bin") == before);

    // Every aspect of this corpus has conflicting labels, so contrastive rows
    // fail while the others still finish.
    std::ofstream(dir / "conflict.txt") << "The food was good but cold .####[([1], [3], 'POS'), ([1], [5], 'NEG')]\n";
    Experiment broken(toy_config(dir / "runs-conflict", dir / "conflict.txt"));
    const auto partial = run_table4(broken, 0.2, 0.6);
    REQUIRE(partial.size() == 6);
    for (const auto& r : partial) {
      CHECK(r.scores.has_value() == !r.flags.use_contrastive_init);
      if (r.flags.use_contrastive_init) CHECK(r.error.find("EmptyCorpus") != std::string::npos);
    }
    unsetenv("ASPECTCL_CACHE_DIR");
  }
}
