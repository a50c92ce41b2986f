#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "aspectcl/contrastive.hpp"
#include "aspectcl/errors.hpp"
#include "aspectcl/templates.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace aspectcl;
using ag::Matrix;

namespace {

ContrastiveConfig quick_config(int epochs) {
  ContrastiveConfig c;
  c.epochs = epochs;
  c.batch_size = 8;
  c.learning_rate = 3e-3;
  c.seed = 9;
  return c;
}

// First `per_class` positive and negative prompts of the restaurant desk split.
std::vector<ContrastiveItem> two_class_items(std::size_t per_class) {
  std::vector<ContrastiveItem> out;
  std::size_t pos = 0, neg = 0;
  for (auto& item : aspect_level_items(testing::load("desk/restaurant_train.txt"))) {
    if (item.label == Sentiment::kPositive && pos < per_class) {
      ++pos;
      out.push_back(item);
    } else if (item.label == Sentiment::kNegative && neg < per_class) {
      ++neg;
      out.push_back(item);
    }
  }
  return out;
}

ModelBundle prepared_model(std::uint64_t seed = 3) {
  auto model = testing::tiny_model(testing::load("desk/restaurant_train.txt"), seed);
  const auto tokens = special_tokens(TaskKind::kASTE);
  model.add_special_tokens(tokens);
  return model;
}

}  // namespace

TEST_SUITE("contrastive") {
  TEST_CASE("hand-computed two-pair batch") {
    // Orthogonal classes, identical positives: s(i,p) = 1/t, s(i,n) = 0.
    Matrix z(4, 2);
    z << 1, 0, 2, 0, 0, 1, 0, 3;
    const double tau = 0.5;
    const auto r = scl_loss({z, {0, 0, 1, 1}}, tau);
    const double per_anchor = std::log(std::exp(2.0) + 2.0) - 2.0;
    CHECK(r.loss == doctest::Approx(4 * per_anchor).epsilon(1e-12));
    CHECK(r.mean_loss == doctest::Approx(per_anchor).epsilon(1e-12));
    CHECK(r.anchors == 4);
    CHECK_FALSE(r.degenerate);
  }

  TEST_CASE("matches the brute-force oracle") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 100; ++trial) {
      const auto c = oracle::random_scl_case(rng);
      for (bool normalize : {true, false}) {
        const double tau = normalize ? 0.07 : 0.5;
        const auto lib = scl_loss({c.z, c.labels}, tau, normalize);
        const auto ref = oracle::scl(c.z, c.labels, tau, normalize);
        CHECK(oracle::relative_error(lib.loss, ref.loss) < 1e-9);
        CHECK(static_cast<int>(lib.anchors) == ref.anchors);
      }
    }
  }

  TEST_CASE("analytic gradient matches central differences") {
    std::mt19937_64 rng(22);
    for (int trial = 0; trial < 40; ++trial) {
      const auto c = oracle::random_scl_case(rng);
      for (bool normalize : {true, false}) {
        const double tau = normalize ? 0.07 : 1.0;
        const auto lib = scl_loss({c.z, c.labels}, tau, normalize);
        const auto fd = oracle::scl_fd_gradient(c, tau, normalize);
        double worst = 0.0;
        for (Eigen::Index i = 0; i < fd.size(); ++i) {
          worst = std::max(worst, oracle::relative_error(lib.grad.data()[i], fd.data()[i]));
        }
        CHECK(worst < 1e-4);
      }
    }
  }

  TEST_CASE("non-negative, permutation and rescaling invariant") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 200; ++trial) {
      auto c = oracle::random_scl_case(rng);
      const auto base = scl_loss({c.z, c.labels}, 0.07);
      CHECK(base.loss >= 0.0);
      CHECK(scl_loss({c.z, c.labels}, 0.3, false).loss >= 0.0);

      std::vector<int> order(static_cast<std::size_t>(c.z.rows()));
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      Matrix permuted(c.z.rows(), c.z.cols());
      std::vector<int> labels;
      for (std::size_t i = 0; i < order.size(); ++i) {
        permuted.row(static_cast<Eigen::Index>(i)) = c.z.row(order[i]);
        labels.push_back(c.labels[static_cast<std::size_t>(order[i])]);
      }
      CHECK(oracle::relative_error(scl_loss({permuted, labels}, 0.07).loss, base.loss) < 1e-6);

      Matrix scaled = c.z;
      for (Eigen::Index i = 0; i < scaled.rows(); ++i) {
        scaled.row(i) *= std::uniform_real_distribution<double>(0.01, 100.0)(rng);
      }
      CHECK(oracle::relative_error(scl_loss({scaled, c.labels}, 0.07).loss, base.loss) < 1e-6);
    }
  }

  TEST_CASE("anchors without positives are excluded") {
    std::mt19937_64 rng(24);
    for (int trial = 0; trial < 200; ++trial) {
      auto c = oracle::random_scl_case(rng, 7);
      // A row with a label nobody else carries.
      c.z.conservativeResize(c.z.rows() + 1, Eigen::NoChange);
      std::normal_distribution<double> normal(0.0, 1.0);
      for (Eigen::Index k = 0; k < c.z.cols(); ++k) c.z(c.z.rows() - 1, k) = normal(rng);
      c.labels.push_back(99);
      std::map<int, int> sizes;
      for (int l : c.labels) ++sizes[l];
      std::size_t singletons = 0;
      for (int l : c.labels) singletons += sizes[l] == 1;

      const auto r = scl_loss({c.z, c.labels}, 0.1);
      CHECK(r.skipped_anchors == singletons);
      CHECK(r.anchors + r.skipped_anchors == c.labels.size());
      CHECK(oracle::relative_error(r.loss, oracle::scl(c.z, c.labels, 0.1, true).loss) < 1e-9);
      CHECK(r.degenerate == (r.anchors == 0));
    }
    const auto all_distinct = scl_loss({Matrix::Identity(3, 3), {0, 1, 2}}, 0.1);
    CHECK(all_distinct.degenerate);
    CHECK(all_distinct.loss == 0.0);
    CHECK(all_distinct.grad.isZero());
  }

  TEST_CASE("loss falls with temperature on a separable batch") {
    Matrix z(4, 2);
    z << 1, 0.1, 1, -0.1, -1, 0.1, -1, -0.1;
    const std::vector<int> labels{0, 0, 1, 1};
    const double l1 = scl_loss({z, labels}, 1.0).loss;
    const double l2 = scl_loss({z, labels}, 0.1).loss;
    const double l3 = scl_loss({z, labels}, 0.01).loss;
    CHECK(l1 > l2);
    CHECK(l2 > l3);
    CHECK(l3 < 1e-6);
  }

  TEST_CASE("rejects malformed batches") {
    CHECK_THROWS_AS(scl_loss({Matrix::Ones(1, 2), {0}}, 0.1), InvalidArgument);
    CHECK_THROWS_AS(scl_loss({Matrix::Ones(2, 2), {0}}, 0.1), InvalidArgument);
    CHECK_THROWS_AS(scl_loss({Matrix::Ones(2, 2), {0, 0}}, 0.0), InvalidArgument);
    Matrix bad = Matrix::Ones(2, 2);
    bad(0, 1) = std::nan("");
    CHECK_THROWS_AS(scl_loss({bad, {0, 0}}, 0.1), InvalidArgument);
  }

  TEST_CASE("label-aware sampler") {
    std::vector<int> labels;
    for (int i = 0; i < 30; ++i) labels.push_back(i % 3);
    std::mt19937_64 a(5), b(5);
    const auto batches = label_aware_batches(labels, 8, a);
    CHECK(batches == label_aware_batches(labels, 8, b));
    std::set<std::size_t> seen;
    for (const auto& batch : batches) {
      CHECK(batch.size() >= 2);
      CHECK(batch.size() <= 8);
      for (auto i : batch) CHECK(seen.insert(i).second);
    }
    CHECK(seen.size() == labels.size());
    // Every label count is even, so same-label pairs give every anchor a positive.
    for (const auto& batch : batches) {
      for (auto i : batch) {
        CHECK(std::count_if(batch.begin(), batch.end(), [&](auto j) { return labels[j] == labels[i]; }) >= 2);
      }
    }
    std::mt19937_64 c(5);
    CHECK(label_aware_batches({0}, 4, c).empty());
    CHECK_THROWS_AS(label_aware_batches(labels, 1, c), InvalidArgument);
  }

  TEST_CASE("silhouette against a hand computation") {
    Matrix p(4, 1);
    p << 0, 1, 10, 11;
    const double expected = (9.5 / 10.5 + 8.5 / 9.5) / 2.0;
    CHECK(silhouette_score(p, {0, 0, 1, 1}) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(silhouette_score(p, {0, 0, 0, 0}) == 0.0);
    Matrix q(5, 1);
    q << 0, 1, 10, 11, 5;
    // The singleton scores 0 and pulls the nearest-cluster distances to 5.
    const double with_singleton = (4.0 / 5.0 + 3.0 / 4.0 + 4.0 / 5.0 + 5.0 / 6.0 + 0.0) / 5.0;
    CHECK(silhouette_score(q, {0, 0, 1, 1, 2}) == doctest::Approx(with_singleton).epsilon(1e-12));
  }

  TEST_CASE("mask embedding") {
    auto model = prepared_model();
    const auto sentence = testing::load("samples.txt")[0].tokens;
    CHECK_THROWS_AS(mask_embedding(model, sentence, "<aspect> food <sentiment>"), NoMaskToken);
    CHECK_THROWS_AS(mask_embedding(model, sentence, "[MASK] <aspect> food [MASK]"), MultipleMaskTokens);
    const auto e = extract_mask_embedding(model, sentence, "<aspect> food <sentiment> [MASK]");
    CHECK(e.size() == model.config().d_model);
    // The decoder is causal: words after the mask cannot change its state.
    CHECK(e == extract_mask_embedding(model, sentence, "<aspect> food <sentiment> [MASK] trailing words"));
    CHECK(e != extract_mask_embedding(model, sentence, "<aspect> waiter <sentiment> [MASK]"));
    auto bare = testing::tiny_model(testing::load("samples.txt"));
    CHECK_THROWS_AS(mask_embedding(bare, sentence, "<aspect> food <sentiment> [MASK]"), InvalidArgument);
  }

  TEST_CASE("items of both granularities") {
    const auto sentences = testing::load("samples.txt");
    const auto aspect = aspect_level_items(sentences);
    REQUIRE(aspect.size() == 9);
    CHECK(aspect[4].prompt == "<aspect> ambience <sentiment> [MASK]");
    CHECK(aspect[4].label == Sentiment::kNegative);
    const auto sentence = sentence_level_items(sentences);
    CHECK(sentence.size() == 4);
    CHECK(sentence[3].label == Sentiment::kNegative);
    CHECK(sentence[3].prompt.empty());
  }

  TEST_CASE("an epoch without batches leaves the weights alone") {
    const auto init = prepared_model();
    const auto items = two_class_items(1);
    const auto result = pretrain({items[0]}, quick_config(1), init);
    CHECK(ModelBundle::max_abs_difference(result.model, init) == 0.0);
    REQUIRE(result.trace.size() == 1);
    CHECK(result.trace[0].batches == 0);
    CHECK_THROWS_AS(pretrain({}, quick_config(1), init), EmptyCorpus);
  }

  TEST_CASE("tiny two-class corpus: loss trends down, runs are reproducible") {
    const auto items = two_class_items(10);
    REQUIRE(items.size() == 20);
    const auto dir = testing::scratch_dir("pretrain");
    const auto a = pretrain(items, quick_config(30), prepared_model(), dir);
    CHECK(a.trace.back().mean_loss < a.trace.front().mean_loss);
    const auto b = pretrain(items, quick_config(30), prepared_model());
    CHECK(ModelBundle::max_abs_difference(a.model, b.model) == 0.0);
    CHECK(pretrain_trace_csv(a.trace) == pretrain_trace_csv(b.trace));
    CHECK(std::filesystem::exists(dir / "trace.csv"));
    CHECK(std::filesystem::exists(dir / "config.json"));
    CHECK(ModelBundle::max_abs_difference(ModelBundle::load(dir / "checkpoint"), a.model) == 0.0);
  }

  TEST_CASE("sentence-level mode trains on pooled encoder states") {
    auto config = quick_config(2);
    config.mode = SclMode::kSentenceLevel;
    const auto items = sentence_level_items(testing::load("desk/restaurant_train.txt"));
    const auto init = testing::tiny_model(testing::load("desk/restaurant_train.txt"));
    const auto r = pretrain(items, config, init);
    CHECK(r.trace.size() == 2);
    CHECK(r.model.vocab().size() == init.vocab().size());
    CHECK(ModelBundle::max_abs_difference(r.model, init) > 0.0);
  }

  TEST_CASE("config validation and JSON") {
    auto c = quick_config(3);
    c.mode = SclMode::kSentenceLevel;
    CHECK(nlohmann::json(c).get<ContrastiveConfig>() == c);
    c.temperature = 0.0;
    CHECK_THROWS_AS(c.validate(), InvalidConfig);
    c = quick_config(3);
    c.batch_size = 1;
    CHECK_THROWS_AS(c.validate(), InvalidConfig);
    CHECK_THROWS_AS(scl_mode_from_string("token_level"), InvalidArgument);
  }

  TEST_CASE("embedding dump format") {
    ag::RowVector v(2);
    v << 0.5, -1.0;
    const auto tsv = embeddings_to_tsv({{"s3:food", Sentiment::kNeutral, v}});
    CHECK(tsv.rfind("s3:food\tNEU\t", 0) == 0);
    CHECK(tsv.back() == '\n');
  }
}
