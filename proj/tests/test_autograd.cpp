#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "aspectcl/autograd.hpp"
#include "aspectcl/multitask.hpp"
#include "support.hpp"

using namespace aspectcl;
using ag::Matrix;
using ag::Var;

namespace {

using Op = std::function<Var(const std::vector<Var>&)>;

Matrix random_matrix(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Reduces any output to a scalar through fixed random projections:
// (a^T y b)^2.
struct Probe {
  Matrix a, b;
  Var apply(const Var& y) const {
    return ag::squared_error(ag::matmul(ag::matmul(Var(a), y), Var(b)), 0.0);
  }
};

// Largest relative disagreement between backprop and central differences.
double gradient_error(const std::vector<Matrix>& inputs, const Op& op, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::vector<Var> vars;
  for (const auto& m : inputs) vars.emplace_back(m, true);
  const Var out = op(vars);
  const Probe probe{random_matrix(rng, 1, static_cast<int>(out.rows())),
                    random_matrix(rng, static_cast<int>(out.cols()), 1)};
  ag::backward(probe.apply(out));

  auto value_at = [&](const std::vector<Matrix>& values) {
    ag::NoGradGuard guard;
    std::vector<Var> v;
    for (const auto& m : values) v.emplace_back(m);
    return probe.apply(op(v)).item();
  };
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Matrix& grad = vars[k].grad();
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      auto plus = inputs, minus = inputs;
      plus[k].data()[i] += h;
      minus[k].data()[i] -= h;
      const double fd = (value_at(plus) - value_at(minus)) / (2.0 * h);
      const double an = grad.size() ? grad.data()[i] : 0.0;
      const double err = std::abs(fd - an) / std::max(1e-4, std::abs(fd) + std::abs(an));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace

TEST_SUITE("autograd") {
  TEST_CASE("elementwise and matrix ops") {
    std::mt19937_64 rng(2);
    const auto a = random_matrix(rng, 3, 4), b = random_matrix(rng, 4, 2), c = random_matrix(rng, 3, 4);
    const auto row = random_matrix(rng, 1, 4);
    CHECK(gradient_error({a, b}, [](const auto& v) { return ag::matmul(v[0], v[1]); }) < 1e-6);
    CHECK(gradient_error({a, c}, [](const auto& v) { return ag::add(v[0], v[1]); }) < 1e-6);
    CHECK(gradient_error({a, row}, [](const auto& v) { return ag::add_row(v[0], v[1]); }) < 1e-6);
    CHECK(gradient_error({a}, [](const auto& v) { return ag::scale(v[0], -1.7); }) < 1e-6);
    CHECK(gradient_error({a}, [](const auto& v) { return ag::relu(v[0]); }) < 1e-6);
    CHECK(gradient_error({a}, [](const auto& v) { return ag::mean_rows(v[0]); }) < 1e-6);
    CHECK(gradient_error({a}, [](const auto& v) { return ag::slice_rows(v[0], 1, 2); }) < 1e-6);
    CHECK(gradient_error({a, c}, [](const auto& v) { return ag::concat_rows(std::vector<Var>{v[0], v[1], v[0]}); }) <
          1e-6);
  }

  TEST_CASE("rms norm and gather") {
    std::mt19937_64 rng(3);
    const auto x = random_matrix(rng, 3, 5), gain = random_matrix(rng, 1, 5), table = random_matrix(rng, 6, 3);
    CHECK(gradient_error({x, gain}, [](const auto& v) { return ag::rms_norm(v[0], v[1]); }) < 1e-6);
    const std::vector<int> ids{4, 0, 4, 2};
    CHECK(gradient_error({table}, [&](const auto& v) { return ag::gather_rows(v[0], ids); }) < 1e-6);
  }

  TEST_CASE("attention, plain and causal") {
    std::mt19937_64 rng(4);
    const auto q = random_matrix(rng, 3, 4), k = random_matrix(rng, 5, 4), v = random_matrix(rng, 5, 4);
    CHECK(gradient_error({q, k, v}, [](const auto& x) { return ag::attention(x[0], x[1], x[2], 2, false); }) < 1e-6);
    const auto s = random_matrix(rng, 4, 6);
    CHECK(gradient_error({s}, [](const auto& x) { return ag::attention(x[0], x[0], x[0], 3, true); }) < 1e-6);
  }

  TEST_CASE("causal attention ignores later positions") {
    std::mt19937_64 rng(5);
    const auto x = random_matrix(rng, 4, 4);
    auto y = x;
    y.row(3) = random_matrix(rng, 1, 4);
    const auto ax = ag::attention(Var(x), Var(x), Var(x), 2, true).value();
    const auto ay = ag::attention(Var(y), Var(y), Var(y), 2, true).value();
    CHECK((ax.topRows(3) - ay.topRows(3)).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("cross entropy with ignored rows") {
    std::mt19937_64 rng(6);
    const auto logits = random_matrix(rng, 4, 5);
    const std::vector<int> targets{1, -1, 4, 0};
    for (auto red : {ag::Reduction::kSum, ag::Reduction::kMean}) {
      const double err = gradient_error({logits}, [&](const auto& v) {
        return ag::matmul(ag::cross_entropy(v[0], targets, red), Var(Matrix::Ones(1, 1)));
      });
      CHECK(err < 1e-6);
    }
    // Straight-line oracle.
    double expected = 0.0;
    for (int r : {0, 2, 3}) {
      const auto row = logits.row(r);
      expected += std::log(row.array().exp().sum()) - row(targets[static_cast<std::size_t>(r)]);
    }
    CHECK(ag::cross_entropy(Var(logits), targets, ag::Reduction::kSum).item() == doctest::Approx(expected).epsilon(1e-12));
    CHECK(ag::cross_entropy(Var(logits), targets, ag::Reduction::kMean).item() ==
          doctest::Approx(expected / 3).epsilon(1e-12));
  }

  TEST_CASE("dropout keeps expectation and replays under a fixed seed") {
    std::mt19937_64 rng(7);
    const auto x = random_matrix(rng, 3, 4);
    CHECK(gradient_error({x}, [](const auto& v) {
            std::mt19937_64 g(99);
            return ag::dropout(v[0], 0.5, g);
          }) < 1e-6);
    std::mt19937_64 g(1);
    const auto big = Matrix::Ones(200, 50);
    CHECK(ag::dropout(Var(big), 0.3, g).value().mean() == doctest::Approx(1.0).epsilon(0.05));
    CHECK(ag::dropout(Var(big), 0.0, g).value() == big);
  }

  TEST_CASE("gradients accumulate across backward calls and NoGradGuard records nothing") {
    Var w(Matrix::Constant(1, 1, 2.0), true);
    ag::backward(ag::squared_error(w, 0.0));
    ag::backward(ag::squared_error(w, 0.0));
    CHECK(w.grad()(0, 0) == doctest::Approx(8.0));
    ag::NoGradGuard guard;
    CHECK_FALSE(ag::grad_enabled());
    const Var y = ag::scale(w, 3.0);
    CHECK_FALSE(y.requires_grad());
  }

  TEST_CASE("whole-model gradient check on a tiny seeded model") {
    const auto sentences = testing::load("samples.txt");
    auto model = testing::tiny_model(sentences, 5);
    const auto tokens = target_tokens(TaskKind::kASTE);
    model.add_special_tokens(tokens);
    auto ex = make_training_example(model.vocab(), sentences[2], FinetuneConfig{});
    REQUIRE(ex.has_value());
    auto loss_value = [&] {
      ag::NoGradGuard guard;
      auto l = component_losses(model, *ex);
      return joint_loss(l.ed, l.otd, l.tce, 0.7, 0.3).item();
    };
    model.zero_grad();
    auto l = component_losses(model, *ex);
    ag::backward(joint_loss(l.ed, l.otd, l.tce, 0.7, 0.3));

    std::mt19937_64 rng(8);
    double worst = 0.0;
    int checked = 0;
    for (auto& p : model.parameters()) {
      const Matrix grad = p.var->grad().size() ? p.var->grad() : Matrix::Zero(p.var->rows(), p.var->cols());
      for (int trial = 0; trial < 3; ++trial) {
        const auto i = std::uniform_int_distribution<Eigen::Index>(0, p.var->value().size() - 1)(rng);
        double& w = p.var->mutable_value().data()[i];
        const double saved = w, h = 1e-5;
        w = saved + h;
        const double up = loss_value();
        w = saved - h;
        const double down = loss_value();
        w = saved;
        const double fd = (up - down) / (2 * h);
        const double an = grad.data()[i];
        worst = std::max(worst, std::abs(fd - an) / std::max(1e-4, std::abs(fd) + std::abs(an)));
        ++checked;
      }
    }
    CHECK(checked > 40);
    CHECK(worst < 1e-4);
  }
}
