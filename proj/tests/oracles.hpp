#pragma once

// Independent straight-line reimplementations used to cross-check the
// library: no shared helpers, no vectorization, no dedup containers.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "aspectcl/autograd.hpp"
#include "aspectcl/contrastive.hpp"
#include "aspectcl/metrics.hpp"
#include "aspectcl/types.hpp"

namespace oracle {

using aspectcl::ag::Matrix;

struct SclValue {
  double loss = 0.0;
  int anchors = 0;
};

// Sum over anchors i with a positive of
//   -1/|P(i)| * sum_p log( exp(z_i.z_p/t) / sum_{a != i} exp(z_i.z_a/t) ).
inline SclValue scl(const Matrix& z, const std::vector<int>& labels, double tau, bool normalize) {
  const int n = static_cast<int>(z.rows());
  const int d = static_cast<int>(z.cols());
  std::vector<std::vector<double>> u(n, std::vector<double>(d));
  for (int i = 0; i < n; ++i) {
    double norm = 0.0;
    for (int k = 0; k < d; ++k) norm += z(i, k) * z(i, k);
    norm = normalize ? std::sqrt(norm) : 1.0;
    for (int k = 0; k < d; ++k) u[i][k] = z(i, k) / norm;
  }
  auto dot = [&](int a, int b) {
    double s = 0.0;
    for (int k = 0; k < d; ++k) s += u[a][k] * u[b][k];
    return s / tau;
  };
  SclValue out;
  for (int i = 0; i < n; ++i) {
    int positives = 0;
    for (int p = 0; p < n; ++p) positives += (p != i && labels[p] == labels[i]);
    if (positives == 0) continue;
    double denominator = 0.0;
    for (int a = 0; a < n; ++a) {
      if (a != i) denominator += std::exp(dot(i, a));
    }
    double term = 0.0;
    for (int p = 0; p < n; ++p) {
      if (p != i && labels[p] == labels[i]) term += -std::log(std::exp(dot(i, p)) / denominator);
    }
    out.loss += term / positives;
    ++out.anchors;
  }
  return out;
}

struct SclCase {
  Matrix z;
  std::vector<int> labels;
};

// Size 2..max_rows, dimension 1..max_dim, up to three labels.
inline SclCase random_scl_case(std::mt19937_64& rng, int max_rows = 8, int max_dim = 8) {
  const int n = std::uniform_int_distribution<int>(2, max_rows)(rng);
  const int d = std::uniform_int_distribution<int>(1, max_dim)(rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, 2);
  SclCase c{Matrix(n, d), {}};
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < d; ++k) c.z(i, k) = normal(rng);
    c.labels.push_back(label(rng));
  }
  return c;
}

inline double relative_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale < 1e-7 ? std::abs(a - b) : std::abs(a - b) / scale;
}

// Central differences of the library loss.
inline Matrix scl_fd_gradient(const SclCase& c, double tau, bool normalize, double h = 1e-6) {
  Matrix g(c.z.rows(), c.z.cols());
  for (Eigen::Index i = 0; i < c.z.rows(); ++i) {
    for (Eigen::Index k = 0; k < c.z.cols(); ++k) {
      auto plus = c.z, minus = c.z;
      plus(i, k) += h;
      minus(i, k) -= h;
      g(i, k) = (aspectcl::scl_loss({plus, c.labels}, tau, normalize).loss -
                 aspectcl::scl_loss({minus, c.labels}, tau, normalize).loss) /
                (2.0 * h);
    }
  }
  return g;
}

// ---- metrics -------------------------------------------------------------

inline bool same_tuple(const aspectcl::Tuple& a, const aspectcl::Tuple& b) {
  return a.category == b.category && a.aspect == b.aspect && a.opinion == b.opinion && a.sentiment == b.sentiment;
}

inline std::vector<aspectcl::Tuple> distinct(const std::vector<aspectcl::Tuple>& v) {
  std::vector<aspectcl::Tuple> out;
  for (const auto& t : v) {
    bool seen = false;
    for (const auto& o : out) seen = seen || same_tuple(t, o);
    if (!seen) out.push_back(t);
  }
  return out;
}

inline std::vector<std::string> distinct_strings(const std::vector<aspectcl::Tuple>& v, bool aspect) {
  std::vector<std::string> out;
  for (const auto& t : v) {
    const std::string& s = aspect ? t.aspect : t.opinion;
    if (s.empty()) continue;
    bool seen = false;
    for (const auto& o : out) seen = seen || o == s;
    if (!seen) out.push_back(s);
  }
  return out;
}

struct Counts {
  std::size_t matched = 0, predicted = 0, gold = 0;
};

inline Counts triplet_counts(const aspectcl::CorpusTuples& preds, const aspectcl::CorpusTuples& golds) {
  Counts c;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const auto p = distinct(preds[s]);
    const auto g = distinct(golds[s]);
    c.predicted += p.size();
    c.gold += g.size();
    for (const auto& a : p) {
      for (const auto& b : g) c.matched += same_tuple(a, b);
    }
  }
  return c;
}

inline Counts element_counts(const aspectcl::CorpusTuples& preds, const aspectcl::CorpusTuples& golds, bool aspect) {
  Counts c;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const auto p = distinct_strings(preds[s], aspect);
    const auto g = distinct_strings(golds[s], aspect);
    c.predicted += p.size();
    c.gold += g.size();
    for (const auto& a : p) {
      for (const auto& b : g) c.matched += a == b;
    }
  }
  return c;
}

inline double f1_of(const Counts& c) {
  const double p = c.predicted ? static_cast<double>(c.matched) / static_cast<double>(c.predicted) : 0.0;
  const double r = c.gold ? static_cast<double>(c.matched) / static_cast<double>(c.gold) : 0.0;
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

// Accuracy over distinct predictions whose category, aspect and opinion equal
// some gold tuple; correct when that gold tuple's sentiment agrees.
inline std::pair<std::size_t, std::size_t> sentiment_pairs(const aspectcl::CorpusTuples& preds,
                                                           const aspectcl::CorpusTuples& golds) {
  std::size_t pairs = 0, correct = 0;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const auto g = distinct(golds[s]);
    for (const auto& a : distinct(preds[s])) {
      bool paired = false, right = false;
      for (const auto& b : g) {
        if (a.category == b.category && a.aspect == b.aspect && a.opinion == b.opinion) {
          paired = true;
          right = right || a.sentiment == b.sentiment;
        }
      }
      pairs += paired;
      correct += right;
    }
  }
  return {pairs, correct};
}

// Small corpora over a narrow vocabulary, so matches and near misses are common.
inline std::pair<aspectcl::CorpusTuples, aspectcl::CorpusTuples> random_corpus(std::mt19937_64& rng) {
  static const std::vector<std::string> aspects{"food", "wine list", "staff", "battery"};
  static const std::vector<std::string> opinions{"good", "not great", "slow"};
  static const std::vector<std::string> categories{"food quality", "service general"};
  const bool with_category = std::bernoulli_distribution(0.3)(rng);
  auto pick = [&](const std::vector<std::string>& v) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
  };
  auto tuple = [&] {
    aspectcl::Tuple t;
    if (with_category) t.category = pick(categories);
    t.aspect = pick(aspects);
    t.opinion = std::bernoulli_distribution(0.1)(rng) ? "" : pick(opinions);
    t.sentiment = static_cast<aspectcl::Sentiment>(std::uniform_int_distribution<int>(0, 2)(rng));
    return t;
  };
  const int sentences = std::uniform_int_distribution<int>(1, 5)(rng);
  aspectcl::CorpusTuples preds, golds;
  for (int s = 0; s < sentences; ++s) {
    std::vector<aspectcl::Tuple> p, g;
    for (int k = std::uniform_int_distribution<int>(0, 4)(rng); k > 0; --k) g.push_back(tuple());
    for (int k = std::uniform_int_distribution<int>(0, 4)(rng); k > 0; --k) {
      // Half the predictions copy a gold tuple, sometimes with a flipped sentiment.
      if (!g.empty() && std::bernoulli_distribution(0.5)(rng)) {
        auto t = g[std::uniform_int_distribution<std::size_t>(0, g.size() - 1)(rng)];
        if (std::bernoulli_distribution(0.3)(rng)) {
          t.sentiment = static_cast<aspectcl::Sentiment>((static_cast<int>(t.sentiment) + 1) % 3);
        }
        p.push_back(t);
      } else {
        p.push_back(tuple());
      }
    }
    preds.push_back(p);
    golds.push_back(g);
  }
  return {preds, golds};
}

// True when the library scores equal the enumeration oracle exactly.
inline bool metrics_agree(const aspectcl::CorpusTuples& preds, const aspectcl::CorpusTuples& golds) {
  bool ok = true;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const auto lib = aspectcl::exact_match_prf(preds[s], golds[s]);
    const auto c = triplet_counts({preds[s]}, {golds[s]});
    ok = ok && lib.matched == c.matched && lib.predicted == c.predicted && lib.gold == c.gold && lib.f1 == f1_of(c);
  }
  const auto corpus = aspectcl::corpus_prf(preds, golds);
  const auto c = triplet_counts(preds, golds);
  ok = ok && corpus.matched == c.matched && corpus.predicted == c.predicted && corpus.gold == c.gold &&
       corpus.f1 == f1_of(c);
  ok = ok && aspectcl::element_f1(preds, golds, aspectcl::Element::kAspect) == f1_of(element_counts(preds, golds, true));
  ok = ok &&
       aspectcl::element_f1(preds, golds, aspectcl::Element::kOpinion) == f1_of(element_counts(preds, golds, false));
  const auto [pairs, correct] = sentiment_pairs(preds, golds);
  const auto acc = aspectcl::sentiment_accuracy(preds, golds);
  const double expected = pairs ? static_cast<double>(correct) / static_cast<double>(pairs) : 0.0;
  ok = ok && acc.pairs == pairs && acc.correct == correct && acc.accuracy == expected && acc.undefined == (pairs == 0);
  return ok;
}

}  // namespace oracle
