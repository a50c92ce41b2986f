#include "aspectcl/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "aspectcl/errors.hpp"

namespace aspectcl::ag {

namespace {

thread_local bool g_grad_enabled = true;

template <class MakeBackward>
Var record(Matrix value, std::initializer_list<Var> inputs, MakeBackward&& make_backward) {
  Var out(std::move(value));
  if (!g_grad_enabled) return out;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return out;
  Node* self = out.node();
  self->requires_grad = true;
  for (const auto& in : inputs) self->parents.push_back(in.shared());
  self->backward = make_backward(self);
  return out;
}

void check(bool ok, const char* what) {
  if (!ok) throw InvalidArgument(std::string("autograd: ") + what);
}

}  // namespace

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& root, double seed) {
  if (!root.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad().array() += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() > 0) n->backward();
  }
}

Var matmul(const Var& a, const Var& b) {
  check(a.cols() == b.rows(), "matmul shape mismatch");
  return record(a.value() * b.value(), {a, b}, [pa = a.node(), pb = b.node()](Node* self) {
    return [self, pa, pb] {
      if (pa->requires_grad) pa->ensure_grad().noalias() += self->grad * pb->value.transpose();
      if (pb->requires_grad) pb->ensure_grad().noalias() += pa->value.transpose() * self->grad;
    };
  });
}

Var add(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "add shape mismatch");
  return record(a.value() + b.value(), {a, b}, [pa = a.node(), pb = b.node()](Node* self) {
    return [self, pa, pb] {
      if (pa->requires_grad) pa->ensure_grad() += self->grad;
      if (pb->requires_grad) pb->ensure_grad() += self->grad;
    };
  });
}

Var add_row(const Var& a, const Var& row) {
  check(row.rows() == 1 && row.cols() == a.cols(), "add_row shape mismatch");
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return record(std::move(out), {a, row}, [pa = a.node(), pr = row.node()](Node* self) {
    return [self, pa, pr] {
      if (pa->requires_grad) pa->ensure_grad() += self->grad;
      if (pr->requires_grad) pr->ensure_grad() += self->grad.colwise().sum();
    };
  });
}

Var scale(const Var& a, double s) {
  return record(a.value() * s, {a}, [pa = a.node(), s](Node* self) {
    return [self, pa, s] { pa->ensure_grad() += self->grad * s; };
  });
}

Var relu(const Var& a) {
  return record(a.value().cwiseMax(0.0), {a}, [pa = a.node()](Node* self) {
    return [self, pa] {
      pa->ensure_grad() += (pa->value.array() > 0.0).select(self->grad, 0.0);
    };
  });
}

Var rms_norm(const Var& x, const Var& gain, double eps) {
  check(gain.rows() == 1 && gain.cols() == x.cols(), "rms_norm gain shape mismatch");
  const Eigen::Index d = x.cols();
  Eigen::VectorXd inv = ((x.value().array().square().rowwise().sum() / static_cast<double>(d)) + eps).rsqrt();
  Matrix normed = x.value().array().colwise() * inv.array();
  Matrix out = normed.array().rowwise() * gain.value().row(0).array();
  return record(std::move(out), {x, gain},
                [px = x.node(), pg = gain.node(), inv = std::move(inv), normed = std::move(normed), d](Node* self) {
                  return [self, px, pg, inv, normed, d] {
                    if (pg->requires_grad) {
                      pg->ensure_grad() += (self->grad.array() * normed.array()).colwise().sum().matrix();
                    }
                    if (px->requires_grad) {
                      Matrix dn = self->grad.array().rowwise() * pg->value.row(0).array();
                      Eigen::VectorXd proj = (dn.array() * normed.array()).rowwise().sum() / static_cast<double>(d);
                      Matrix dx = (dn.array() - normed.array().colwise() * proj.array()).colwise() * inv.array();
                      px->ensure_grad() += dx;
                    }
                  };
                });
}

Var gather_rows(const Var& table, std::span<const int> ids) {
  Matrix out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    check(ids[i] >= 0 && ids[i] < table.rows(), "gather_rows index out of range");
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return record(std::move(out), {table}, [pt = table.node(), idx = std::move(idx)](Node* self) {
    return [self, pt, idx] {
      Matrix& g = pt->ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self->grad.row(static_cast<Eigen::Index>(i));
    };
  });
}

Var slice_rows(const Var& a, Eigen::Index begin, Eigen::Index count) {
  check(begin >= 0 && count >= 0 && begin + count <= a.rows(), "slice_rows out of range");
  return record(a.value().middleRows(begin, count), {a}, [pa = a.node(), begin, count](Node* self) {
    return [self, pa, begin, count] { pa->ensure_grad().middleRows(begin, count) += self->grad; };
  });
}

Var concat_rows(std::span<const Var> parts) {
  check(!parts.empty(), "concat_rows of nothing");
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    check(p.cols() == parts.front().cols(), "concat_rows column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, parts.front().cols());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  Var result(std::move(out));
  bool needs = false;
  for (const auto& p : parts) needs = needs || p.requires_grad();
  if (!g_grad_enabled || !needs) return result;
  Node* self = result.node();
  self->requires_grad = true;
  std::vector<Node*> inputs;
  for (const auto& p : parts) {
    self->parents.push_back(p.shared());
    inputs.push_back(p.node());
  }
  self->backward = [self, inputs] {
    Eigen::Index offset = 0;
    for (Node* in : inputs) {
      if (in->requires_grad) in->ensure_grad() += self->grad.middleRows(offset, in->value.rows());
      offset += in->value.rows();
    }
  };
  return result;
}

Var mean_rows(const Var& a) {
  check(a.rows() > 0, "mean_rows of empty matrix");
  const double n = static_cast<double>(a.rows());
  return record(a.value().colwise().mean(), {a}, [pa = a.node(), n](Node* self) {
    return [self, pa, n] { pa->ensure_grad().rowwise() += self->grad.row(0) / n; };
  });
}

Var dropout(const Var& a, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return a;
  check(p < 1.0, "dropout probability must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  Matrix mask(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
  Matrix out = a.value().cwiseProduct(mask);
  return record(std::move(out), {a}, [pa = a.node(), mask = std::move(mask)](Node* self) {
    return [self, pa, mask] { pa->ensure_grad() += self->grad.cwiseProduct(mask); };
  });
}

Var attention(const Var& q, const Var& k, const Var& v, int heads, bool causal) {
  const Eigen::Index d = q.cols();
  check(heads > 0 && d % heads == 0, "attention width not divisible by heads");
  check(k.cols() == d && v.cols() == d && k.rows() == v.rows(), "attention shape mismatch");
  check(k.rows() > 0, "attention over empty memory");
  const Eigen::Index n = q.rows();
  const Eigen::Index m = k.rows();
  const Eigen::Index dh = d / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));

  auto probs = std::make_shared<std::vector<Matrix>>(static_cast<std::size_t>(heads));
  Matrix out(n, d);
  for (int h = 0; h < heads; ++h) {
    const auto qh = q.value().middleCols(h * dh, dh);
    const auto kh = k.value().middleCols(h * dh, dh);
    Matrix s = (qh * kh.transpose()) * scale_factor;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index limit = causal ? std::min<Eigen::Index>(i + 1, m) : m;
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < limit; ++j) mx = std::max(mx, s(i, j));
      double z = 0.0;
      for (Eigen::Index j = 0; j < m; ++j) {
        s(i, j) = j < limit ? std::exp(s(i, j) - mx) : 0.0;
        z += s(i, j);
      }
      s.row(i) /= z;
    }
    out.middleCols(h * dh, dh).noalias() = s * v.value().middleCols(h * dh, dh);
    (*probs)[static_cast<std::size_t>(h)] = std::move(s);
  }
  return record(std::move(out), {q, k, v},
                [pq = q.node(), pk = k.node(), pv = v.node(), probs, heads, dh, scale_factor](Node* self) {
                  return [self, pq, pk, pv, probs, heads, dh, scale_factor] {
                    for (int h = 0; h < heads; ++h) {
                      const Matrix& p = (*probs)[static_cast<std::size_t>(h)];
                      const auto dout = self->grad.middleCols(h * dh, dh);
                      if (pv->requires_grad) pv->ensure_grad().middleCols(h * dh, dh).noalias() += p.transpose() * dout;
                      if (!pq->requires_grad && !pk->requires_grad) continue;
                      Matrix dp = dout * pv->value.middleCols(h * dh, dh).transpose();
                      Eigen::VectorXd rowdot = (dp.array() * p.array()).rowwise().sum();
                      Matrix ds = (p.array() * (dp.array().colwise() - rowdot.array())) * scale_factor;
                      if (pq->requires_grad) {
                        pq->ensure_grad().middleCols(h * dh, dh).noalias() += ds * pk->value.middleCols(h * dh, dh);
                      }
                      if (pk->requires_grad) {
                        pk->ensure_grad().middleCols(h * dh, dh).noalias() +=
                            ds.transpose() * pq->value.middleCols(h * dh, dh);
                      }
                    }
                  };
                });
}

Var cross_entropy(const Var& logits, std::span<const int> targets, Reduction reduction) {
  check(static_cast<Eigen::Index>(targets.size()) == logits.rows(), "cross_entropy target count mismatch");
  const Eigen::Index n = logits.rows();
  const Eigen::Index vocab = logits.cols();
  Matrix probs = Matrix::Zero(n, vocab);
  double total = 0.0;
  std::size_t counted = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0) continue;
    check(t < vocab, "cross_entropy target out of range");
    const auto row = logits.value().row(i);
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    total += lse - row(t);
    probs.row(i) = (row.array() - lse).exp();
    probs(i, t) -= 1.0;
    ++counted;
  }
  double factor = 1.0;
  if (reduction == Reduction::kMean && counted > 0) factor = 1.0 / static_cast<double>(counted);
  return record(Matrix::Constant(1, 1, total * factor), {logits},
                [pl = logits.node(), probs = std::move(probs), factor](Node* self) {
                  return [self, pl, probs, factor] { pl->ensure_grad() += probs * (self->grad(0, 0) * factor); };
                });
}

Var squared_error(const Var& pred, double target) {
  check(pred.rows() == 1 && pred.cols() == 1, "squared_error expects a 1x1 prediction");
  const double diff = pred.item() - target;
  return record(Matrix::Constant(1, 1, diff * diff), {pred}, [pp = pred.node(), diff](Node* self) {
    return [self, pp, diff] { pp->ensure_grad()(0, 0) += 2.0 * diff * self->grad(0, 0); };
  });
}

Var custom_scalar(std::span<const Var> inputs, double value, std::vector<Matrix> input_grads) {
  check(inputs.size() == input_grads.size(), "custom_scalar gradient count mismatch");
  Var result(Matrix::Constant(1, 1, value));
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!g_grad_enabled || !needs) return result;
  Node* self = result.node();
  self->requires_grad = true;
  std::vector<Node*> nodes;
  for (const auto& in : inputs) {
    self->parents.push_back(in.shared());
    nodes.push_back(in.node());
  }
  self->backward = [self, nodes, grads = std::move(input_grads)] {
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k]->requires_grad) nodes[k]->ensure_grad() += grads[k] * self->grad(0, 0);
    }
  };
  return result;
}

}  // namespace aspectcl::ag
