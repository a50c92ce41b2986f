#include "aspectcl/optimizer.hpp"

#include <cmath>

namespace aspectcl {

void AdamW::step(std::vector<NamedParameter> params) {
  if (m_.size() != params.size()) {
    m_.assign(params.size(), {});
    v_.assign(params.size(), {});
  }
  ++steps_;
  const double correction1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ag::Var& var = *params[i].var;
    const ag::Matrix& g = var.grad();
    if (g.size() == 0) continue;
    ag::Matrix& w = var.mutable_value();
    if (m_[i].rows() != w.rows() || m_[i].cols() != w.cols()) {
      m_[i] = ag::Matrix::Zero(w.rows(), w.cols());
      v_[i] = ag::Matrix::Zero(w.rows(), w.cols());
    }
    if (params[i].decay && config_.weight_decay > 0.0) w *= 1.0 - config_.learning_rate * config_.weight_decay;
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    w.array() -= config_.learning_rate * (m_[i].array() / correction1) /
                 ((v_[i].array() / correction2).sqrt() + config_.epsilon);
    var.zero_grad();
  }
}

}  // namespace aspectcl
