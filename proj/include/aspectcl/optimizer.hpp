#pragma once

#include <vector>

#include "aspectcl/autograd.hpp"
#include "aspectcl/model.hpp"

namespace aspectcl {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

// AdamW with decoupled weight decay and a constant learning rate. State is
// keyed by parameter position, so the parameter list must keep its layout.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config) : config_(config) {}

  // Applies one update from the accumulated gradients, then clears them.
  // Parameters that received no gradient are left untouched.
  void step(std::vector<NamedParameter> params);

  long steps() const { return steps_; }

 private:
  AdamWConfig config_;
  long steps_ = 0;
  std::vector<ag::Matrix> m_;
  std::vector<ag::Matrix> v_;
};

}  // namespace aspectcl
