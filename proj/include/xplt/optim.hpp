#pragma once

#include "xplt/graph.hpp"

#include <vector>

namespace xplt {

/// First-order optimizers over leaf parameters, updated in place from the
/// gradients accumulated by backward(). Missing gradients count as zero.
class Optimizer {
 public:
  static Optimizer sgd(std::vector<Var> params, float lr);
  static Optimizer adam(std::vector<Var> params, float lr, float beta1 = 0.9f,
                        float beta2 = 0.999f, float eps = 1e-8f);

  void step();
  void zero_grad();

  float lr() const { return lr_; }
  void set_lr(float lr) { lr_ = lr; }
  int64_t steps_taken() const { return t_; }
  const std::vector<Var>& params() const { return params_; }

 private:
  enum class Kind { kSgd, kAdam };

  Optimizer(Kind kind, std::vector<Var> params, float lr, float beta1,
            float beta2, float eps);

  Kind kind_;
  std::vector<Var> params_;
  float lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<ArrayF> m_, v_;
};

}  // namespace xplt
