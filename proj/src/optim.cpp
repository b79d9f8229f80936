#include "xplt/optim.hpp"

#include <cmath>

namespace xplt {

Optimizer::Optimizer(Kind kind, std::vector<Var> params, float lr, float beta1,
                     float beta2, float eps)
    : kind_(kind),
      params_(std::move(params)),
      lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  for (const Var& p : params_) {
    if (!p.defined() || !p.requires_grad()) {
      throw Error("optimizer: every parameter must be a leaf requiring grad");
    }
  }
  if (kind_ == Kind::kAdam) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Var& p : params_) {
      m_.emplace_back(ArrayF::Zero(p.size()));
      v_.emplace_back(ArrayF::Zero(p.size()));
    }
  }
}

Optimizer Optimizer::sgd(std::vector<Var> params, float lr) {
  return Optimizer(Kind::kSgd, std::move(params), lr, 0.0f, 0.0f, 0.0f);
}

Optimizer Optimizer::adam(std::vector<Var> params, float lr, float beta1,
                          float beta2, float eps) {
  return Optimizer(Kind::kAdam, std::move(params), lr, beta1, beta2, eps);
}

void Optimizer::step() {
  ++t_;
  float bc1 = 1.0f, bc2 = 1.0f;
  if (kind_ == Kind::kAdam) {
    bc1 = static_cast<float>(1.0 - std::pow(static_cast<double>(beta1_), t_));
    bc2 = static_cast<float>(1.0 - std::pow(static_cast<double>(beta2_), t_));
  }
  for (size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i];
    Var gv = p.grad();
    if (!gv.defined()) continue;
    ArrayF& val = p.mutable_value().array();
    if (gv.size() != val.size()) {
      throw ShapeError("optimizer: gradient size does not match parameter");
    }
    const ArrayF& g = gv.value().array();
    switch (kind_) {
      case Kind::kSgd:
        val -= lr_ * g;
        break;
      case Kind::kAdam: {
        m_[i] = beta1_ * m_[i] + (1.0f - beta1_) * g;
        v_[i] = beta2_ * v_[i] + (1.0f - beta2_) * g.square();
        ArrayF mhat = m_[i] / bc1;
        ArrayF vhat = v_[i] / bc2;
        val -= lr_ * mhat / (vhat.sqrt() + eps_);
        break;
      }
    }
    if (!val.allFinite()) {
      throw Error("optimizer: parameter became non-finite after update");
    }
  }
}

void Optimizer::zero_grad() {
  for (Var& p : params_) p.zero_grad();
}

}  // namespace xplt
