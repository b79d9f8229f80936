#include "xplt/losses.hpp"

#include <cmath>

namespace xplt {

namespace {

void check_target(const char* op, const Var& pred, const Var& target) {
  if (!same_shape(pred.shape(), target.shape())) {
    throw ShapeError(std::string(op) + ": pred " + shape_str(pred.shape()) +
                     " vs target " + shape_str(target.shape()));
  }
  const ArrayF& t = target.value().array();
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    if (t[i] != 0.0f && t[i] != 1.0f) {
      throw Error(std::string(op) + ": targets must be 0 or 1");
    }
  }
  const Shape& s = pred.shape();
  bool per_example = s.size() == 1 || (s.size() == 2 && s[1] == 1);
  if (!per_example) {
    throw ShapeError(std::string(op) + ": expected one score per example, got " +
                     shape_str(s));
  }
}

}  // namespace

Var softmax_flat(const Var& x) {
  auto [n, k] = x.value().batch_view();
  Var rows = reshape(x, {n, k});

  // Row maxima are subtracted as constants; softmax is shift invariant, so
  // the gradient is unaffected while exp stays in range.
  Tensor mx(Shape{n, 1});
  auto m = rows.value().mat(n, k);
  for (int i = 0; i < n; ++i) mx.data()[i] = m.row(i).maxCoeff();
  Var shifted = sub(rows, broadcast_cols(Var::constant(std::move(mx)), k));

  Var e = exp(shifted);
  Var denom = broadcast_cols(rowsum(e), k);
  return reshape(div(e, denom), x.shape());
}

Var binary_cross_entropy(const Var& pred, const Var& target) {
  check_target("binary_cross_entropy", pred, target);
  int n = pred.shape()[0];
  Var y = target.detach();
  Var ones = Var::constant(Tensor::full(pred.shape(), 1.0f));
  Var p = clamp(pred, kProbEps, 1.0f - kProbEps);
  Var pos = mul(y, log(p));
  Var negt = mul(sub(ones, y), log(sub(ones, p)));
  return smul(sum_all(neg(add(pos, negt))), 1.0f / static_cast<float>(n));
}

Var focal_loss(const Var& pred, const Var& target, float gamma, float alpha) {
  check_target("focal_loss", pred, target);
  if (gamma < 0.0f) throw Error("focal_loss: gamma must be >= 0");
  if (!(alpha >= 0.0f && alpha <= 1.0f)) {
    throw Error("focal_loss: alpha must lie in [0,1]");
  }
  int n = pred.shape()[0];
  Var y = target.detach();
  Var ones = Var::constant(Tensor::full(pred.shape(), 1.0f));
  Var p = clamp(pred, kProbEps, 1.0f - kProbEps);
  Var pt = add(mul(y, p), mul(sub(ones, y), sub(ones, p)));

  Tensor at_t(pred.shape());
  const ArrayF& ty = target.value().array();
  for (Eigen::Index i = 0; i < ty.size(); ++i) {
    at_t.data()[i] = ty[i] == 1.0f ? alpha : 1.0f - alpha;
  }
  Var at = Var::constant(std::move(at_t));

  Var focus = pow_const(sub(ones, pt), gamma);
  Var loss = neg(mul(at, mul(focus, log(pt))));
  return smul(sum_all(loss), 1.0f / static_cast<float>(n));
}

Var kl_divergence(const Var& p, const Var& q) {
  if (!same_shape(p.shape(), q.shape())) {
    throw ShapeError("kl_divergence: p " + shape_str(p.shape()) + " vs q " +
                     shape_str(q.shape()));
  }
  auto [n, k] = q.value().batch_view();
  Var pc = reshape(p.detach(), {n, k});
  Var qrows = reshape(q, {n, k});

  Var lq = log(clamp_min(qrows, kProbEps));
  Var cross = rowsum(mul(pc, lq));  // [n,1]

  // Per-example sum of p log p, with 0 log 0 taken as 0; constant w.r.t. q.
  Tensor ent(Shape{n, 1});
  auto pm = pc.value().mat(n, k);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < k; ++j) {
      double v = pm(i, j);
      if (v > 0.0) s += v * std::log(v);
    }
    ent.data()[i] = static_cast<float>(s);
  }

  Var per_example = sub(Var::constant(std::move(ent)), cross);
  return smul(sum_all(per_example), 1.0f / static_cast<float>(n));
}

}  // namespace xplt
