#pragma once

#include "xplt/ops.hpp"

namespace xplt {

/// Probability floor used inside log-based losses.
inline constexpr float kProbEps = 1e-7f;

/// Softmax over everything but the leading batch dimension, computed with a
/// per-example max shift for stability. Output shape equals input shape.
Var softmax_flat(const Var& x);

/// Mean over the batch of -[y log p + (1-y) log(1-p)], with p clamped to
/// [kProbEps, 1-kProbEps]. pred and target must have identical shapes with
/// one value per example ([N] or [N,1]); target entries must be 0 or 1.
Var binary_cross_entropy(const Var& pred, const Var& target);

/// Mean over the batch of -alpha_t (1-p_t)^gamma log(p_t) where
/// p_t = y p + (1-y)(1-p) and alpha_t = alpha y + (1-alpha)(1-y).
Var focal_loss(const Var& pred, const Var& target, float gamma, float alpha);

/// Mean over the batch of KL(p || q) for per-example distributions laid out
/// as rows of the flattened tensors. p is treated as a constant; gradients
/// flow only into q. q is floored at kProbEps inside the log.
Var kl_divergence(const Var& p, const Var& q);

}  // namespace xplt
