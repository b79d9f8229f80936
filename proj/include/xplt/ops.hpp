#pragma once

#include "xplt/graph.hpp"

#include <memory>

namespace xplt {

// Pointwise. Binary ops require identical shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var sadd(const Var& a, float c);
Var smul(const Var& a, float c);
Var exp(const Var& a);
Var log(const Var& a);
Var pow_const(const Var& a, float c);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var clamp(const Var& a, float lo, float hi);
Var clamp_min(const Var& a, float lo);

/// Mask application and friends; same as mul, named for call sites.
inline Var elementwise_mul(const Var& a, const Var& b) { return mul(a, b); }

// Shape & layout.
Var reshape(const Var& a, Shape shape);
Var flatten(const Var& a);  // [N, ...] -> [N, rest]
Var transpose(const Var& a);
Var matmul(const Var& a, const Var& b);
Var broadcast_rows(const Var& v, int rows);   // [M] or [1,M] -> [rows, M]
Var colsum(const Var& a);                     // [N,M] -> [M]
Var broadcast_cols(const Var& v, int cols);   // [R] or [R,1] -> [R, cols]
Var rowsum(const Var& a);                     // [R,K] -> [R,1]
Var broadcast_scalar(const Var& s, Shape shape);
Var sum_all(const Var& a);   // [1]; accumulates in double
Var mean_all(const Var& a);

// Convolution building blocks. Layouts: input NCHW, kernel OIHW.
Var im2col(const Var& x, int kh, int kw, int stride, int pad);
Var col2im(const Var& cols, Shape in_shape, int kh, int kw, int stride, int pad);

/// Cross-correlation with zero padding over NCHW input.
Var conv2d(const Var& x, const Var& kernel, const Var& bias, int stride = 1,
           int pad = 0);
/// y = x W^T + b for x [N,D], W [M,D], b [M].
Var linear(const Var& x, const Var& w, const Var& b);
/// 2x2/stride-2 max pooling; gradient routes to the argmax, ties broken by
/// the first element in row-major window order.
Var maxpool2x2(const Var& x);

/// Output spatial size of a conv/pool window sweep.
int conv_out_dim(int in, int k, int stride, int pad);

}  // namespace xplt
