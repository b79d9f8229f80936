#include "xplt/ops.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <utility>

namespace xplt {

namespace {

void check_same_shape(const char* op, const Var& a, const Var& b) {
  if (!same_shape(a.shape(), b.shape())) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void check_2d(const char* op, const Var& a) {
  if (a.shape().size() != 2) {
    throw ShapeError(std::string(op) + ": expected 2-d tensor, got " +
                     shape_str(a.shape()));
  }
}

Tensor like(const Var& v, ArrayF data) {
  return Tensor(v.shape(), std::move(data));
}

}  // namespace

Var add(const Var& a, const Var& b) {
  check_same_shape("add", a, b);
  return make_op("add", like(a, a.value().array() + b.value().array()),
                 {a, b},
                 [](const Var& g, const std::vector<Var>&, const Var&,
                    const std::vector<bool>& needs) {
                   std::vector<Var> out(2);
                   if (needs[0]) out[0] = g;
                   if (needs[1]) out[1] = g;
                   return out;
                 });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape("sub", a, b);
  return make_op("sub", like(a, a.value().array() - b.value().array()),
                 {a, b},
                 [](const Var& g, const std::vector<Var>&, const Var&,
                    const std::vector<bool>& needs) {
                   std::vector<Var> out(2);
                   if (needs[0]) out[0] = g;
                   if (needs[1]) out[1] = neg(g);
                   return out;
                 });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape("mul", a, b);
  return make_op("mul", like(a, a.value().array() * b.value().array()),
                 {a, b},
                 [](const Var& g, const std::vector<Var>& in, const Var&,
                    const std::vector<bool>& needs) {
                   std::vector<Var> out(2);
                   if (needs[0]) out[0] = mul(g, in[1]);
                   if (needs[1]) out[1] = mul(g, in[0]);
                   return out;
                 });
}

Var div(const Var& a, const Var& b) {
  check_same_shape("div", a, b);
  return make_op("div", like(a, a.value().array() / b.value().array()),
                 {a, b},
                 [](const Var& g, const std::vector<Var>& in, const Var& out,
                    const std::vector<bool>& needs) {
                   std::vector<Var> grads(2);
                   if (needs[0]) grads[0] = div(g, in[1]);
                   if (needs[1]) grads[1] = neg(mul(g, div(out, in[1])));
                   return grads;
                 });
}

Var neg(const Var& a) {
  return make_op("neg", like(a, -a.value().array()), {a},
                 [](const Var& g, const std::vector<Var>&, const Var&,
                    const std::vector<bool>&) {
                   return std::vector<Var>{neg(g)};
                 });
}

Var sadd(const Var& a, float c) {
  return make_op("sadd", like(a, a.value().array() + c), {a},
                 [](const Var& g, const std::vector<Var>&, const Var&,
                    const std::vector<bool>&) {
                   return std::vector<Var>{g};
                 });
}

Var smul(const Var& a, float c) {
  return make_op("smul", like(a, a.value().array() * c), {a},
                 [c](const Var& g, const std::vector<Var>&, const Var&,
                     const std::vector<bool>&) {
                   return std::vector<Var>{smul(g, c)};
                 });
}

Var exp(const Var& a) {
  return make_op("exp", like(a, a.value().array().exp()), {a},
                 [](const Var& g, const std::vector<Var>&, const Var& out,
                    const std::vector<bool>&) {
                   return std::vector<Var>{mul(g, out)};
                 });
}

Var log(const Var& a) {
  return make_op("log", like(a, a.value().array().log()), {a},
                 [](const Var& g, const std::vector<Var>& in, const Var&,
                    const std::vector<bool>&) {
                   return std::vector<Var>{div(g, in[0])};
                 });
}

Var pow_const(const Var& a, float c) {
  return make_op("pow_const", like(a, a.value().array().pow(c)), {a},
                 [c](const Var& g, const std::vector<Var>& in, const Var&,
                     const std::vector<bool>&) {
                   return std::vector<Var>{
                       mul(g, smul(pow_const(in[0], c - 1.0f), c))};
                 });
}

Var relu(const Var& a) {
  // The active-region mask is saved as a constant: the gradient treats the
  // selection pattern as fixed, so second derivatives through it are zero.
  Tensor mask(a.shape(), a.value().array().max(0.0f).sign());
  Var mask_c = Var::constant(std::move(mask));
  return make_op("relu", like(a, a.value().array().max(0.0f)), {a},
                 [mask_c](const Var& g, const std::vector<Var>&, const Var&,
                          const std::vector<bool>&) {
                   return std::vector<Var>{mul(g, mask_c)};
                 });
}

Var sigmoid(const Var& a) {
  const ArrayF& x = a.value().array();
  ArrayF y(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    float v = x[i];
    if (v >= 0.0f) {
      y[i] = 1.0f / (1.0f + std::exp(-v));
    } else {
      float e = std::exp(v);
      y[i] = e / (1.0f + e);
    }
  }
  return make_op("sigmoid", like(a, std::move(y)), {a},
                 [](const Var& g, const std::vector<Var>&, const Var& out,
                    const std::vector<bool>&) {
                   return std::vector<Var>{
                       mul(g, mul(out, sadd(neg(out), 1.0f)))};
                 });
}

Var clamp(const Var& a, float lo, float hi) {
  if (!(lo <= hi)) {
    throw Error("clamp: lo must not exceed hi");
  }
  const ArrayF& x = a.value().array();
  Tensor mask(a.shape(), (x >= lo && x <= hi).cast<float>());
  Var mask_c = Var::constant(std::move(mask));
  return make_op("clamp", like(a, x.min(hi).max(lo)), {a},
                 [mask_c](const Var& g, const std::vector<Var>&, const Var&,
                          const std::vector<bool>&) {
                   return std::vector<Var>{mul(g, mask_c)};
                 });
}

Var clamp_min(const Var& a, float lo) {
  const ArrayF& x = a.value().array();
  Tensor mask(a.shape(), (x >= lo).cast<float>());
  Var mask_c = Var::constant(std::move(mask));
  return make_op("clamp_min", like(a, x.max(lo)), {a},
                 [mask_c](const Var& g, const std::vector<Var>&, const Var&,
                          const std::vector<bool>&) {
                   return std::vector<Var>{mul(g, mask_c)};
                 });
}

Var reshape(const Var& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  }
  Shape orig = a.shape();
  return make_op("reshape", Tensor(shape, a.value().array()), {a},
                 [orig](const Var& g, const std::vector<Var>&, const Var&,
                        const std::vector<bool>&) {
                   return std::vector<Var>{reshape(g, orig)};
                 });
}

Var flatten(const Var& a) {
  auto [n, rest] = a.value().batch_view();
  return reshape(a, {n, rest});
}

Var transpose(const Var& a) {
  check_2d("transpose", a);
  int r = a.shape()[0], c = a.shape()[1];
  Tensor out(Shape{c, r});
  out.mat(c, r) = a.value().mat(r, c).transpose();
  return make_op("transpose", std::move(out), {a},
                 [](const Var& g, const std::vector<Var>&, const Var&,
                    const std::vector<bool>&) {
                   return std::vector<Var>{transpose(g)};
                 });
}

Var matmul(const Var& a, const Var& b) {
  check_2d("matmul", a);
  check_2d("matmul", b);
  int m = a.shape()[0], k = a.shape()[1];
  int k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions disagree, " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out(Shape{m, n});
  out.mat(m, n).noalias() = a.value().mat(m, k) * b.value().mat(k, n);
  return make_op("matmul", std::move(out), {a, b},
                 [](const Var& g, const std::vector<Var>& in, const Var&,
                    const std::vector<bool>& needs) {
                   std::vector<Var> grads(2);
                   if (needs[0]) grads[0] = matmul(g, transpose(in[1]));
                   if (needs[1]) grads[1] = matmul(transpose(in[0]), g);
                   return grads;
                 });
}

Var broadcast_rows(const Var& v, int rows) {
  const Shape& s = v.shape();
  bool ok = s.size() == 1 || (s.size() == 2 && s[0] == 1);
  if (!ok) {
    throw ShapeError("broadcast_rows: expected [M] or [1,M], got " +
                     shape_str(s));
  }
  if (rows <= 0) throw ShapeError("broadcast_rows: rows must be positive");
  int m = static_cast<int>(v.size());
  Tensor out(Shape{rows, m});
  auto dst = out.mat(rows, m);
  Eigen::Map<const Eigen::RowVectorXf> row(v.value().data(), m);
  dst.rowwise() = row;
  Shape orig = s;
  return make_op("broadcast_rows", std::move(out), {v},
                 [orig](const Var& g, const std::vector<Var>&, const Var&,
                        const std::vector<bool>&) {
                   return std::vector<Var>{reshape(colsum(g), orig)};
                 });
}

Var colsum(const Var& a) {
  check_2d("colsum", a);
  int r = a.shape()[0], c = a.shape()[1];
  Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(c);
  auto m = a.value().mat(r, c);
  for (int i = 0; i < r; ++i) {
    acc += m.row(i).transpose().array().cast<double>();
  }
  Tensor out(Shape{c}, acc.cast<float>());
  return make_op("colsum", std::move(out), {a},
                 [r](const Var& g, const std::vector<Var>&, const Var&,
                     const std::vector<bool>&) {
                   return std::vector<Var>{broadcast_rows(g, r)};
                 });
}

Var broadcast_cols(const Var& v, int cols) {
  const Shape& s = v.shape();
  bool ok = s.size() == 1 || (s.size() == 2 && s[1] == 1);
  if (!ok) {
    throw ShapeError("broadcast_cols: expected [R] or [R,1], got " +
                     shape_str(s));
  }
  if (cols <= 0) throw ShapeError("broadcast_cols: cols must be positive");
  int r = static_cast<int>(v.size());
  Tensor out(Shape{r, cols});
  auto dst = out.mat(r, cols);
  Eigen::Map<const Eigen::VectorXf> col(v.value().data(), r);
  dst.colwise() = col;
  Shape orig = s;
  return make_op("broadcast_cols", std::move(out), {v},
                 [orig](const Var& g, const std::vector<Var>&, const Var&,
                        const std::vector<bool>&) {
                   return std::vector<Var>{reshape(rowsum(g), orig)};
                 });
}

Var rowsum(const Var& a) {
  check_2d("rowsum", a);
  int r = a.shape()[0], c = a.shape()[1];
  Tensor out(Shape{r, 1});
  auto m = a.value().mat(r, c);
  for (int i = 0; i < r; ++i) {
    out.data()[i] = static_cast<float>(m.row(i).array().cast<double>().sum());
  }
  return make_op("rowsum", std::move(out), {a},
                 [c](const Var& g, const std::vector<Var>&, const Var&,
                     const std::vector<bool>&) {
                   return std::vector<Var>{broadcast_cols(g, c)};
                 });
}

Var broadcast_scalar(const Var& s, Shape shape) {
  if (s.size() != 1) {
    throw ShapeError("broadcast_scalar: expected a single element, got " +
                     shape_str(s.shape()));
  }
  Tensor out = Tensor::full(shape, s.value().data()[0]);
  Shape orig = s.shape();
  return make_op("broadcast_scalar", std::move(out), {s},
                 [orig](const Var& g, const std::vector<Var>&, const Var&,
                        const std::vector<bool>&) {
                   return std::vector<Var>{reshape(sum_all(g), orig)};
                 });
}

Var sum_all(const Var& a) {
  double total = a.value().array().cast<double>().sum();
  Tensor out(Shape{1});
  out.data()[0] = static_cast<float>(total);
  Shape orig = a.shape();
  return make_op("sum_all", std::move(out), {a},
                 [orig](const Var& g, const std::vector<Var>&, const Var&,
                        const std::vector<bool>&) {
                   return std::vector<Var>{broadcast_scalar(g, orig)};
                 });
}

Var mean_all(const Var& a) {
  return smul(sum_all(a), 1.0f / static_cast<float>(a.size()));
}

int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace {

struct ConvGeom {
  int n, c, h, w, kh, kw, stride, pad, oh, ow;
};

ConvGeom conv_geom(const char* op, const Shape& in_shape, int kh, int kw,
                   int stride, int pad) {
  if (in_shape.size() != 4) {
    throw ShapeError(std::string(op) + ": expected NCHW input, got " +
                     shape_str(in_shape));
  }
  if (stride < 1) throw ShapeError(std::string(op) + ": stride must be >= 1");
  if (pad < 0) throw ShapeError(std::string(op) + ": pad must be >= 0");
  if (kh < 1 || kw < 1) {
    throw ShapeError(std::string(op) + ": window must be at least 1x1");
  }
  ConvGeom geo{in_shape[0], in_shape[1], in_shape[2], in_shape[3],
               kh,          kw,          stride,      pad,
               conv_out_dim(in_shape[2], kh, stride, pad),
               conv_out_dim(in_shape[3], kw, stride, pad)};
  if (geo.oh < 1 || geo.ow < 1) {
    throw ShapeError(std::string(op) + ": window " + std::to_string(kh) + "x" +
                     std::to_string(kw) + " does not fit input " +
                     shape_str(in_shape));
  }
  return geo;
}

Tensor im2col_value(const Tensor& x, const ConvGeom& g) {
  int ckk = g.c * g.kh * g.kw;
  int cols = g.n * g.oh * g.ow;
  Tensor out = Tensor::zeros(Shape{ckk, cols});
  const float* src = x.data();
  float* dst = out.data();
  for (int c = 0; c < g.c; ++c) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        int row = (c * g.kh + ki) * g.kw + kj;
        float* drow = dst + static_cast<ptrdiff_t>(row) * cols;
        for (int n = 0; n < g.n; ++n) {
          const float* plane =
              src + (static_cast<ptrdiff_t>(n) * g.c + c) * g.h * g.w;
          for (int oh = 0; oh < g.oh; ++oh) {
            int ih = oh * g.stride - g.pad + ki;
            float* dseg = drow + (static_cast<ptrdiff_t>(n) * g.oh + oh) * g.ow;
            if (ih < 0 || ih >= g.h) continue;
            const float* srow = plane + static_cast<ptrdiff_t>(ih) * g.w;
            if (g.stride == 1) {
              int iw0 = -g.pad + kj;
              int lo = std::max(0, -iw0);
              int hi = std::min(g.ow, g.w - iw0);
              if (hi > lo) {
                std::memcpy(dseg + lo, srow + iw0 + lo,
                            sizeof(float) * static_cast<size_t>(hi - lo));
              }
            } else {
              for (int ow = 0; ow < g.ow; ++ow) {
                int iw = ow * g.stride - g.pad + kj;
                if (iw >= 0 && iw < g.w) dseg[ow] = srow[iw];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor col2im_value(const Tensor& cols_t, const Shape& in_shape,
                    const ConvGeom& g) {
  int cols = g.n * g.oh * g.ow;
  Tensor out = Tensor::zeros(in_shape);
  const float* src = cols_t.data();
  float* dst = out.data();
  for (int c = 0; c < g.c; ++c) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        int row = (c * g.kh + ki) * g.kw + kj;
        const float* srow = src + static_cast<ptrdiff_t>(row) * cols;
        for (int n = 0; n < g.n; ++n) {
          float* plane =
              dst + (static_cast<ptrdiff_t>(n) * g.c + c) * g.h * g.w;
          for (int oh = 0; oh < g.oh; ++oh) {
            int ih = oh * g.stride - g.pad + ki;
            if (ih < 0 || ih >= g.h) continue;
            const float* sseg =
                srow + (static_cast<ptrdiff_t>(n) * g.oh + oh) * g.ow;
            float* drow = plane + static_cast<ptrdiff_t>(ih) * g.w;
            for (int ow = 0; ow < g.ow; ++ow) {
              int iw = ow * g.stride - g.pad + kj;
              if (iw >= 0 && iw < g.w) drow[iw] += sseg[ow];
            }
          }
        }
      }
    }
  }
  return out;
}

/// [O, N*OH*OW] -> [N, O, OH, OW]
Var pack_conv(const Var& y, int n, int o, int oh, int ow);
/// [N, O, OH, OW] -> [O, N*OH*OW]
Var unpack_conv(const Var& y, int n, int o, int oh, int ow);

Var pack_conv(const Var& y, int n, int o, int oh, int ow) {
  int hw = oh * ow;
  if (y.shape().size() != 2 || y.shape()[0] != o || y.shape()[1] != n * hw) {
    throw ShapeError("pack_conv: unexpected input shape " +
                     shape_str(y.shape()));
  }
  Tensor out(Shape{n, o, oh, ow});
  const float* src = y.value().data();
  float* dst = out.data();
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < o; ++ch) {
      std::memcpy(dst + (static_cast<ptrdiff_t>(b) * o + ch) * hw,
                  src + static_cast<ptrdiff_t>(ch) * (n * hw) +
                      static_cast<ptrdiff_t>(b) * hw,
                  sizeof(float) * static_cast<size_t>(hw));
    }
  }
  return make_op("pack_conv", std::move(out), {y},
                 [n, o, oh, ow](const Var& g, const std::vector<Var>&,
                                const Var&, const std::vector<bool>&) {
                   return std::vector<Var>{unpack_conv(g, n, o, oh, ow)};
                 });
}

Var unpack_conv(const Var& y, int n, int o, int oh, int ow) {
  int hw = oh * ow;
  Shape expect{n, o, oh, ow};
  if (!same_shape(y.shape(), expect)) {
    throw ShapeError("unpack_conv: unexpected input shape " +
                     shape_str(y.shape()));
  }
  Tensor out(Shape{o, n * hw});
  const float* src = y.value().data();
  float* dst = out.data();
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < o; ++ch) {
      std::memcpy(dst + static_cast<ptrdiff_t>(ch) * (n * hw) +
                      static_cast<ptrdiff_t>(b) * hw,
                  src + (static_cast<ptrdiff_t>(b) * o + ch) * hw,
                  sizeof(float) * static_cast<size_t>(hw));
    }
  }
  return make_op("unpack_conv", std::move(out), {y},
                 [n, o, oh, ow](const Var& g, const std::vector<Var>&,
                                const Var&, const std::vector<bool>&) {
                   return std::vector<Var>{pack_conv(g, n, o, oh, ow)};
                 });
}

Var pool_gather(const Var& x, std::shared_ptr<std::vector<int32_t>> idx,
                Shape out_shape);
Var pool_scatter(const Var& v, std::shared_ptr<std::vector<int32_t>> idx,
                 Shape in_shape);

Var pool_gather(const Var& x, std::shared_ptr<std::vector<int32_t>> idx,
                Shape out_shape) {
  Tensor out(out_shape);
  const float* src = x.value().data();
  float* dst = out.data();
  for (size_t i = 0; i < idx->size(); ++i) dst[i] = src[(*idx)[i]];
  Shape in_shape = x.shape();
  return make_op("pool_gather", std::move(out), {x},
                 [idx, in_shape](const Var& g, const std::vector<Var>&,
                                 const Var&, const std::vector<bool>&) {
                   return std::vector<Var>{pool_scatter(g, idx, in_shape)};
                 });
}

Var pool_scatter(const Var& v, std::shared_ptr<std::vector<int32_t>> idx,
                 Shape in_shape) {
  Tensor out = Tensor::zeros(in_shape);
  const float* src = v.value().data();
  float* dst = out.data();
  for (size_t i = 0; i < idx->size(); ++i) dst[(*idx)[i]] += src[i];
  Shape out_shape = v.shape();
  return make_op("pool_scatter", std::move(out), {v},
                 [idx, out_shape](const Var& g, const std::vector<Var>&,
                                  const Var&, const std::vector<bool>&) {
                   return std::vector<Var>{pool_gather(g, idx, out_shape)};
                 });
}

}  // namespace

Var im2col(const Var& x, int kh, int kw, int stride, int pad) {
  ConvGeom g = conv_geom("im2col", x.shape(), kh, kw, stride, pad);
  Shape in_shape = x.shape();
  return make_op("im2col", im2col_value(x.value(), g), {x},
                 [in_shape, kh, kw, stride, pad](
                     const Var& gr, const std::vector<Var>&, const Var&,
                     const std::vector<bool>&) {
                   return std::vector<Var>{
                       col2im(gr, in_shape, kh, kw, stride, pad)};
                 });
}

Var col2im(const Var& cols, Shape in_shape, int kh, int kw, int stride,
           int pad) {
  ConvGeom g = conv_geom("col2im", in_shape, kh, kw, stride, pad);
  Shape expect{g.c * g.kh * g.kw, g.n * g.oh * g.ow};
  if (!same_shape(cols.shape(), expect)) {
    throw ShapeError("col2im: expected " + shape_str(expect) + ", got " +
                     shape_str(cols.shape()));
  }
  return make_op("col2im", col2im_value(cols.value(), in_shape, g), {cols},
                 [kh, kw, stride, pad](const Var& gr, const std::vector<Var>&,
                                       const Var&, const std::vector<bool>&) {
                   return std::vector<Var>{im2col(gr, kh, kw, stride, pad)};
                 });
}

Var conv2d(const Var& x, const Var& kernel, const Var& bias, int stride,
           int pad) {
  const Shape& ks = kernel.shape();
  if (ks.size() != 4) {
    throw ShapeError("conv2d: expected OIHW kernel, got " + shape_str(ks));
  }
  ConvGeom g = conv_geom("conv2d", x.shape(), ks[2], ks[3], stride, pad);
  if (ks[1] != g.c) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(ks[1]) +
                     " input channels, input has " + std::to_string(g.c));
  }
  int o = ks[0];
  if (!(bias.shape().size() == 1 && bias.shape()[0] == o)) {
    throw ShapeError("conv2d: bias must be [" + std::to_string(o) + "], got " +
                     shape_str(bias.shape()));
  }
  Var cols = im2col(x, g.kh, g.kw, stride, pad);
  Var wmat = reshape(kernel, {o, g.c * g.kh * g.kw});
  Var y = matmul(wmat, cols);
  Var yb = add(y, broadcast_cols(bias, g.n * g.oh * g.ow));
  return pack_conv(yb, g.n, o, g.oh, g.ow);
}

Var linear(const Var& x, const Var& w, const Var& b) {
  check_2d("linear", x);
  check_2d("linear", w);
  if (x.shape()[1] != w.shape()[1]) {
    throw ShapeError("linear: input features " + shape_str(x.shape()) +
                     " do not match weight " + shape_str(w.shape()));
  }
  int m = w.shape()[0];
  if (!(b.shape().size() == 1 && b.shape()[0] == m)) {
    throw ShapeError("linear: bias must be [" + std::to_string(m) + "], got " +
                     shape_str(b.shape()));
  }
  return add(matmul(x, transpose(w)), broadcast_rows(b, x.shape()[0]));
}

Var maxpool2x2(const Var& x) {
  if (x.shape().size() != 4) {
    throw ShapeError("maxpool2x2: expected NCHW input, got " +
                     shape_str(x.shape()));
  }
  int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  int oh = h / 2, ow = w / 2;
  if (oh < 1 || ow < 1) {
    throw ShapeError("maxpool2x2: input " + shape_str(x.shape()) +
                     " too small to pool");
  }
  auto idx = std::make_shared<std::vector<int32_t>>(
      static_cast<size_t>(n) * c * oh * ow);
  const float* src = x.value().data();
  size_t k = 0;
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const ptrdiff_t plane = (static_cast<ptrdiff_t>(b) * c + ch) * h * w;
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          ptrdiff_t base = plane + static_cast<ptrdiff_t>(2 * i) * w + 2 * j;
          ptrdiff_t best = base;
          float bv = src[base];
          const ptrdiff_t cand[3] = {base + 1, base + w, base + w + 1};
          for (ptrdiff_t p : cand) {
            if (src[p] > bv) {
              bv = src[p];
              best = p;
            }
          }
          (*idx)[k++] = static_cast<int32_t>(best);
        }
      }
    }
  }
  return pool_gather(x, std::move(idx), Shape{n, c, oh, ow});
}

}  // namespace xplt
