#include "stconv/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>

#include "stconv/error.hpp"

namespace stconv {

namespace {

using Index = std::ptrdiff_t;

std::string extent_string(const Extent3& e) {
  return "(" + std::to_string(e[0]) + ", " + std::to_string(e[1]) + ", " + std::to_string(e[2]) +
         ")";
}

// Output positions o with o*stride - pad + k inside [0, n).
std::pair<Index, Index> valid_range(Index out, Index n, Index stride, Index pad, Index k) {
  const Index first = pad - k;
  const Index lo = first > 0 ? (first + stride - 1) / stride : 0;
  const Index last = n - 1 + pad - k;
  Index hi = last < 0 ? 0 : last / stride + 1;
  hi = std::min(hi, out);
  return {lo, std::max(lo, hi)};
}

struct ConvGeometry {
  Index batch, cin, cout;
  Index t, h, w;
  Index ot, oh, ow;
  Index kt, kh, kw;
  Index st, sh, sw;
  Index pt, ph, pw;
};

ConvGeometry make_geometry(const Tensor5& x, const Conv3dKernel& k) {
  const Shape5 out = conv3d_output_shape(x.shape(), k);
  const auto& s = x.shape();
  const auto kern = k.kernel();
  return {static_cast<Index>(s[0]),         static_cast<Index>(s[1]),
          static_cast<Index>(out[1]),       static_cast<Index>(s[2]),
          static_cast<Index>(s[3]),         static_cast<Index>(s[4]),
          static_cast<Index>(out[2]),       static_cast<Index>(out[3]),
          static_cast<Index>(out[4]),       static_cast<Index>(kern[0]),
          static_cast<Index>(kern[1]),      static_cast<Index>(kern[2]),
          static_cast<Index>(k.stride[0]),  static_cast<Index>(k.stride[1]),
          static_cast<Index>(k.stride[2]),  static_cast<Index>(k.padding[0]),
          static_cast<Index>(k.padding[1]), static_cast<Index>(k.padding[2])};
}

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  if (b != 0 && a > std::numeric_limits<std::uint64_t>::max() / b) {
    throw InputError("flop_count overflows 64 bits");
  }
  return a * b;
}

std::uint64_t checked_add(std::uint64_t a, std::uint64_t b) {
  if (a > std::numeric_limits<std::uint64_t>::max() - b) {
    throw InputError("flop_count overflows 64 bits");
  }
  return a + b;
}

std::uint64_t product(std::initializer_list<std::size_t> terms) {
  std::uint64_t p = 1;
  for (std::size_t t : terms) p = checked_mul(p, t);
  return p;
}

}  // namespace

Conv3dKernel Conv3dKernel::zeros(std::size_t cout, std::size_t cin, const Extent3& kernel,
                                 const Extent3& stride, const Extent3& padding) {
  Conv3dKernel k;
  k.weights = Tensor5({cout, cin, kernel[0], kernel[1], kernel[2]});
  k.bias.assign(cout, 0.0);
  k.stride = stride;
  k.padding = padding;
  k.validate();
  return k;
}

void Conv3dKernel::validate() const {
  const auto kern = kernel();
  if (kern[0] == 0 || kern[1] == 0 || kern[2] == 0) {
    throw ShapeError("conv kernel extents must be >= 1, got " + extent_string(kern));
  }
  if (stride[0] == 0 || stride[1] == 0 || stride[2] == 0) {
    throw ShapeError("conv strides must be >= 1, got " + extent_string(stride));
  }
  if (bias.size() != out_channels()) {
    throw ShapeError("conv bias length " + std::to_string(bias.size()) + " != Cout " +
                     std::to_string(out_channels()));
  }
}

FactorizedConv3d FactorizedConv3d::zeros(std::size_t cin, std::size_t cmid, std::size_t cout,
                                         const Extent3& kernel, const Extent3& stride,
                                         const Extent3& padding) {
  FactorizedConv3d f;
  f.temporal = Conv3dKernel::zeros(cmid, cin, {kernel[0], 1, 1}, {stride[0], 1, 1},
                                   {padding[0], 0, 0});
  f.spatial = Conv3dKernel::zeros(cout, cmid, {1, kernel[1], kernel[2]}, {1, stride[1], stride[2]},
                                  {0, padding[1], padding[2]});
  return f;
}

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  const std::size_t padded = in + 2 * pad;
  if (stride == 0 || k == 0 || padded < k) return 0;
  return (padded - k) / stride + 1;
}

Shape5 conv3d_output_shape(const Shape5& x, const Conv3dKernel& k) {
  k.validate();
  if (x[1] != k.in_channels()) {
    throw ShapeError("conv3d input has " + std::to_string(x[1]) + " channels, kernel expects " +
                     std::to_string(k.in_channels()) + " (input " + to_string(x) + ")");
  }
  const auto kern = k.kernel();
  Shape5 out{x[0], k.out_channels(), 0, 0, 0};
  for (std::size_t ax = 0; ax < 3; ++ax) {
    out[ax + 2] = conv_out_extent(x[ax + 2], kern[ax], k.stride[ax], k.padding[ax]);
    if (out[ax + 2] == 0) {
      throw ShapeError("conv3d output extent is not positive: input " + to_string(x) +
                       ", kernel " + extent_string(kern) + ", padding " +
                       extent_string(k.padding));
    }
  }
  return out;
}

Tensor5 conv3d_forward(const Tensor5& x, const Conv3dKernel& k) {
  const ConvGeometry g = make_geometry(x, k);
  Tensor5 out({static_cast<std::size_t>(g.batch), static_cast<std::size_t>(g.cout),
               static_cast<std::size_t>(g.ot), static_cast<std::size_t>(g.oh),
               static_cast<std::size_t>(g.ow)});
  const Index in_plane = g.t * g.h * g.w;
  const Index out_plane = g.ot * g.oh * g.ow;
  const double* xd = x.data().data();
  const double* wd = k.weights.data().data();
  double* od = out.data().data();

  for (Index n = 0; n < g.batch; ++n) {
    for (Index co = 0; co < g.cout; ++co) {
      double* obase = od + (n * g.cout + co) * out_plane;
      std::fill(obase, obase + out_plane, k.bias[static_cast<std::size_t>(co)]);
      for (Index ci = 0; ci < g.cin; ++ci) {
        const double* xbase = xd + (n * g.cin + ci) * in_plane;
        const double* wbase = wd + (co * g.cin + ci) * g.kt * g.kh * g.kw;
        for (Index a = 0; a < g.kt; ++a) {
          const auto [tlo, thi] = valid_range(g.ot, g.t, g.st, g.pt, a);
          for (Index b = 0; b < g.kh; ++b) {
            const auto [hlo, hhi] = valid_range(g.oh, g.h, g.sh, g.ph, b);
            for (Index c = 0; c < g.kw; ++c) {
              const auto [wlo, whi] = valid_range(g.ow, g.w, g.sw, g.pw, c);
              const double wv = wbase[(a * g.kh + b) * g.kw + c];
              for (Index ot = tlo; ot < thi; ++ot) {
                const Index it = ot * g.st - g.pt + a;
                for (Index oh = hlo; oh < hhi; ++oh) {
                  const Index ih = oh * g.sh - g.ph + b;
                  double* orow = obase + (ot * g.oh + oh) * g.ow;
                  const double* xrow = xbase + (it * g.h + ih) * g.w;
                  const Index shift = c - g.pw;
                  if (g.sw == 1) {
                    for (Index ow = wlo; ow < whi; ++ow) orow[ow] += wv * xrow[ow + shift];
                  } else {
                    for (Index ow = wlo; ow < whi; ++ow) orow[ow] += wv * xrow[ow * g.sw + shift];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
  return out;
}

ConvGrads conv3d_backward(const Tensor5& x, const Conv3dKernel& k, const Tensor5& grad_out,
                          bool need_grad_x) {
  const ConvGeometry g = make_geometry(x, k);
  const Shape5 expected = conv3d_output_shape(x.shape(), k);
  if (grad_out.shape() != expected) {
    throw ShapeError("conv3d_backward grad_out shape " + to_string(grad_out.shape()) +
                     " != forward output shape " + to_string(expected));
  }
  ConvGrads grads;
  if (need_grad_x) grads.grad_x = Tensor5(x.shape());
  grads.grad_w = Tensor5(k.weights.shape());
  grads.grad_b.assign(k.out_channels(), 0.0);

  const Index in_plane = g.t * g.h * g.w;
  const Index out_plane = g.ot * g.oh * g.ow;
  const double* xd = x.data().data();
  const double* wd = k.weights.data().data();
  const double* god = grad_out.data().data();
  double* gxd = need_grad_x ? grads.grad_x.data().data() : nullptr;
  double* gwd = grads.grad_w.data().data();

  for (Index n = 0; n < g.batch; ++n) {
    for (Index co = 0; co < g.cout; ++co) {
      const double* gobase = god + (n * g.cout + co) * out_plane;
      double bsum = 0.0;
      for (Index i = 0; i < out_plane; ++i) bsum += gobase[i];
      grads.grad_b[static_cast<std::size_t>(co)] += bsum;
      for (Index ci = 0; ci < g.cin; ++ci) {
        const double* xbase = xd + (n * g.cin + ci) * in_plane;
        double* gxbase = need_grad_x ? gxd + (n * g.cin + ci) * in_plane : nullptr;
        const Index wofs = (co * g.cin + ci) * g.kt * g.kh * g.kw;
        for (Index a = 0; a < g.kt; ++a) {
          const auto [tlo, thi] = valid_range(g.ot, g.t, g.st, g.pt, a);
          for (Index b = 0; b < g.kh; ++b) {
            const auto [hlo, hhi] = valid_range(g.oh, g.h, g.sh, g.ph, b);
            for (Index c = 0; c < g.kw; ++c) {
              const auto [wlo, whi] = valid_range(g.ow, g.w, g.sw, g.pw, c);
              const Index widx = wofs + (a * g.kh + b) * g.kw + c;
              const double wv = wd[widx];
              double acc = 0.0;
              for (Index ot = tlo; ot < thi; ++ot) {
                const Index it = ot * g.st - g.pt + a;
                for (Index oh = hlo; oh < hhi; ++oh) {
                  const Index ih = oh * g.sh - g.ph + b;
                  const double* gorow = gobase + (ot * g.oh + oh) * g.ow;
                  const Index xofs = (it * g.h + ih) * g.w;
                  const Index shift = c - g.pw;
                  const double* xrow = xbase + xofs;
                  for (Index ow = wlo; ow < whi; ++ow) acc += gorow[ow] * xrow[ow * g.sw + shift];
                  if (gxbase) {
                    double* gxrow = gxbase + xofs;
                    for (Index ow = wlo; ow < whi; ++ow) gxrow[ow * g.sw + shift] += wv * gorow[ow];
                  }
                }
              }
              gwd[widx] += acc;
            }
          }
        }
      }
    }
  }
  return grads;
}

Tensor5 conv3d_factorized_forward(const Tensor5& x, const FactorizedConv3d& f) {
  return conv3d_forward(conv3d_forward(x, f.temporal), f.spatial);
}

FactorizedGrads conv3d_factorized_backward(const Tensor5& x, const FactorizedConv3d& f,
                                           const Tensor5& grad_out, bool need_grad_x) {
  const Tensor5 mid = conv3d_forward(x, f.temporal);
  FactorizedGrads grads;
  grads.spatial = conv3d_backward(mid, f.spatial, grad_out, true);
  grads.temporal = conv3d_backward(x, f.temporal, grads.spatial.grad_x, need_grad_x);
  grads.grad_x = std::move(grads.temporal.grad_x);
  grads.temporal.grad_x = Tensor5();
  grads.spatial.grad_x = Tensor5();
  return grads;
}

PoolResult maxpool3d_forward(const Tensor5& x, const Extent3& window, const Extent3& stride) {
  const auto& s = x.shape();
  Shape5 out_shape{s[0], s[1], 0, 0, 0};
  for (std::size_t ax = 0; ax < 3; ++ax) {
    if (window[ax] == 0 || stride[ax] == 0) {
      throw ShapeError("maxpool window and stride must be >= 1, got window " +
                       extent_string(window) + " stride " + extent_string(stride));
    }
    out_shape[ax + 2] = conv_out_extent(s[ax + 2], window[ax], stride[ax], 0);
    if (out_shape[ax + 2] == 0) {
      throw ShapeError("maxpool window " + extent_string(window) + " larger than input " +
                       to_string(s));
    }
  }
  PoolResult r;
  r.output = Tensor5(out_shape);
  r.argmax.input_shape = s;
  r.argmax.indices.resize(r.output.size());
  std::size_t o = 0;
  for (std::size_t n = 0; n < s[0]; ++n)
    for (std::size_t c = 0; c < s[1]; ++c)
      for (std::size_t ot = 0; ot < out_shape[2]; ++ot)
        for (std::size_t oh = 0; oh < out_shape[3]; ++oh)
          for (std::size_t ow = 0; ow < out_shape[4]; ++ow, ++o) {
            std::size_t best_idx = x.offset(n, c, ot * stride[0], oh * stride[1], ow * stride[2]);
            double best = x[best_idx];
            for (std::size_t a = 0; a < window[0]; ++a)
              for (std::size_t b = 0; b < window[1]; ++b)
                for (std::size_t cc = 0; cc < window[2]; ++cc) {
                  const std::size_t idx = x.offset(n, c, ot * stride[0] + a, oh * stride[1] + b,
                                                   ow * stride[2] + cc);
                  if (x[idx] > best) {
                    best = x[idx];
                    best_idx = idx;
                  }
                }
            r.output[o] = best;
            r.argmax.indices[o] = best_idx;
          }
  return r;
}

Tensor5 maxpool3d_backward(const PoolArgmax& argmax, const Tensor5& grad_out,
                           const Shape5& in_shape) {
  if (argmax.indices.size() != grad_out.size()) {
    throw ShapeError("maxpool3d_backward: grad_out " + to_string(grad_out.shape()) + " has " +
                     std::to_string(grad_out.size()) + " elements, argmax has " +
                     std::to_string(argmax.indices.size()));
  }
  Tensor5 grad_in(in_shape);
  for (std::size_t i = 0; i < argmax.indices.size(); ++i) {
    const std::size_t idx = argmax.indices[i];
    if (idx >= grad_in.size()) {
      throw CorruptionError("pool argmax index " + std::to_string(idx) +
                            " outside input of shape " + to_string(in_shape) +
                            "; forward/backward mismatch");
    }
    grad_in[idx] += grad_out[i];
  }
  return grad_in;
}

Tensor5 fc_forward(const Tensor5& x, const Tensor5& w, std::span<const double> b) {
  if (!x.is_matrix() || !w.is_matrix() || x.cols() != w.rows() || b.size() != w.cols()) {
    throw ShapeError("fc_forward shape mismatch: x " + to_string(x.shape()) + ", w " +
                     to_string(w.shape()) + ", bias " + std::to_string(b.size()));
  }
  Tensor5 out = matmul2d(x, w);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += b[j];
  return out;
}

FcGrads fc_backward(const Tensor5& x, const Tensor5& w, const Tensor5& grad_out) {
  if (!grad_out.is_matrix() || grad_out.rows() != x.rows() || grad_out.cols() != w.cols() ||
      x.cols() != w.rows()) {
    throw ShapeError("fc_backward shape mismatch: x " + to_string(x.shape()) + ", w " +
                     to_string(w.shape()) + ", grad_out " + to_string(grad_out.shape()));
  }
  FcGrads g;
  g.grad_x = matmul2d(grad_out, transpose2d(w));
  g.grad_w = matmul2d(transpose2d(x), grad_out);
  g.grad_b.assign(w.cols(), 0.0);
  for (std::size_t i = 0; i < grad_out.rows(); ++i)
    for (std::size_t j = 0; j < grad_out.cols(); ++j) g.grad_b[j] += grad_out(i, j);
  return g;
}

Tensor5 relu_backward(const Tensor5& pre_activation, const Tensor5& grad) {
  if (pre_activation.shape() != grad.shape()) {
    throw ShapeError("relu_backward shape mismatch: " + to_string(pre_activation.shape()) +
                     " vs " + to_string(grad.shape()));
  }
  Tensor5 out(grad.shape());
  for (std::size_t i = 0; i < grad.size(); ++i) out[i] = pre_activation[i] > 0.0 ? grad[i] : 0.0;
  return out;
}

Tensor5 softmax(const Tensor5& logits) {
  if (!logits.is_matrix()) throw ShapeError("softmax expects a matrix, got " + to_string(logits.shape()));
  Tensor5 p(logits.shape());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < logits.cols(); ++j) mx = std::max(mx, logits(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      p(i, j) = std::exp(logits(i, j) - mx);
      z += p(i, j);
    }
    for (std::size_t j = 0; j < logits.cols(); ++j) p(i, j) /= z;
  }
  return p;
}

LossAndGrad softmax_cross_entropy(const Tensor5& logits, std::span<const std::size_t> labels) {
  if (!logits.is_matrix() || labels.size() != logits.rows() || logits.rows() == 0) {
    throw ShapeError("softmax_cross_entropy: logits " + to_string(logits.shape()) + " with " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.rows(), c = logits.cols();
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) {
      throw InputError("label " + std::to_string(labels[i]) + " out of range for " +
                       std::to_string(c) + " classes");
    }
  }
  LossAndGrad r;
  r.grad_logits = Tensor5(logits.shape());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, logits(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(logits(i, j) - mx);
    const double log_z = std::log(z);
    r.loss += (log_z - (logits(i, labels[i]) - mx)) * inv_n;
    for (std::size_t j = 0; j < c; ++j) {
      const double p = std::exp(logits(i, j) - mx - log_z);
      r.grad_logits(i, j) = (p - (j == labels[i] ? 1.0 : 0.0)) * inv_n;
    }
  }
  return r;
}

std::uint64_t flop_count(ConvKind kind, const FlopDims& d) {
  const Extent3 tmp = d.temporal_out.value_or(Extent3{d.t_out, d.h_out, d.w_out});
  for (std::size_t v : {d.n, d.cin, d.cmid, d.cout, d.t_out, d.h_out, d.w_out, d.kt, d.kh, d.kw,
                        tmp[0], tmp[1], tmp[2]}) {
    if (v == 0) throw InputError("flop_count: every extent must be >= 1");
  }
  if (kind == ConvKind::kDense) {
    return product({2, d.n, d.cout, d.t_out, d.h_out, d.w_out, d.cin, d.kt, d.kh, d.kw});
  }
  const std::uint64_t temporal = product({2, d.n, d.cmid, tmp[0], tmp[1], tmp[2], d.cin, d.kt});
  const std::uint64_t spatial =
      product({2, d.n, d.cout, d.t_out, d.h_out, d.w_out, d.cmid, d.kh, d.kw});
  return checked_add(temporal, spatial);
}

FlopDims flop_dims_for(const Shape5& input, const FactorizedConv3d& f) {
  const Shape5 mid = conv3d_output_shape(input, f.temporal);
  const Shape5 out = conv3d_output_shape(mid, f.spatial);
  FlopDims d;
  d.n = input[0];
  d.cin = input[1];
  d.cmid = mid[1];
  d.cout = out[1];
  d.t_out = out[2];
  d.h_out = out[3];
  d.w_out = out[4];
  d.kt = f.temporal.kernel()[0];
  d.kh = f.spatial.kernel()[1];
  d.kw = f.spatial.kernel()[2];
  d.temporal_out = Extent3{mid[2], mid[3], mid[4]};
  return d;
}

}  // namespace stconv
