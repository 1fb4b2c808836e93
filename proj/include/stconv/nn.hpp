#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "stconv/tensor.hpp"

namespace stconv {

/// (t, h, w) triple for kernel extents, strides, paddings and pool windows.
using Extent3 = std::array<std::size_t, 3>;

/// Dense 3D convolution kernel. Cross-correlation, zero padding.
struct Conv3dKernel {
  Tensor5 weights;  // (Cout, Cin, kt, kh, kw)
  std::vector<double> bias;  // Cout
  Extent3 stride{1, 1, 1};
  Extent3 padding{0, 0, 0};

  static Conv3dKernel zeros(std::size_t cout, std::size_t cin, const Extent3& kernel,
                            const Extent3& stride = {1, 1, 1},
                            const Extent3& padding = {0, 0, 0});

  std::size_t out_channels() const { return weights.extent(0); }
  std::size_t in_channels() const { return weights.extent(1); }
  Extent3 kernel() const { return {weights.extent(2), weights.extent(3), weights.extent(4)}; }

  /// Throws ShapeError when the invariants (extents, strides, bias length) are broken.
  void validate() const;
};

/// Temporal (kt,1,1) stage followed by a spatial (1,kh,kw) stage.
struct FactorizedConv3d {
  Conv3dKernel temporal;  // Cin -> Cmid
  Conv3dKernel spatial;   // Cmid -> Cout

  /// Zero-initialised stages whose composition matches a dense (kt,kh,kw)
  /// convolution with the given stride and padding.
  static FactorizedConv3d zeros(std::size_t cin, std::size_t cmid, std::size_t cout,
                                const Extent3& kernel, const Extent3& stride = {1, 1, 1},
                                const Extent3& padding = {0, 0, 0});
};

/// Output extents of a convolution or pooling along one axis, 0 if none fit.
std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad);

Shape5 conv3d_output_shape(const Shape5& x, const Conv3dKernel& k);

Tensor5 conv3d_forward(const Tensor5& x, const Conv3dKernel& k);

struct ConvGrads {
  Tensor5 grad_x;  // empty when not requested
  Tensor5 grad_w;
  std::vector<double> grad_b;
};

/// Gradients of sum(out * grad_out). grad_x is skipped when need_grad_x is false.
ConvGrads conv3d_backward(const Tensor5& x, const Conv3dKernel& k, const Tensor5& grad_out,
                          bool need_grad_x = true);

Tensor5 conv3d_factorized_forward(const Tensor5& x, const FactorizedConv3d& f);

struct FactorizedGrads {
  Tensor5 grad_x;
  ConvGrads temporal;  // grad_x unused
  ConvGrads spatial;   // grad_x unused
};

FactorizedGrads conv3d_factorized_backward(const Tensor5& x, const FactorizedConv3d& f,
                                           const Tensor5& grad_out, bool need_grad_x = true);

/// Flat input index of the selected maximum for every output voxel.
struct PoolArgmax {
  Shape5 input_shape{};
  std::vector<std::size_t> indices;
};

struct PoolResult {
  Tensor5 output;
  PoolArgmax argmax;
};

/// Ties go to the lowest flat index inside the window.
PoolResult maxpool3d_forward(const Tensor5& x, const Extent3& window, const Extent3& stride);

/// Scatters grad_out back through argmax; overlapping windows accumulate.
Tensor5 maxpool3d_backward(const PoolArgmax& argmax, const Tensor5& grad_out,
                           const Shape5& in_shape);

/// x (N x Din) . w (Din x Dout) + b.
Tensor5 fc_forward(const Tensor5& x, const Tensor5& w, std::span<const double> b);

struct FcGrads {
  Tensor5 grad_x;
  Tensor5 grad_w;
  std::vector<double> grad_b;
};

FcGrads fc_backward(const Tensor5& x, const Tensor5& w, const Tensor5& grad_out);

/// grad * (pre > 0).
Tensor5 relu_backward(const Tensor5& pre_activation, const Tensor5& grad);

/// Row-wise softmax with max subtraction.
Tensor5 softmax(const Tensor5& logits);

struct LossAndGrad {
  double loss = 0.0;
  Tensor5 grad_logits;
};

/// Mean cross-entropy over rows; grad = (softmax - onehot) / N.
LossAndGrad softmax_cross_entropy(const Tensor5& logits, std::span<const std::size_t> labels);

enum class ConvKind { kDense, kFactorized };

struct FlopDims {
  std::size_t n = 1, cin = 1, cmid = 1, cout = 1;
  std::size_t t_out = 1, h_out = 1, w_out = 1;
  std::size_t kt = 1, kh = 1, kw = 1;
  /// Temporal-stage output extents. Defaults to the final output extents,
  /// which holds for stride 1 with "same" padding.
  std::optional<Extent3> temporal_out;
};

/// Multiply-adds counted as two FLOPs. Throws InputError on a zero extent
/// and on 64-bit overflow.
std::uint64_t flop_count(ConvKind kind, const FlopDims& dims);

/// FlopDims for a factorized layer applied to an input of the given shape.
FlopDims flop_dims_for(const Shape5& input, const FactorizedConv3d& f);

}  // namespace stconv
