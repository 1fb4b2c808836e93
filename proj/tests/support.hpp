// Test-only helpers: random fixtures and independent oracles.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>

#include "stconv/nn.hpp"
#include "stconv/rng.hpp"
#include "stconv/tensor.hpp"

namespace stconv::testing {

inline Tensor5 random_tensor(const Shape5& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor5 t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline Conv3dKernel random_kernel(std::size_t cout, std::size_t cin, const Extent3& k,
                                  const Extent3& stride, const Extent3& pad, Rng& rng) {
  Conv3dKernel kern = Conv3dKernel::zeros(cout, cin, k, stride, pad);
  kern.weights = random_tensor(kern.weights.shape(), rng);
  for (double& b : kern.bias) b = rng.uniform(-1.0, 1.0);
  return kern;
}

/// Zero-padded copy of x with (pt, ph, pw) zeros on each side of T, H, W.
inline Tensor5 zero_pad(const Tensor5& x, const Extent3& pad) {
  const auto& s = x.shape();
  Tensor5 out({s[0], s[1], s[2] + 2 * pad[0], s[3] + 2 * pad[1], s[4] + 2 * pad[2]});
  for (std::size_t n = 0; n < s[0]; ++n)
    for (std::size_t c = 0; c < s[1]; ++c)
      for (std::size_t t = 0; t < s[2]; ++t)
        for (std::size_t h = 0; h < s[3]; ++h)
          for (std::size_t w = 0; w < s[4]; ++w)
            out.at(n, c, t + pad[0], h + pad[1], w + pad[2]) = x.at(n, c, t, h, w);
  return out;
}

/// Convolution by explicit windows: every output voxel is the dot product of
/// a slice_window of the padded input with the kernel of its channel.
inline Tensor5 conv3d_oracle(const Tensor5& x, const Conv3dKernel& k) {
  const Tensor5 padded = zero_pad(x, k.padding);
  const auto kern = k.kernel();
  const std::size_t cin = x.extent(1);
  const std::size_t ot = (padded.extent(2) - kern[0]) / k.stride[0] + 1;
  const std::size_t oh = (padded.extent(3) - kern[1]) / k.stride[1] + 1;
  const std::size_t ow = (padded.extent(4) - kern[2]) / k.stride[2] + 1;
  Tensor5 out({x.extent(0), k.out_channels(), ot, oh, ow});
  for (std::size_t n = 0; n < x.extent(0); ++n)
    for (std::size_t co = 0; co < k.out_channels(); ++co)
      for (std::size_t t = 0; t < ot; ++t)
        for (std::size_t h = 0; h < oh; ++h)
          for (std::size_t w = 0; w < ow; ++w) {
            const Tensor5 window = slice_window(
                padded, {n, 0, t * k.stride[0], h * k.stride[1], w * k.stride[2]},
                {1, cin, kern[0], kern[1], kern[2]});
            const Tensor5 filt =
                slice_window(k.weights, {co, 0, 0, 0, 0}, {1, cin, kern[0], kern[1], kern[2]});
            double acc = k.bias[co];
            for (std::size_t i = 0; i < window.size(); ++i) acc += window[i] * filt[i];
            out.at(n, co, t, h, w) = acc;
          }
  return out;
}

/// Central-difference derivative of f with respect to every entry of params.
inline std::vector<double> numeric_gradient(const std::function<double()>& f,
                                            std::span<double> params, double h = 1e-5) {
  std::vector<double> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = f();
    params[i] = saved - h;
    const double down = f();
    params[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor).
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

/// sum(t * r), the scalar objective used for layer gradient checks.
inline double weighted_sum(const Tensor5& t, const Tensor5& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * r[i];
  return s;
}

/// 16x32x32 dark clip with a 4x4 bright square lit for the single frame 8,
/// occupying rows and columns [16, 20).
inline Tensor5 flashing_corner_video() {
  Tensor5 v = Tensor5::volume(16, 32, 32, 0.1);
  for (std::size_t y = 16; y < 20; ++y)
    for (std::size_t x = 16; x < 20; ++x) v.at(0, 0, 8, y, x) = 0.9;
  return v;
}

/// Chebyshev distance from (t, y, x) to the nearest corner of the flash.
inline std::size_t distance_to_flash_corner(std::size_t t, std::size_t y, std::size_t x) {
  auto d = [](std::size_t a, std::size_t b) { return a > b ? a - b : b - a; };
  std::size_t best = SIZE_MAX;
  for (std::size_t cy : {16u, 19u})
    for (std::size_t cx : {16u, 19u}) best = std::min(best, std::max({d(t, 8), d(y, cy), d(x, cx)}));
  return best;
}

}  // namespace stconv::testing
