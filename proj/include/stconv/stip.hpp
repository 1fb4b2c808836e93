#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "stconv/nn.hpp"
#include "stconv/tensor.hpp"

// Harris-3D spatio-temporal interest points, cuboid descriptors and the
// k-means bag-of-words encoder built on top of them.
//
// Videos are Tensor5 volumes shaped (1, 1, T, H, W).

namespace stconv {

inline constexpr std::size_t kDescriptorSize = 96;

using Descriptor = std::array<double, kDescriptorSize>;

struct StipParams {
  double sigma = 2.0;           // spatial scale, pixels
  double tau = 2.0;             // temporal scale, frames
  double s = 2.0;               // integration scale multiplier
  double k = 0.005;             // Harris constant
  double threshold_frac = 0.1;  // of the global response maximum
  std::size_t nms_radius = 2;
  Extent3 cuboid{4, 6, 6};      // descriptor half-extents (dt, dy, dx)
  std::size_t max_points = 200; // strongest points kept per clip; 0 keeps all

  void validate() const;
};

struct VoxelIndex {
  std::size_t t = 0, y = 0, x = 0;
  friend bool operator==(const VoxelIndex&, const VoxelIndex&) = default;
};

struct InterestPoint {
  std::size_t t = 0, y = 0, x = 0;
  double response = 0.0;
  Descriptor descriptor{};
};

struct Gradients3d {
  Tensor5 lx, ly, lt;
};

/// Normalised sampled Gaussian of radius ceil(3 * scale).
std::vector<double> gaussian_kernel1d(double scale);

/// Separable Gaussian along x, y (sigma) and t (tau), replicate borders.
Tensor5 gaussian_smooth3d(const Tensor5& volume, double sigma, double tau);

/// Central differences inside, one-sided at the borders.
Gradients3d gradients3d(const Tensor5& volume);

/// det(mu) - k * trace(mu)^3 of the integration-scale second-moment matrix.
Tensor5 harris_response(const Tensor5& smoothed, const StipParams& params);

/// Thresholded, non-maximum-suppressed response peaks with descriptors,
/// strongest first.
std::vector<InterestPoint> detect_stips(const Tensor5& video, const StipParams& params);

/// 2x2x2 subcells of 8 orientation bins + 4 |Lt| bins; L2-normalised unless zero.
Descriptor describe_point(const Tensor5& video, const VoxelIndex& p, const Extent3& cuboid);
Descriptor describe_point(const Gradients3d& grads, const VoxelIndex& p, const Extent3& cuboid);

struct Codebook {
  Tensor5 centers;  // K x D matrix

  std::size_t size() const { return centers.rows(); }
  std::size_t width() const { return centers.cols(); }
};

/// Index of the nearest center by squared L2, lowest index on ties.
std::size_t nearest_center(const Codebook& codebook, std::span<const double> point);

/// Sum of squared distances of each row of data to its nearest center.
double inertia(const Tensor5& data, const Codebook& codebook);

struct KMeansResult {
  Codebook codebook;
  std::vector<double> inertia_history;  // one entry per assignment pass, then the final value
  std::size_t iterations = 0;
};

/// k-means++ seeding and Lloyd iterations on the rows of an M x D matrix.
KMeansResult kmeans_fit(const Tensor5& data, std::size_t k, std::uint64_t seed,
                        std::size_t max_iters = 100);

/// L1-normalised histogram of nearest-center assignments.
std::vector<double> encode_bow(std::span<const InterestPoint> points, const Codebook& codebook);

}  // namespace stconv
