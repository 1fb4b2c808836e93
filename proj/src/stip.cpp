#include "stconv/stip.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <tuple>

#include "stconv/error.hpp"
#include "stconv/rng.hpp"

namespace stconv {

namespace {

void require_volume(const Tensor5& v, const char* what) {
  if (v.extent(0) != 1 || v.extent(1) != 1) {
    throw InputError(std::string(what) + " expects a (1, 1, T, H, W) volume, got " +
                     to_string(v.shape()));
  }
  if (v.empty()) throw InputError(std::string(what) + ": empty volume");
}

// One 1-D pass along axis 2 (t), 3 (y) or 4 (x) with replicate padding.
Tensor5 smooth_axis(const Tensor5& in, std::size_t axis, const std::vector<double>& kernel) {
  const auto& s = in.shape();
  const std::size_t T = s[2], H = s[3], W = s[4];
  const std::ptrdiff_t radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  const std::size_t len = s[axis];
  const std::size_t stride = axis == 4 ? 1 : axis == 3 ? W : H * W;
  Tensor5 out(s);
  std::vector<double> line(len);
  // Iterate every line along `axis`.
  const std::size_t lines = T * H * W / len;
  for (std::size_t l = 0; l < lines; ++l) {
    std::size_t base;
    if (axis == 4) {
      base = l * W;
    } else if (axis == 3) {
      base = (l / W) * H * W + (l % W);
    } else {
      base = l;
    }
    for (std::size_t i = 0; i < len; ++i) line[i] = in[base + i * stride];
    const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(len) - 1;
    for (std::size_t i = 0; i < len; ++i) {
      double acc = 0.0;
      for (std::ptrdiff_t r = -radius; r <= radius; ++r) {
        const std::ptrdiff_t j = std::clamp(static_cast<std::ptrdiff_t>(i) + r, std::ptrdiff_t{0}, last);
        acc += kernel[static_cast<std::size_t>(r + radius)] * line[static_cast<std::size_t>(j)];
      }
      out[base + i * stride] = acc;
    }
  }
  return out;
}

std::size_t orientation_bin(double gx, double gy) {
  const double theta = std::atan2(gy, gx);
  long bin = std::lround(theta / (std::numbers::pi / 4.0));
  bin %= 8;
  if (bin < 0) bin += 8;
  return static_cast<std::size_t>(bin);
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    d += diff * diff;
  }
  return d;
}

std::span<const double> row(const Tensor5& m, std::size_t r) {
  return m.data().subspan(r * m.cols(), m.cols());
}

}  // namespace

void StipParams::validate() const {
  if (!(sigma > 0.0) || !(tau > 0.0)) throw InputError("STIP sigma and tau must be > 0");
  if (!(s >= 1.0)) throw InputError("STIP integration multiplier s must be >= 1");
  if (!(k > 0.0)) throw InputError("STIP Harris constant k must be > 0");
  if (!(threshold_frac > 0.0 && threshold_frac <= 1.0)) {
    throw InputError("STIP threshold_frac must lie in (0, 1]");
  }
}

std::vector<double> gaussian_kernel1d(double scale) {
  if (!(scale > 0.0)) throw InputError("gaussian scale must be > 0");
  const std::size_t radius = static_cast<std::size_t>(std::ceil(3.0 * scale));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(radius);
    k[i] = std::exp(-d * d / (2.0 * scale * scale));
    total += k[i];
  }
  for (double& v : k) v /= total;
  return k;
}

Tensor5 gaussian_smooth3d(const Tensor5& volume, double sigma, double tau) {
  require_volume(volume, "gaussian_smooth3d");
  const auto spatial = gaussian_kernel1d(sigma);
  const auto temporal = gaussian_kernel1d(tau);
  Tensor5 out = smooth_axis(volume, 4, spatial);
  out = smooth_axis(out, 3, spatial);
  return smooth_axis(out, 2, temporal);
}

Gradients3d gradients3d(const Tensor5& volume) {
  require_volume(volume, "gradients3d");
  const auto& s = volume.shape();
  const std::size_t T = s[2], H = s[3], W = s[4];
  if (T < 2 || H < 2 || W < 2) {
    throw InputError("gradients3d needs every axis extent >= 2, got " + to_string(s));
  }
  Gradients3d g{Tensor5(s), Tensor5(s), Tensor5(s)};
  auto diff = [&](std::size_t i, std::size_t n, std::size_t idx, std::size_t stride) {
    if (i == 0) return volume[idx + stride] - volume[idx];
    if (i == n - 1) return volume[idx] - volume[idx - stride];
    return 0.5 * (volume[idx + stride] - volume[idx - stride]);
  };
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t idx = (t * H + y) * W + x;
        g.lx[idx] = diff(x, W, idx, 1);
        g.ly[idx] = diff(y, H, idx, W);
        g.lt[idx] = diff(t, T, idx, H * W);
      }
  return g;
}

Tensor5 harris_response(const Tensor5& smoothed, const StipParams& params) {
  params.validate();
  const Gradients3d g = gradients3d(smoothed);
  const double is = params.s * params.sigma;
  const double it = params.s * params.tau;
  const Tensor5 xx = gaussian_smooth3d(mul(g.lx, g.lx), is, it);
  const Tensor5 yy = gaussian_smooth3d(mul(g.ly, g.ly), is, it);
  const Tensor5 tt = gaussian_smooth3d(mul(g.lt, g.lt), is, it);
  const Tensor5 xy = gaussian_smooth3d(mul(g.lx, g.ly), is, it);
  const Tensor5 xt = gaussian_smooth3d(mul(g.lx, g.lt), is, it);
  const Tensor5 yt = gaussian_smooth3d(mul(g.ly, g.lt), is, it);
  Tensor5 h(smoothed.shape());
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double det = xx[i] * (yy[i] * tt[i] - yt[i] * yt[i]) -
                       xy[i] * (xy[i] * tt[i] - yt[i] * xt[i]) +
                       xt[i] * (xy[i] * yt[i] - yy[i] * xt[i]);
    const double trace = xx[i] + yy[i] + tt[i];
    h[i] = det - params.k * trace * trace * trace;
  }
  return h;
}

std::vector<InterestPoint> detect_stips(const Tensor5& video, const StipParams& params) {
  params.validate();
  require_volume(video, "detect_stips");
  const auto& s = video.shape();
  const std::size_t T = s[2], H = s[3], W = s[4];
  const std::size_t span = 2 * params.nms_radius + 1;
  if (T < span || H < span || W < span) {
    throw InputError("detect_stips: video " + to_string(s) + " smaller than the " +
                     std::to_string(span) + "^3 suppression window");
  }
  const Tensor5 smoothed = gaussian_smooth3d(video, params.sigma, params.tau);
  const Tensor5 response = harris_response(smoothed, params);
  const double peak = *std::max_element(response.data().begin(), response.data().end());
  if (!(peak > 0.0)) return {};
  const double threshold = params.threshold_frac * peak;

  const auto r = static_cast<std::ptrdiff_t>(params.nms_radius);
  auto is_peak = [&](std::ptrdiff_t t, std::ptrdiff_t y, std::ptrdiff_t x, double v) {
    for (std::ptrdiff_t dt = -r; dt <= r; ++dt)
      for (std::ptrdiff_t dy = -r; dy <= r; ++dy)
        for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
          if (dt == 0 && dy == 0 && dx == 0) continue;
          const std::ptrdiff_t nt = t + dt, ny = y + dy, nx = x + dx;
          if (nt < 0 || ny < 0 || nx < 0 || nt >= static_cast<std::ptrdiff_t>(T) ||
              ny >= static_cast<std::ptrdiff_t>(H) || nx >= static_cast<std::ptrdiff_t>(W)) {
            continue;
          }
          const double nv = response.at(0, 0, static_cast<std::size_t>(nt),
                                        static_cast<std::size_t>(ny), static_cast<std::size_t>(nx));
          // Equal neighbours only lose to an earlier (t, y, x).
          const bool earlier = std::tie(nt, ny, nx) < std::tie(t, y, x);
          if (nv > v || (nv == v && earlier)) return false;
        }
    return true;
  };

  std::vector<InterestPoint> points;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double v = response.at(0, 0, t, y, x);
        if (!(v > threshold)) continue;
        if (!is_peak(static_cast<std::ptrdiff_t>(t), static_cast<std::ptrdiff_t>(y),
                     static_cast<std::ptrdiff_t>(x), v)) {
          continue;
        }
        InterestPoint p;
        p.t = t;
        p.y = y;
        p.x = x;
        p.response = v;
        points.push_back(p);
      }
  std::stable_sort(points.begin(), points.end(), [](const InterestPoint& a, const InterestPoint& b) {
    return a.response > b.response;
  });
  if (params.max_points > 0 && points.size() > params.max_points) points.resize(params.max_points);

  const Gradients3d grads = gradients3d(smoothed);
  for (InterestPoint& p : points) p.descriptor = describe_point(grads, {p.t, p.y, p.x}, params.cuboid);
  return points;
}

Descriptor describe_point(const Tensor5& video, const VoxelIndex& p, const Extent3& cuboid) {
  return describe_point(gradients3d(video), p, cuboid);
}

Descriptor describe_point(const Gradients3d& grads, const VoxelIndex& p, const Extent3& cuboid) {
  const auto& s = grads.lx.shape();
  const std::size_t T = s[2], H = s[3], W = s[4];
  const std::size_t t0 = p.t > cuboid[0] ? p.t - cuboid[0] : 0;
  const std::size_t y0 = p.y > cuboid[1] ? p.y - cuboid[1] : 0;
  const std::size_t x0 = p.x > cuboid[2] ? p.x - cuboid[2] : 0;
  const std::size_t t1 = std::min(T, p.t + cuboid[0]);
  const std::size_t y1 = std::min(H, p.y + cuboid[1]);
  const std::size_t x1 = std::min(W, p.x + cuboid[2]);

  std::vector<double> magnitudes;
  for (std::size_t t = t0; t < t1; ++t)
    for (std::size_t y = y0; y < y1; ++y)
      for (std::size_t x = x0; x < x1; ++x) magnitudes.push_back(std::abs(grads.lt.at(0, 0, t, y, x)));
  std::array<double, 3> edges{0.0, 0.0, 0.0};
  if (!magnitudes.empty()) {
    std::vector<double> sorted = magnitudes;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t q = 0; q < 3; ++q) edges[q] = sorted[(q + 1) * sorted.size() / 4];
  }

  Descriptor d{};
  for (std::size_t t = t0; t < t1; ++t)
    for (std::size_t y = y0; y < y1; ++y)
      for (std::size_t x = x0; x < x1; ++x) {
        const std::size_t cell =
            (t >= p.t ? 4u : 0u) + (y >= p.y ? 2u : 0u) + (x >= p.x ? 1u : 0u);
        double* bins = d.data() + cell * 12;
        const double gx = grads.lx.at(0, 0, t, y, x);
        const double gy = grads.ly.at(0, 0, t, y, x);
        const double mag = std::hypot(gx, gy);
        if (mag > 0.0) bins[orientation_bin(gx, gy)] += mag;
        const double lt = std::abs(grads.lt.at(0, 0, t, y, x));
        if (lt > 0.0) {
          std::size_t q = 0;
          while (q < 3 && lt > edges[q]) ++q;
          bins[8 + q] += lt;
        }
      }
  double norm = 0.0;
  for (double v : d) norm += v * v;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (double& v : d) v /= norm;
  }
  return d;
}

std::size_t nearest_center(const Codebook& codebook, std::span<const double> point) {
  if (point.size() != codebook.width()) {
    throw ShapeError("point width " + std::to_string(point.size()) + " != codebook width " +
                     std::to_string(codebook.width()));
  }
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < codebook.size(); ++c) {
    const double d = squared_distance(point, row(codebook.centers, c));
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

double inertia(const Tensor5& data, const Codebook& codebook) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.rows(); ++i) {
    const auto p = row(data, i);
    total += squared_distance(p, row(codebook.centers, nearest_center(codebook, p)));
  }
  return total;
}

KMeansResult kmeans_fit(const Tensor5& data, std::size_t k, std::uint64_t seed,
                        std::size_t max_iters) {
  if (!data.is_matrix()) throw ShapeError("kmeans_fit expects an M x D matrix, got " + to_string(data.shape()));
  const std::size_t m = data.rows(), dim = data.cols();
  if (k < 1) throw InputError("kmeans_fit: K must be >= 1");
  if (m < k) {
    throw InputError("kmeans_fit: " + std::to_string(m) + " points cannot seed " +
                     std::to_string(k) + " clusters");
  }
  Rng rng(seed);
  Tensor5 centers = Tensor5::matrix(k, dim);
  auto set_center = [&](std::size_t c, std::size_t point) {
    const auto src = row(data, point);
    std::copy(src.begin(), src.end(), centers.data().begin() + static_cast<std::ptrdiff_t>(c * dim));
  };

  // k-means++ seeding.
  std::vector<bool> chosen(m, false);
  std::vector<double> dist(m, std::numeric_limits<double>::infinity());
  std::size_t first = static_cast<std::size_t>(rng.below(m));
  set_center(0, first);
  chosen[first] = true;
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      dist[i] = std::min(dist[i], squared_distance(row(data, i), row(centers, c - 1)));
      total += dist[i];
    }
    std::size_t pick = m;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        if (dist[i] <= 0.0) continue;
        acc += dist[i];
        pick = i;
        if (acc > target) break;
      }
    }
    if (pick == m) {
      // All remaining mass is zero: take the first unused point.
      pick = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), false) - chosen.begin());
    }
    set_center(c, pick);
    chosen[pick] = true;
  }

  KMeansResult result;
  std::vector<std::size_t> assign(m, k), previous;
  std::vector<double> point_dist(m);
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    const Codebook current{centers};
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      assign[i] = nearest_center(current, row(data, i));
      point_dist[i] = squared_distance(row(data, i), row(centers, assign[i]));
      total += point_dist[i];
    }
    result.inertia_history.push_back(total);
    result.iterations = iter + 1;
    if (assign == previous) break;
    previous = assign;

    std::vector<double> sums(k * dim, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < m; ++i) {
      const auto p = row(data, i);
      for (std::size_t j = 0; j < dim; ++j) sums[assign[i] * dim + j] += p[j];
      ++counts[assign[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Re-seed to the point currently farthest from its own center.
        std::size_t far = 0;
        for (std::size_t i = 1; i < m; ++i)
          if (point_dist[i] > point_dist[far]) far = i;
        set_center(c, far);
        point_dist[far] = 0.0;
        continue;
      }
      for (std::size_t j = 0; j < dim; ++j) {
        centers(c, j) = sums[c * dim + j] / static_cast<double>(counts[c]);
      }
    }
  }
  result.codebook = Codebook{centers};
  result.inertia_history.push_back(inertia(data, result.codebook));
  return result;
}

std::vector<double> encode_bow(std::span<const InterestPoint> points, const Codebook& codebook) {
  if (codebook.width() != kDescriptorSize) {
    throw ShapeError("encode_bow expects a codebook of width " + std::to_string(kDescriptorSize) +
                     ", got " + std::to_string(codebook.width()));
  }
  std::vector<double> hist(codebook.size(), 0.0);
  if (points.empty()) return hist;
  for (const InterestPoint& p : points) hist[nearest_center(codebook, p.descriptor)] += 1.0;
  const double n = static_cast<double>(points.size());
  for (double& v : hist) v /= n;
  return hist;
}

}  // namespace stconv
