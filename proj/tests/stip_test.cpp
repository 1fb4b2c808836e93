#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "stconv/error.hpp"
#include "stconv/stip.hpp"
#include "support.hpp"

using namespace stconv;
using stconv::testing::random_tensor;

namespace {

// Direct (non-separated) 3-D Gaussian with clamped indices.
Tensor5 dense_gaussian_oracle(const Tensor5& v, double sigma, double tau) {
  const auto ks = gaussian_kernel1d(sigma);
  const auto kt = gaussian_kernel1d(tau);
  const long rs = static_cast<long>(ks.size() / 2), rt = static_cast<long>(kt.size() / 2);
  const long T = static_cast<long>(v.extent(2)), H = static_cast<long>(v.extent(3)),
             W = static_cast<long>(v.extent(4));
  Tensor5 out(v.shape());
  for (long t = 0; t < T; ++t)
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        double acc = 0.0;
        for (long a = -rt; a <= rt; ++a)
          for (long b = -rs; b <= rs; ++b)
            for (long c = -rs; c <= rs; ++c) {
              const double w = kt[a + rt] * ks[b + rs] * ks[c + rs];
              acc += w * v.at(0, 0, std::clamp(t + a, 0L, T - 1), std::clamp(y + b, 0L, H - 1),
                              std::clamp(x + c, 0L, W - 1));
            }
        out.at(0, 0, t, y, x) = acc;
      }
  return out;
}

Tensor5 static_video(Rng& rng, std::size_t frames, std::size_t h, std::size_t w) {
  const Tensor5 frame = random_tensor({1, 1, 1, h, w}, rng, 0.0, 1.0);
  Tensor5 v = Tensor5::volume(frames, h, w);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t i = 0; i < h * w; ++i) v[t * h * w + i] = frame[i];
  return v;
}

}  // namespace

TEST_CASE("gaussian_smooth3d") {
  const Tensor5 c = Tensor5::volume(5, 7, 6, 0.37);
  const Tensor5 sc = gaussian_smooth3d(c, 1.5, 0.8);
  for (double v : sc.data()) CHECK(std::abs(v - 0.37) < 1e-12);

  Tensor5 impulse = Tensor5::volume(9, 9, 9);
  impulse.at(0, 0, 4, 4, 4) = 1.0;
  const Tensor5 si = gaussian_smooth3d(impulse, 0.4, 0.4);
  double mass = 0.0;
  for (double v : si.data()) mass += v;
  CHECK(std::abs(mass - 1.0) < 1e-9);

  Rng rng(21);
  const Tensor5 r = random_tensor({1, 1, 6, 9, 8}, rng);
  CHECK(max_abs_diff(gaussian_smooth3d(r, 1.3, 0.9), dense_gaussian_oracle(r, 1.3, 0.9)) < 1e-9);

  CHECK_THROWS_AS(gaussian_smooth3d(Tensor5::volume(0, 3, 3), 1.0, 1.0), InputError);
  CHECK_THROWS_AS(gaussian_smooth3d(r, 0.0, 1.0), InputError);
}

TEST_CASE("gradients3d") {
  Tensor5 ramp = Tensor5::volume(4, 5, 6);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 6; ++x) ramp.at(0, 0, t, y, x) = static_cast<double>(x);
  const Gradients3d g = gradients3d(ramp);
  for (std::size_t i = 0; i < ramp.size(); ++i) {
    CHECK(g.lx[i] == 1.0);
    CHECK(g.ly[i] == 0.0);
    CHECK(g.lt[i] == 0.0);
  }

  const Gradients3d z = gradients3d(Tensor5::volume(3, 3, 3, 2.0));
  for (std::size_t i = 0; i < 27; ++i) CHECK((z.lx[i] == 0.0 && z.ly[i] == 0.0 && z.lt[i] == 0.0));

  Rng rng(22);
  const Tensor5 r = random_tensor({1, 1, 4, 5, 3}, rng);
  const Gradients3d gr = gradients3d(r);
  auto stencil = [&](long t, long y, long x, int axis) {
    long n = axis == 0 ? 4 : axis == 1 ? 5 : 3;
    long i = axis == 0 ? t : axis == 1 ? y : x;
    auto at = [&](long k) {
      return axis == 0 ? r.at(0, 0, k, y, x) : axis == 1 ? r.at(0, 0, t, k, x) : r.at(0, 0, t, y, k);
    };
    if (i == 0) return at(1) - at(0);
    if (i == n - 1) return at(n - 1) - at(n - 2);
    return (at(i + 1) - at(i - 1)) / 2.0;
  };
  for (long t = 0; t < 4; ++t)
    for (long y = 0; y < 5; ++y)
      for (long x = 0; x < 3; ++x) {
        CHECK(gr.lt.at(0, 0, t, y, x) == stencil(t, y, x, 0));
        CHECK(gr.ly.at(0, 0, t, y, x) == stencil(t, y, x, 1));
        CHECK(gr.lx.at(0, 0, t, y, x) == stencil(t, y, x, 2));
      }

  CHECK_THROWS_AS(gradients3d(Tensor5::volume(1, 4, 4)), InputError);
}

TEST_CASE("harris_response") {
  const StipParams params;
  const Tensor5 h0 = harris_response(Tensor5::volume(6, 8, 8, 0.5), params);
  for (double v : h0.data()) CHECK(v == 0.0);

  Rng rng(23);
  const Tensor5 stat = gaussian_smooth3d(static_video(rng, 6, 12, 12), 1.0, 1.0);
  const Tensor5 hs = harris_response(stat, params);
  for (double v : hs.data()) CHECK(v <= 0.0);

  SUBCASE("matches the structure-tensor determinant computed per voxel") {
    StipParams p;
    p.sigma = 0.8;
    p.tau = 0.7;
    p.s = 1.5;
    const Tensor5 L = gaussian_smooth3d(random_tensor({1, 1, 5, 6, 6}, rng), p.sigma, p.tau);
    const Gradients3d g = gradients3d(L);
    const double is = p.s * p.sigma, it = p.s * p.tau;
    const Tensor5* grads[3] = {&g.lx, &g.ly, &g.lt};
    Tensor5 mu[3][3];
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        mu[a][b] = dense_gaussian_oracle(mul(*grads[a], *grads[b]), is, it);
    const Tensor5 h = harris_response(L, p);
    for (std::size_t i = 0; i < h.size(); ++i) {
      auto m = [&](int a, int b) { return mu[a][b][i]; };
      // rule of Sarrus
      const double det = m(0, 0) * m(1, 1) * m(2, 2) + m(0, 1) * m(1, 2) * m(2, 0) +
                         m(0, 2) * m(1, 0) * m(2, 1) - m(0, 2) * m(1, 1) * m(2, 0) -
                         m(0, 0) * m(1, 2) * m(2, 1) - m(0, 1) * m(1, 0) * m(2, 2);
      const double tr = m(0, 0) + m(1, 1) + m(2, 2);
      CHECK(std::abs(h[i] - (det - p.k * tr * tr * tr)) < 1e-12);
    }
  }

  SUBCASE("invariant under a constant offset") {
    const Tensor5 v = random_tensor({1, 1, 6, 10, 10}, rng, 0.0, 1.0);
    const Tensor5 shifted = elementwise(ElementwiseOp::kAdd, v, 3.25);
    const Tensor5 ha = harris_response(gaussian_smooth3d(v, 1.0, 1.0), params);
    const Tensor5 hb = harris_response(gaussian_smooth3d(shifted, 1.0, 1.0), params);
    CHECK(max_abs_diff(ha, hb) < 1e-9);
  }

  SUBCASE("flashing corner peaks at the event") {
    const Tensor5 v = testing::flashing_corner_video();
    const Tensor5 h = harris_response(gaussian_smooth3d(v, params.sigma, params.tau), params);
    // brute-force argmax over the whole volume
    std::size_t best = 0;
    for (std::size_t i = 1; i < h.size(); ++i)
      if (h[i] > h[best]) best = i;
    const auto& s = h.shape();
    const std::size_t bx = best % s[4], by = (best / s[4]) % s[3], bt = best / (s[3] * s[4]);
    CHECK(testing::distance_to_flash_corner(bt, by, bx) <= 2);
  }
}

TEST_CASE("detect_stips") {
  const StipParams params;
  CHECK(detect_stips(Tensor5::volume(8, 16, 16, 0.4), params).empty());

  Rng rng(24);
  for (int i = 0; i < 5; ++i) CHECK(detect_stips(static_video(rng, 8, 16, 16), params).empty());

  SUBCASE("flashing corner") {
    const auto pts = detect_stips(testing::flashing_corner_video(), params);
    REQUIRE(!pts.empty());
    std::size_t near = 0;
    for (const auto& p : pts) near += testing::distance_to_flash_corner(p.t, p.y, p.x) <= 2 ? 1 : 0;
    CHECK(near == 1);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      CHECK(pts[i].response > 0.0);
      if (i > 0) CHECK(pts[i - 1].response >= pts[i].response);
      double n2 = 0.0;
      for (double d : pts[i].descriptor) n2 += d * d;
      CHECK(std::abs(std::sqrt(n2) - 1.0) < 1e-9);
    }
  }

  SUBCASE("deterministic and capped") {
    StipParams p = params;
    p.max_points = 3;
    const Tensor5 v = random_tensor({1, 1, 8, 20, 20}, rng, 0.0, 1.0);
    const auto a = detect_stips(v, p);
    const auto b = detect_stips(v, p);
    CHECK(a.size() <= 3);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].response == b[i].response);
      CHECK(a[i].descriptor == b[i].descriptor);
    }
  }

  SUBCASE("parameter and size errors") {
    StipParams bad = params;
    bad.threshold_frac = 0.0;
    CHECK_THROWS_AS(detect_stips(Tensor5::volume(8, 16, 16), bad), InputError);
    CHECK_THROWS_AS(detect_stips(Tensor5::volume(4, 16, 16), params), InputError);
  }
}

TEST_CASE("describe_point") {
  const Descriptor zero = describe_point(Tensor5::volume(8, 12, 12, 0.3), {4, 6, 6}, {4, 6, 6});
  for (double v : zero) CHECK(v == 0.0);

  Rng rng(25);
  const Tensor5 r = random_tensor({1, 1, 8, 12, 12}, rng);
  for (const VoxelIndex p : {VoxelIndex{0, 0, 0}, VoxelIndex{4, 6, 6}, VoxelIndex{7, 11, 11}}) {
    const Descriptor d = describe_point(r, p, {4, 6, 6});
    double n2 = 0.0;
    for (double v : d) n2 += v * v;
    CHECK(std::abs(std::sqrt(n2) - 1.0) < 1e-9);
  }

  SUBCASE("vertical edges only fill the +x / -x orientation bins") {
    // Static stripes that vary along x only: gradients point along +-x.
    Tensor5 v = Tensor5::volume(6, 12, 12);
    for (std::size_t t = 0; t < 6; ++t)
      for (std::size_t y = 0; y < 12; ++y)
        for (std::size_t x = 0; x < 12; ++x) v.at(0, 0, t, y, x) = (x / 3) % 2 == 0 ? 0.2 : 0.8;
    const Descriptor d = describe_point(v, {3, 6, 6}, {3, 6, 6});
    double along_x = 0.0, other = 0.0, temporal = 0.0;
    for (std::size_t cell = 0; cell < 8; ++cell) {
      for (std::size_t b = 0; b < 8; ++b) (b == 0 || b == 4 ? along_x : other) += d[cell * 12 + b];
      for (std::size_t b = 8; b < 12; ++b) temporal += d[cell * 12 + b];
    }
    CHECK(temporal == 0.0);
    CHECK(other == 0.0);
    CHECK(along_x > 0.0);
  }
}

TEST_CASE("kmeans_fit") {
  Rng rng(26);
  SUBCASE("K == M reproduces the points") {
    const Tensor5 data = random_tensor({1, 1, 1, 6, 4}, rng);
    const KMeansResult km = kmeans_fit(data, 6, 7);
    CHECK(km.inertia_history.back() == 0.0);
    std::vector<std::vector<double>> got, want;
    for (std::size_t i = 0; i < 6; ++i) {
      got.emplace_back(km.codebook.centers.data().begin() + i * 4,
                       km.codebook.centers.data().begin() + (i + 1) * 4);
      want.emplace_back(data.data().begin() + i * 4, data.data().begin() + (i + 1) * 4);
    }
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    CHECK(got == want);
  }

  SUBCASE("K == 1 is the centroid") {
    const Tensor5 data = random_tensor({1, 1, 1, 9, 3}, rng);
    const KMeansResult km = kmeans_fit(data, 1, 1);
    for (std::size_t j = 0; j < 3; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < 9; ++i) mean += data(i, j);
      CHECK(km.codebook.centers(0, j) == doctest::Approx(mean / 9.0).epsilon(1e-12));
    }
  }

  SUBCASE("two blobs reach the exhaustive 2-partition optimum") {
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t m = 6 + rng.below(7);
      Tensor5 data = Tensor5::matrix(m, 3);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < 3; ++j)
          data(i, j) = (i % 2 == 0 ? 5.0 : -5.0) + rng.uniform(-0.5, 0.5);
      double best = std::numeric_limits<double>::infinity();
      for (unsigned mask = 1; mask + 1 < (1u << m); ++mask) {
        double cost = 0.0;
        for (unsigned side = 0; side < 2; ++side) {
          double sum[3] = {0, 0, 0};
          std::size_t n = 0;
          for (std::size_t i = 0; i < m; ++i)
            if (((mask >> i) & 1u) == side) {
              for (std::size_t j = 0; j < 3; ++j) sum[j] += data(i, j);
              ++n;
            }
          for (std::size_t i = 0; i < m; ++i)
            if (((mask >> i) & 1u) == side)
              for (std::size_t j = 0; j < 3; ++j) {
                const double d = data(i, j) - sum[j] / static_cast<double>(n);
                cost += d * d;
              }
        }
        best = std::min(best, cost);
      }
      const KMeansResult km = kmeans_fit(data, 2, static_cast<std::uint64_t>(trial));
      CHECK(km.inertia_history.back() == doctest::Approx(best).epsilon(1e-9));
    }
  }

  SUBCASE("inertia never increases and runs are deterministic") {
    const Tensor5 data = random_tensor({1, 1, 1, 200, 5}, rng);
    const KMeansResult a = kmeans_fit(data, 7, 99);
    const KMeansResult b = kmeans_fit(data, 7, 99);
    CHECK(a.codebook.centers == b.codebook.centers);
    for (std::size_t i = 1; i < a.inertia_history.size(); ++i)
      CHECK(a.inertia_history[i] <= a.inertia_history[i - 1] * (1 + 1e-12));
  }

  SUBCASE("duplicate points still fill every center") {
    const Tensor5 data = Tensor5::matrix(5, 2, 1.0);
    const KMeansResult km = kmeans_fit(data, 3, 4);
    CHECK(km.codebook.size() == 3);
    CHECK(km.codebook.centers.all_finite());
  }

  CHECK_THROWS_AS(kmeans_fit(Tensor5::matrix(2, 3), 3, 0), InputError);
}

TEST_CASE("encode_bow") {
  Codebook cb{Tensor5::matrix(2, kDescriptorSize)};
  for (std::size_t j = 0; j < kDescriptorSize; ++j) cb.centers(1, j) = 1.0;

  const std::vector<InterestPoint> none;
  CHECK(encode_bow(none, cb) == std::vector<double>{0.0, 0.0});

  InterestPoint near0, near1;
  near0.descriptor.fill(0.1);
  near1.descriptor.fill(0.9);
  const std::vector<InterestPoint> all0{near0, near0, near0};
  CHECK(encode_bow(all0, cb) == std::vector<double>{1.0, 0.0});

  const std::vector<InterestPoint> split{near0, near1, near0};
  const auto h = encode_bow(split, cb);
  CHECK(h[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(h[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(std::abs(h[0] + h[1] - 1.0) < 1e-12);

  InterestPoint tie;
  tie.descriptor.fill(0.5);
  CHECK(nearest_center(cb, tie.descriptor) == 0);
}
