#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace stconv {

/// Extents in (N, C, T, H, W) order. Lower-rank data uses leading ones.
using Shape5 = std::array<std::size_t, 5>;

std::string to_string(const Shape5& shape);

/// Product of the extents; throws std::bad_alloc style error on overflow.
std::size_t element_count(const Shape5& shape);

/// Dense row-major tensor of doubles, W fastest.
class Tensor5 {
 public:
  Tensor5() : shape_{0, 0, 0, 0, 0} {}
  explicit Tensor5(const Shape5& shape, double value = 0.0);
  Tensor5(const Shape5& shape, std::vector<double> data);

  /// m x n matrix stored as (1, 1, 1, m, n).
  static Tensor5 matrix(std::size_t rows, std::size_t cols, double value = 0.0);
  static Tensor5 matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);
  /// T x H x W volume stored as (1, 1, T, H, W).
  static Tensor5 volume(std::size_t t, std::size_t h, std::size_t w, double value = 0.0);

  const Shape5& shape() const noexcept { return shape_; }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Row-major strides in elements.
  Shape5 strides() const noexcept;

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t t, std::size_t h,
                     std::size_t w) const noexcept {
    return (((n * shape_[1] + c) * shape_[2] + t) * shape_[3] + h) * shape_[4] + w;
  }
  double& at(std::size_t n, std::size_t c, std::size_t t, std::size_t h, std::size_t w) {
    return data_[offset(n, c, t, h, w)];
  }
  double at(std::size_t n, std::size_t c, std::size_t t, std::size_t h, std::size_t w) const {
    return data_[offset(n, c, t, h, w)];
  }

  // Matrix accessors; valid when the three leading extents are 1.
  std::size_t rows() const noexcept { return shape_[3]; }
  std::size_t cols() const noexcept { return shape_[4]; }
  bool is_matrix() const noexcept { return shape_[0] == 1 && shape_[1] == 1 && shape_[2] == 1; }
  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[4] + c]; }
  const double& operator()(std::size_t r, std::size_t c) const noexcept {
    return data_[r * shape_[4] + c];
  }

  /// Same data, new extents. Element counts must agree.
  Tensor5 reshaped(const Shape5& shape) const;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor5& a, const Tensor5& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape5 shape_;
  std::vector<double> data_;
};

Tensor5 create_filled(const Shape5& shape, double value);

/// 0, 1, 2, ... in flat order.
Tensor5 arange(const Shape5& shape);

enum class ElementwiseOp { kAdd, kSub, kMul, kMax, kRelu, kScale };

/// Binary op on identically shaped tensors. kRelu ignores b.
Tensor5 elementwise(ElementwiseOp op, const Tensor5& a, const Tensor5& b);
/// Tensor-scalar op; the only form of broadcasting supported.
Tensor5 elementwise(ElementwiseOp op, const Tensor5& a, double scalar);

Tensor5 relu(const Tensor5& a);
Tensor5 add(const Tensor5& a, const Tensor5& b);
Tensor5 sub(const Tensor5& a, const Tensor5& b);
Tensor5 mul(const Tensor5& a, const Tensor5& b);
Tensor5 scale(const Tensor5& a, double factor);

/// (m x k) . (k x n) accumulated in double.
Tensor5 matmul2d(const Tensor5& a, const Tensor5& b);
Tensor5 transpose2d(const Tensor5& a);

/// Copy of the axis-aligned block [origin, origin + extent).
Tensor5 slice_window(const Tensor5& t, const Shape5& origin, const Shape5& extent);

double max_abs_diff(const Tensor5& a, const Tensor5& b);

}  // namespace stconv
