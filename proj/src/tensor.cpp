#include "stconv/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <new>
#include <sstream>
#include <utility>

#include "stconv/error.hpp"

namespace stconv {

std::string to_string(const Shape5& shape) {
  std::ostringstream os;
  os << '(' << shape[0] << ", " << shape[1] << ", " << shape[2] << ", " << shape[3] << ", "
     << shape[4] << ')';
  return os.str();
}

std::size_t element_count(const Shape5& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) {
    if (e == 0) return 0;
  }
  for (std::size_t e : shape) {
    if (n > std::numeric_limits<std::size_t>::max() / e) throw std::bad_alloc();
    n *= e;
  }
  if (n > std::numeric_limits<std::size_t>::max() / sizeof(double)) throw std::bad_alloc();
  return n;
}

Tensor5::Tensor5(const Shape5& shape, double value)
    : shape_(shape), data_(element_count(shape), value) {}

Tensor5::Tensor5(const Shape5& shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != element_count(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + to_string(shape_));
  }
}

Tensor5 Tensor5::matrix(std::size_t rows, std::size_t cols, double value) {
  return Tensor5({1, 1, 1, rows, cols}, value);
}

Tensor5 Tensor5::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor5({1, 1, 1, rows, cols}, std::vector<double>(values));
}

Tensor5 Tensor5::volume(std::size_t t, std::size_t h, std::size_t w, double value) {
  return Tensor5({1, 1, t, h, w}, value);
}

Shape5 Tensor5::strides() const noexcept {
  Shape5 s{};
  s[4] = 1;
  for (int i = 3; i >= 0; --i) s[i] = s[i + 1] * shape_[i + 1];
  return s;
}

Tensor5 Tensor5::reshaped(const Shape5& shape) const {
  return Tensor5(shape, data_);
}

bool Tensor5::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor5 create_filled(const Shape5& shape, double value) { return Tensor5(shape, value); }

Tensor5 arange(const Shape5& shape) {
  Tensor5 t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  return t;
}

namespace {

double apply(ElementwiseOp op, double a, double b) {
  switch (op) {
    case ElementwiseOp::kAdd: return a + b;
    case ElementwiseOp::kSub: return a - b;
    case ElementwiseOp::kMul: return a * b;
    case ElementwiseOp::kMax: return std::max(a, b);
    case ElementwiseOp::kRelu: return a > 0.0 ? a : 0.0;
    case ElementwiseOp::kScale: return a * b;
  }
  return a;
}

}  // namespace

Tensor5 elementwise(ElementwiseOp op, const Tensor5& a, const Tensor5& b) {
  if (op != ElementwiseOp::kRelu && a.shape() != b.shape()) {
    throw ShapeError("elementwise shape mismatch: " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  Tensor5 out(a.shape());
  if (op == ElementwiseOp::kRelu) {
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(op, a[i], 0.0);
  } else {
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(op, a[i], b[i]);
  }
  return out;
}

Tensor5 elementwise(ElementwiseOp op, const Tensor5& a, double scalar) {
  Tensor5 out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(op, a[i], scalar);
  return out;
}

Tensor5 relu(const Tensor5& a) { return elementwise(ElementwiseOp::kRelu, a, 0.0); }
Tensor5 add(const Tensor5& a, const Tensor5& b) { return elementwise(ElementwiseOp::kAdd, a, b); }
Tensor5 sub(const Tensor5& a, const Tensor5& b) { return elementwise(ElementwiseOp::kSub, a, b); }
Tensor5 mul(const Tensor5& a, const Tensor5& b) { return elementwise(ElementwiseOp::kMul, a, b); }
Tensor5 scale(const Tensor5& a, double factor) {
  return elementwise(ElementwiseOp::kScale, a, factor);
}

Tensor5 matmul2d(const Tensor5& a, const Tensor5& b) {
  if (!a.is_matrix() || !b.is_matrix()) {
    throw ShapeError("matmul2d expects matrices, got " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul2d inner extent mismatch: " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor5 out = Tensor5::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = &out(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      const double* brow = &b(p, 0);
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return out;
}

Tensor5 transpose2d(const Tensor5& a) {
  if (!a.is_matrix()) throw ShapeError("transpose2d expects a matrix, got " + to_string(a.shape()));
  Tensor5 out = Tensor5::matrix(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Tensor5 slice_window(const Tensor5& t, const Shape5& origin, const Shape5& extent) {
  for (std::size_t ax = 0; ax < 5; ++ax) {
    if (origin[ax] > t.extent(ax) || extent[ax] > t.extent(ax) - origin[ax]) {
      throw BoundsError("window origin " + to_string(origin) + " extent " + to_string(extent) +
                        " exceeds shape " + to_string(t.shape()));
    }
  }
  Tensor5 out(extent);
  if (out.empty()) return out;
  std::size_t i = 0;
  for (std::size_t n = 0; n < extent[0]; ++n)
    for (std::size_t c = 0; c < extent[1]; ++c)
      for (std::size_t tt = 0; tt < extent[2]; ++tt)
        for (std::size_t h = 0; h < extent[3]; ++h) {
          const double* src =
              &t.data()[t.offset(origin[0] + n, origin[1] + c, origin[2] + tt, origin[3] + h,
                                 origin[4])];
          std::copy(src, src + extent[4], out.data().begin() + static_cast<std::ptrdiff_t>(i));
          i += extent[4];
        }
  return out;
}

double max_abs_diff(const Tensor5& a, const Tensor5& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff shape mismatch: " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace stconv
