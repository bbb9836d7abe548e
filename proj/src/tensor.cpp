#include "dgattn/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

namespace dgattn {

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void require_shape(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {
  for (auto e : shape_) require_shape(e > 0, "tensor extents must be positive");
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto e : shape_) require_shape(e > 0, "tensor extents must be positive");
  require_shape(data_.size() == element_count(shape_),
                "data length " + std::to_string(data_.size()) + " does not match shape " +
                    shape_string(shape_));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  require_shape(r > 0, "matrix literal needs at least one row");
  const std::size_t c = rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    require_shape(row.size() == c, "ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  require_shape(axis < shape_.size(), "axis out of range for shape " + shape_string(shape_));
  return shape_[axis];
}

std::size_t Tensor::rows() const {
  require_shape(rank() == 2, "expected a matrix, got shape " + shape_string(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  require_shape(rank() == 2, "expected a matrix, got shape " + shape_string(shape_));
  return shape_[1];
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t c = shape_.back();
  return std::span<double>(data_).subspan(r * c, c);
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t c = shape_.back();
  return std::span<const double>(data_).subspan(r * c, c);
}

Tensor Tensor::reshaped(Shape shape) const {
  require_shape(element_count(shape) == data_.size(),
                "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_shape(a.shape() == b.shape(),
                "shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a[i] - b[i]);
    if (std::isnan(d)) return d;
    m = std::max(m, d);
  }
  return m;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  out += b;
  return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  require_shape(a.shape() == b.shape(), "shape mismatch in subtraction");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Tensor operator*(double s, const Tensor& a) {
  Tensor out = a;
  for (auto& v : out.storage()) v *= s;
  return out;
}

Tensor& operator+=(Tensor& a, const Tensor& b) {
  require_shape(a.shape() == b.shape(), "shape mismatch in addition: " +
                                            shape_string(a.shape()) + " vs " +
                                            shape_string(b.shape()));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::index needs n > 0");
  // Rejection sampling keeps the distribution exact.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<std::size_t>(x % n);
}

Tensor Rng::normal_tensor(Shape shape, double stddev) {
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = stddev * normal();
  return t;
}

Tensor Rng::uniform_tensor(Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = uniform(lo, hi);
  return t;
}

}  // namespace dgattn
