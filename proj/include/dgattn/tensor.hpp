#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dgattn {

/// Raised when tensor extents do not line up for an operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a caller breaks an API contract that is not a shape problem,
/// e.g. running a backward pass against a cache from a different forward.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using Shape = std::vector<std::size_t>;

/// Dense row-major array of doubles. The last axis is contiguous.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  /// 2-D literal, e.g. Tensor::matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Rows and columns of a rank-2 tensor. Throws DimensionError otherwise.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Throws DimensionError with `what` when the condition fails.
void require_shape(bool ok, const std::string& what);

/// Max |a - b| over all elements. Shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);
/// Bit-for-bit comparison of shape and data.
bool bitwise_equal(const Tensor& a, const Tensor& b);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);
Tensor& operator+=(Tensor& a, const Tensor& b);

/// Deterministic pseudorandom source.
///
/// The bit stream is std::mt19937_64, whose output sequence is fixed by the
/// C++ standard. Uniform doubles take the top 53 bits; normals use the
/// Box-Muller transform on two uniforms. Standard library distributions are
/// avoided because their algorithms differ between implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  Tensor normal_tensor(Shape shape, double stddev = 1.0);
  Tensor uniform_tensor(Shape shape, double lo, double hi);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace dgattn
