#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpolar::num {

// Raised for shape mismatches and for any operation that produces NaN/Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. Rank 0 (scalar), 1 and 2 are what the
// library produces; higher ranks are storable but no op consumes them.
class ValueGrid {
 public:
  ValueGrid() = default;
  explicit ValueGrid(Shape shape, double fill = 0.0);
  ValueGrid(Shape shape, std::vector<double> data);

  static ValueGrid scalar(double v);
  static ValueGrid vector(std::vector<double> v);
  static ValueGrid matrix(std::initializer_list<std::initializer_list<double>> rows);
  static ValueGrid zeros_like(const ValueGrid& other);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool is_scalar() const { return data_.size() == 1; }

  // Leading dimension for rank 2, 1 for rank <= 1.
  std::size_t rows() const;
  // Trailing dimension for rank >= 1, 1 for rank 0.
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const;

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  std::span<const double> row(std::size_t r) const;
  std::span<double> row(std::size_t r);

  ValueGrid reshaped(Shape shape) const;
  bool all_finite() const;
  // Throws NumericError naming `what` if any entry is NaN/Inf.
  void require_finite(const char* what) const;

  void fill(double v);

  friend bool operator==(const ValueGrid& a, const ValueGrid& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_product(const Shape& shape);

// Non-recording kernels. The tape ops reuse these for their forward values.
ValueGrid matmul(const ValueGrid& a, const ValueGrid& b);
// c += op(a) * op(b) with optional transposes; c must be presized.
void gemm_accumulate(const ValueGrid& a, bool transpose_a, const ValueGrid& b,
                     bool transpose_b, ValueGrid& c);
// y += x * w for a row vector x, rounding exactly like a one-row gemm.
void gemv_accumulate(std::span<const double> x, const ValueGrid& w, std::span<double> y);
ValueGrid softmax(const ValueGrid& logits);
// Hyperbolic tangent, rational form near 0 and exp form elsewhere; within a
// few ulp of std::tanh and roughly 3x cheaper.
double tanh_scalar(double x);

// Keeps freed grid buffers in the process heap instead of returning them to the
// kernel after every tape. Call once at startup; a no-op outside glibc.
void tune_allocator();
double gaussian_logprob(std::span<const double> mean, std::span<const double> log_std,
                        std::span<const double> action);

}  // namespace mpolar::num
