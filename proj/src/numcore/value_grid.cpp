#include "mpolar/numcore/value_grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace mpolar::num {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_product(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

ValueGrid::ValueGrid(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

ValueGrid::ValueGrid(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw NumericError("ValueGrid: shape " + shape_string(shape_) + " does not match " +
                       std::to_string(data_.size()) + " values");
  }
}

ValueGrid ValueGrid::scalar(double v) { return ValueGrid({}, std::vector<double>{v}); }

ValueGrid ValueGrid::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return ValueGrid({n}, std::move(v));
}

ValueGrid ValueGrid::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw NumericError("ValueGrid::matrix: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return ValueGrid({r, c}, std::move(data));
}

ValueGrid ValueGrid::zeros_like(const ValueGrid& other) { return ValueGrid(other.shape_, 0.0); }

std::size_t ValueGrid::rows() const { return shape_.size() == 2 ? shape_[0] : 1; }

std::size_t ValueGrid::cols() const { return shape_.empty() ? 1 : shape_.back(); }

double ValueGrid::item() const {
  if (data_.size() != 1) {
    throw NumericError("ValueGrid::item: not a scalar " + shape_string(shape_));
  }
  return data_[0];
}

std::span<const double> ValueGrid::row(std::size_t r) const {
  return std::span<const double>(data_).subspan(r * cols(), cols());
}

std::span<double> ValueGrid::row(std::size_t r) {
  return std::span<double>(data_).subspan(r * cols(), cols());
}

ValueGrid ValueGrid::reshaped(Shape shape) const { return ValueGrid(std::move(shape), data_); }

bool ValueGrid::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void ValueGrid::require_finite(const char* what) const {
  if (!all_finite()) throw NumericError(std::string(what) + ": non-finite value produced");
}

void ValueGrid::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

namespace {

struct MatDims {
  std::size_t rows;
  std::size_t cols;
};

MatDims as_matrix(const ValueGrid& g, const char* what) {
  if (g.rank() == 2) return {g.shape()[0], g.shape()[1]};
  if (g.rank() == 1) return {1, g.shape()[0]};
  throw NumericError(std::string(what) + ": expected rank 1 or 2, got " + shape_string(g.shape()));
}

}  // namespace

namespace {

// c[m x n] += a[m x k] * b[k x n], a addressed as a[i * rs + p * cs], b and c
// contiguous. Every entry accumulates over p in ascending order, so a row's
// result does not depend on how many rows are in the batch.
using Lanes = double __attribute__((vector_size(64)));

inline Lanes load_lanes(const double* p) {
  Lanes v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store_lanes(double* p, Lanes v) { std::memcpy(p, &v, sizeof v); }

// MR rows by NL*8 columns held in registers.
template <std::size_t MR, std::size_t NL>
inline void gemm_tile(std::size_t n, std::size_t k, const double* a, std::size_t rs,
                      std::size_t cs, const double* b, double* c) {
  Lanes acc[MR][NL];
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t l = 0; l < NL; ++l) acc[r][l] = load_lanes(c + r * n + 8 * l);
  for (std::size_t p = 0; p < k; ++p) {
    Lanes bp[NL];
    for (std::size_t l = 0; l < NL; ++l) bp[l] = load_lanes(b + p * n + 8 * l);
    for (std::size_t r = 0; r < MR; ++r) {
      const double s = a[r * rs + p * cs];
      for (std::size_t l = 0; l < NL; ++l) acc[r][l] += s * bp[l];
    }
  }
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t l = 0; l < NL; ++l) store_lanes(c + r * n + 8 * l, acc[r][l]);
}

template <std::size_t NL>
inline void gemm_panel(std::size_t m, std::size_t n, std::size_t k, const double* a,
                       std::size_t rs, std::size_t cs, const double* b, double* c) {
  std::size_t i = 0;
  for (; i + 6 <= m; i += 6) gemm_tile<6, NL>(n, k, a + i * rs, rs, cs, b, c + i * n);
  for (; i < m; ++i) gemm_tile<1, NL>(n, k, a + i * rs, rs, cs, b, c + i * n);
}

void gemm_kernel(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t rs,
                 std::size_t cs, const double* b, double* c) {
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16) gemm_panel<2>(m, n, k, a, rs, cs, b + j, c + j);
  for (; j + 8 <= n; j += 8) gemm_panel<1>(m, n, k, a, rs, cs, b + j, c + j);
  if (j == n) return;
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * rs + p * cs];
      const double* bp = b + p * n;
      for (std::size_t jj = j; jj < n; ++jj) ci[jj] += aip * bp[jj];
    }
  }
}

}  // namespace

void gemm_accumulate(const ValueGrid& a, bool transpose_a, const ValueGrid& b,
                     bool transpose_b, ValueGrid& c) {
  const MatDims da = as_matrix(a, "gemm");
  const MatDims db = as_matrix(b, "gemm");
  const std::size_t m = transpose_a ? da.cols : da.rows;
  const std::size_t k = transpose_a ? da.rows : da.cols;
  const std::size_t kb = transpose_b ? db.cols : db.rows;
  const std::size_t n = transpose_b ? db.rows : db.cols;
  if (k != kb) {
    throw NumericError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                       shape_string(b.shape()));
  }
  if (c.size() != m * n) throw NumericError("gemm: output has wrong size");

  const std::size_t rs = transpose_a ? 1 : k;
  const std::size_t cs = transpose_a ? m : 1;
  if (!transpose_b) {
    gemm_kernel(m, n, k, a.data(), rs, cs, b.data(), c.data());
    return;
  }
  // b is n x k; transpose it once so the kernel streams contiguously.
  const double* pb = b.data();
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = pb[j * k + p];
  gemm_kernel(m, n, k, a.data(), rs, cs, bt.data(), c.data());
}

void gemv_accumulate(std::span<const double> x, const ValueGrid& w, std::span<double> y) {
  const MatDims dw = as_matrix(w, "gemv");
  if (x.size() != dw.rows || y.size() != dw.cols) {
    throw NumericError("gemv: vector of length " + std::to_string(x.size()) + " against " +
                       shape_string(w.shape()));
  }
  gemm_kernel(1, dw.cols, dw.rows, x.data(), dw.rows, 1, w.data(), y.data());
}

ValueGrid matmul(const ValueGrid& a, const ValueGrid& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw NumericError("matmul: expected matrices, got " + shape_string(a.shape()) + " x " +
                       shape_string(b.shape()));
  }
  if (a.shape()[1] != b.shape()[0]) {
    throw NumericError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                       shape_string(b.shape()));
  }
  ValueGrid c({a.shape()[0], b.shape()[1]}, 0.0);
  gemm_accumulate(a, false, b, false, c);
  c.require_finite("matmul");
  return c;
}

double tanh_scalar(double x) {
  const double z = std::abs(x);
  if (z > 0.625) {
    if (z > 22.0) return std::copysign(1.0, x);
    const double e = std::exp(2.0 * z);
    return std::copysign(1.0 - 2.0 / (e + 1.0), x);
  }
  if (x == 0.0) return x;
  const double s = x * x;
  const double p =
      (-9.64399179425052238628e-1 * s - 9.92877231001918586564e1) * s - 1.61468768441708447952e3;
  const double q =
      ((s + 1.12811678491632931402e2) * s + 2.23548839060100448583e3) * s + 4.84406305325125486048e3;
  return x + x * s * p / q;
}

ValueGrid softmax(const ValueGrid& logits) {
  if (logits.size() == 0) throw NumericError("softmax: empty input");
  logits.require_finite("softmax input");
  ValueGrid out = ValueGrid::zeros_like(logits);
  const std::size_t r = logits.rows();
  const std::size_t c = logits.cols();
  for (std::size_t i = 0; i < r; ++i) {
    auto in = logits.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (std::size_t j = 0; j < c; ++j) o[j] /= z;
  }
  return out;
}

double gaussian_logprob(std::span<const double> mean, std::span<const double> log_std,
                        std::span<const double> action) {
  if (mean.size() != log_std.size() || mean.size() != action.size()) {
    throw NumericError("gaussian_logprob: dimension mismatch");
  }
  constexpr double half_log_2pi = 0.91893853320467274178;  // 0.5 * ln(2*pi)
  double lp = 0.0;
  for (std::size_t d = 0; d < mean.size(); ++d) {
    const double z = (action[d] - mean[d]) * std::exp(-log_std[d]);
    lp += -0.5 * z * z - log_std[d] - half_log_2pi;
  }
  if (!std::isfinite(lp)) throw NumericError("gaussian_logprob: non-finite value produced");
  return lp;
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
}

}  // namespace mpolar::num
