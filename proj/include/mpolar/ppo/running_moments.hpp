#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mpolar::ppo {

// Per-dimension streaming mean/variance (Chan et al. parallel update).
// variance() is the population variance m2 / count.
class RunningMoments {
 public:
  RunningMoments() = default;
  explicit RunningMoments(std::size_t dim) : mean_(dim, 0.0), m2_(dim, 0.0) {}
  RunningMoments(double count, std::vector<double> mean, std::vector<double> m2);

  std::size_t dim() const { return mean_.size(); }
  double count() const { return count_; }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& m2() const { return m2_; }
  std::vector<double> variance() const;
  double variance(std::size_t d) const { return count_ > 0.0 ? m2_[d] / count_ : 0.0; }

  void update(std::span<const double> x);
  // Folds another stream's statistics into this one.
  void merge(const RunningMoments& other);

  // (x - mean) / sqrt(var + eps), clipped to [-clip, clip].
  void normalize(std::span<const double> x, std::span<double> out, double clip,
                 double eps = 1e-8) const;

  friend bool operator==(const RunningMoments&, const RunningMoments&) = default;

 private:
  double count_ = 0.0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

}  // namespace mpolar::ppo
