#include "mpolar/ppo/running_moments.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mpolar::ppo {

RunningMoments::RunningMoments(double count, std::vector<double> mean, std::vector<double> m2)
    : count_(count), mean_(std::move(mean)), m2_(std::move(m2)) {
  if (mean_.size() != m2_.size() || count_ < 0.0) {
    throw std::invalid_argument("RunningMoments: inconsistent state");
  }
}

std::vector<double> RunningMoments::variance() const {
  std::vector<double> v(mean_.size());
  for (std::size_t d = 0; d < v.size(); ++d) v[d] = variance(d);
  return v;
}

void RunningMoments::update(std::span<const double> x) {
  if (x.size() != mean_.size()) throw std::invalid_argument("RunningMoments: dimension mismatch");
  count_ += 1.0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double delta = x[d] - mean_[d];
    mean_[d] += delta / count_;
    m2_[d] += delta * (x[d] - mean_[d]);
  }
}

void RunningMoments::merge(const RunningMoments& other) {
  if (other.count_ == 0.0) return;
  if (other.dim() != dim()) throw std::invalid_argument("RunningMoments: dimension mismatch");
  const double n = count_ + other.count_;
  for (std::size_t d = 0; d < mean_.size(); ++d) {
    const double delta = other.mean_[d] - mean_[d];
    m2_[d] += other.m2_[d] + delta * delta * count_ * other.count_ / n;
    mean_[d] += delta * other.count_ / n;
  }
  count_ = n;
}

void RunningMoments::normalize(std::span<const double> x, std::span<double> out, double clip,
                               double eps) const {
  if (x.size() != mean_.size() || out.size() != x.size()) {
    throw std::invalid_argument("RunningMoments: dimension mismatch");
  }
  for (std::size_t d = 0; d < x.size(); ++d) {
    out[d] = std::clamp((x[d] - mean_[d]) / std::sqrt(variance(d) + eps), -clip, clip);
  }
}

}  // namespace mpolar::ppo
