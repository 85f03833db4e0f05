#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tmag/error.hpp"
#include "tmag/tma.hpp"

namespace tmag {

struct DifferencePoint {
  std::int64_t n = 0;
  double value = 0.0;

  bool operator==(const DifferencePoint&) const = default;
};

struct OnsetEvent {
  std::int64_t n = 0;
  double d_value = 0.0;
  bool suppressed = false;

  bool operator==(const OnsetEvent&) const = default;
};

/// Frobenius norm of `current - previous`, on unnormalized maps. The maps must
/// be exactly `hop` samples apart.
inline DifferencePoint difference(const TmaMap& current, const TmaMap& previous, std::size_t hop) {
  if (!current.same_shape(previous) || current.data.size() != previous.data.size())
    throw StructuralError("difference of maps with different shapes");
  if (current.end_index - previous.end_index != static_cast<std::int64_t>(hop))
    throw StructuralError("maps are " + std::to_string(current.end_index - previous.end_index) +
                          " samples apart, expected " + std::to_string(hop));
  const double* a = current.data.data();
  const double* b = previous.data.data();
  const std::size_t n = current.data.size();
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    for (std::size_t j = 0; j < 4; ++j) {
      const double d = a[i + j] - b[i + j];
      acc[j] += d * d;
    }
  for (; i < n; ++i) {
    const double d = a[i] - b[i];
    acc[0] += d * d;
  }
  return {current.end_index, std::sqrt((acc[0] + acc[1]) + (acc[2] + acc[3]))};
}

struct CalibrationSegment {
  int gesture = 0;
  std::vector<double> d;
};

struct ThresholdCalibration {
  std::map<int, double> per_gesture_sigma;
  double multiplier = 4.0;
  double threshold = 0.0;
  /// Set when every sigma is zero, i.e. the threshold carries no information.
  bool degenerate = false;

  bool operator==(const ThresholdCalibration&) const = default;
};

/// sigma_d(g) is the population standard deviation of all d(n) values pooled
/// over gesture g's segments; threshold = multiplier * mean_g sigma_d(g).
inline ThresholdCalibration calibrate_threshold(std::span<const CalibrationSegment> segments,
                                                std::span<const int> gestures, double multiplier) {
  if (gestures.empty()) throw CalibrationError("no gestures to calibrate");
  if (!(multiplier > 0.0)) throw CalibrationError("threshold multiplier must be positive");

  ThresholdCalibration out;
  out.multiplier = multiplier;
  double sigma_sum = 0.0;
  for (int g : gestures) {
    double count = 0.0, sum = 0.0;
    bool seen = false;
    for (const auto& seg : segments) {
      if (seg.gesture != g) continue;
      if (seg.d.size() < 2)
        throw CalibrationError("calibration series for gesture " + std::to_string(g) + " has fewer than 2 points");
      seen = true;
      for (double v : seg.d) sum += v;
      count += static_cast<double>(seg.d.size());
    }
    if (!seen) throw CalibrationError("no calibration segment for gesture " + std::to_string(g));
    const double mean = sum / count;
    double ss = 0.0;
    for (const auto& seg : segments) {
      if (seg.gesture != g) continue;
      for (double v : seg.d) ss += (v - mean) * (v - mean);
    }
    const double sigma = std::sqrt(ss / count);
    out.per_gesture_sigma[g] = sigma;
    sigma_sum += sigma;
  }
  for (const auto& seg : segments)
    if (!out.per_gesture_sigma.contains(seg.gesture))
      throw CalibrationError("segment for unknown gesture " + std::to_string(seg.gesture));

  out.threshold = multiplier * (sigma_sum / static_cast<double>(gestures.size()));
  out.degenerate = sigma_sum == 0.0;
  return out;
}

/// Threshold crossing with a refractory period. Elapsed time is counted in
/// samples of n and starts at `refractory`, so the first onset after warm-up
/// can fire. Points with n < warmup_end never fire.
class OnsetDetector {
 public:
  OnsetDetector(double threshold, std::size_t refractory, std::int64_t warmup_end = 0)
      : threshold_(threshold), refractory_(static_cast<std::int64_t>(refractory)), warmup_end_(warmup_end),
        elapsed_(static_cast<std::int64_t>(refractory)) {}

  std::optional<OnsetEvent> step(const DifferencePoint& p) {
    if (last_n_ && p.n <= *last_n_)
      throw StructuralError("difference point " + std::to_string(p.n) + " arrived after " + std::to_string(*last_n_));
    if (last_n_) elapsed_ += p.n - *last_n_;
    last_n_ = p.n;
    if (p.n < warmup_end_) return std::nullopt;
    if (p.value > threshold_ && elapsed_ >= refractory_) {
      elapsed_ = 0;
      return OnsetEvent{p.n, p.value, false};
    }
    return std::nullopt;
  }

  double threshold() const noexcept { return threshold_; }
  std::int64_t elapsed() const noexcept { return elapsed_; }

 private:
  double threshold_;
  std::int64_t refractory_;
  std::int64_t warmup_end_;
  std::int64_t elapsed_;
  std::optional<std::int64_t> last_n_;
};

}  // namespace tmag
