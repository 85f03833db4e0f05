#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "tmag/config.hpp"
#include "tmag/envelope.hpp"
#include "tmag/error.hpp"

namespace tmag {

/// Writes the activation vector of one envelope frame into `out`: the L envelope
/// values followed by every product x_i * x_j with i <= j, in row-major upper
/// triangle order (x0^2, x0x1, ..., x0xL-1, x1^2, ..., xL-1^2).
inline void build_feature_vector(std::span<const double> frame, std::span<double> out) {
  const std::size_t l = frame.size();
  if (out.size() != feature_rows(l))
    throw StructuralError("feature vector needs " + std::to_string(feature_rows(l)) + " slots, got " +
                          std::to_string(out.size()));
  std::copy(frame.begin(), frame.end(), out.begin());
  std::size_t r = l;
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = i; j < l; ++j) out[r++] = frame[i] * frame[j];
}

inline std::vector<double> build_feature_vector(std::span<const double> frame) {
  std::vector<double> out(feature_rows(frame.size()));
  build_feature_vector(frame, out);
  return out;
}

/// Temporal muscle activation map: D x M, row-major, columns oldest to newest.
/// Indexed by its newest sample, i.e. it covers samples end_index-M+1 .. end_index.
struct TmaMap {
  std::int64_t end_index = 0;
  std::size_t channels = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  TmaMap() = default;
  TmaMap(std::int64_t end, std::size_t l, std::size_t m)
      : end_index(end), channels(l), cols(m), data(feature_rows(l) * m, 0.0) {}

  std::size_t rows() const noexcept { return feature_rows(channels); }
  std::size_t size() const noexcept { return data.size(); }

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  bool same_shape(const TmaMap& o) const noexcept { return channels == o.channels && cols == o.cols; }

  bool operator==(const TmaMap&) const = default;
};

/// Sliding window over the most recent M activation vectors. Pushing is O(D);
/// vectors are stored in a ring so nothing shifts.
class FrameWindow {
 public:
  FrameWindow(std::size_t channels, std::size_t window)
      : channels_(channels), rows_(feature_rows(channels)), window_(window), ring_(rows_ * window) {
    if (window == 0) throw ParameterError("window length must be positive");
  }

  std::size_t channels() const noexcept { return channels_; }
  std::size_t window() const noexcept { return window_; }
  std::size_t size() const noexcept { return count_; }
  bool ready() const noexcept { return count_ == window_; }
  std::int64_t newest_index() const noexcept { return newest_; }

  void push(std::int64_t t, std::span<const double> envelope) {
    if (envelope.size() != channels_)
      throw StructuralError("frame has " + std::to_string(envelope.size()) + " channels, window expects " +
                            std::to_string(channels_));
    if (count_ > 0 && t != newest_ + 1)
      throw StructuralError("frame index " + std::to_string(t) + " does not follow " + std::to_string(newest_));
    build_feature_vector(envelope, std::span<double>(ring_).subspan(head_ * rows_, rows_));
    head_ = (head_ + 1) % window_;
    count_ = std::min(count_ + 1, window_);
    newest_ = t;
  }

  void push(const EnvelopeFrame& frame) { push(frame.t, frame.values); }

  /// Fills `map` (reshaping it if needed) with the current window.
  void assemble_into(TmaMap& map) const {
    if (!ready())
      throw NotReadyError("window holds " + std::to_string(count_) + " of " + std::to_string(window_) + " frames");
    if (map.channels != channels_ || map.cols != window_) map = TmaMap(newest_, channels_, window_);
    map.end_index = newest_;
    // head_ points at the oldest stored column once the ring is full
    for (std::size_t c = 0; c < window_; ++c) {
      const double* col = ring_.data() + ((head_ + c) % window_) * rows_;
      for (std::size_t r = 0; r < rows_; ++r) map.data[r * window_ + c] = col[r];
    }
  }

  TmaMap assemble() const {
    TmaMap map(newest_, channels_, window_);
    assemble_into(map);
    return map;
  }

  void clear() noexcept {
    head_ = 0;
    count_ = 0;
  }

 private:
  std::size_t channels_;
  std::size_t rows_;
  std::size_t window_;
  std::vector<double> ring_;
  std::size_t head_ = 0;
  std::size_t count_ = 0;
  std::int64_t newest_ = -1;
};

/// Per-region scaling to [0, 1]: rows 0..L-1 (first order) and rows L..D-1 (products).
struct NormalizationBounds {
  double first_order_min = 0.0;
  double first_order_max = 1.0;
  double second_order_min = 0.0;
  double second_order_max = 1.0;

  bool valid() const noexcept { return first_order_min < first_order_max && second_order_min < second_order_max; }

  bool operator==(const NormalizationBounds&) const = default;
};

/// Running min/max of each region. A region without spread gets max = min + 1.
class NormalizationFitter {
 public:
  void add(const TmaMap& m) {
    if (count_ > 0 && (m.channels != channels_ || m.cols != cols_)) throw StructuralError("training maps differ in shape");
    channels_ = m.channels;
    cols_ = m.cols;
    ++count_;
    const std::size_t split = m.channels * m.cols;
    for (std::size_t i = 0; i < split; ++i) {
      lo1_ = std::min(lo1_, m.data[i]);
      hi1_ = std::max(hi1_, m.data[i]);
    }
    for (std::size_t i = split; i < m.data.size(); ++i) {
      lo2_ = std::min(lo2_, m.data[i]);
      hi2_ = std::max(hi2_, m.data[i]);
    }
  }

  std::size_t count() const noexcept { return count_; }

  NormalizationBounds bounds() const {
    if (count_ == 0) throw ParameterError("cannot fit normalization on an empty training set");
    NormalizationBounds b{lo1_, hi1_, lo2_, hi2_};
    if (!(b.first_order_min < b.first_order_max)) b.first_order_max = b.first_order_min + 1.0;
    if (!(b.second_order_min < b.second_order_max)) b.second_order_max = b.second_order_min + 1.0;
    return b;
  }

 private:
  static constexpr double kInf = std::numeric_limits<double>::infinity();
  std::size_t channels_ = 0;
  std::size_t cols_ = 0;
  std::size_t count_ = 0;
  double lo1_ = kInf, hi1_ = -kInf, lo2_ = kInf, hi2_ = -kInf;
};

/// Global min/max of each region over a training set.
inline NormalizationBounds fit_normalization(std::span<const TmaMap> maps) {
  NormalizationFitter fit;
  for (const TmaMap& m : maps) fit.add(m);
  return fit.bounds();
}

inline void normalize_in_place(TmaMap& map, const NormalizationBounds& b) {
  if (!b.valid()) throw ParameterError("normalization bounds must satisfy min < max");
  const std::size_t split = map.channels * map.cols;
  const double s1 = b.first_order_max - b.first_order_min;
  const double s2 = b.second_order_max - b.second_order_min;
  for (std::size_t i = 0; i < split; ++i)
    map.data[i] = std::clamp((map.data[i] - b.first_order_min) / s1, 0.0, 1.0);
  for (std::size_t i = split; i < map.data.size(); ++i)
    map.data[i] = std::clamp((map.data[i] - b.second_order_min) / s2, 0.0, 1.0);
}

inline TmaMap normalize(TmaMap map, const NormalizationBounds& b) {
  normalize_in_place(map, b);
  return map;
}

}  // namespace tmag
