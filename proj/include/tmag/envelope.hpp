#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "tmag/error.hpp"

namespace tmag {

struct RawSample {
  std::int64_t t = 0;
  std::vector<double> channels;

  bool operator==(const RawSample&) const = default;
};

/// One time step of channel envelopes after rectification and low-pass filtering.
struct EnvelopeFrame {
  std::int64_t t = 0;
  std::vector<double> values;

  bool operator==(const EnvelopeFrame&) const = default;
};

/// Second-order section normalized so that a0 == 1:
///   H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)
struct BiquadCoefficients {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0, a1 = 0.0, a2 = 0.0;

  bool operator==(const BiquadCoefficients&) const = default;

  double dc_gain() const noexcept { return (b0 + b1 + b2) / (1.0 + a1 + a2); }

  std::complex<double> response(double freq_hz, double fs) const {
    const std::complex<double> z1 = std::polar(1.0, -2.0 * std::numbers::pi * freq_hz / fs);
    const std::complex<double> z2 = z1 * z1;
    return (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2);
  }

  double magnitude(double freq_hz, double fs) const { return std::abs(response(freq_hz, fs)); }

  /// Both poles strictly inside the unit circle (Jury conditions for a quadratic).
  bool stable() const noexcept { return std::abs(a2) < 1.0 && std::abs(a1) < 1.0 + a2; }
};

namespace detail {

inline void check_band_edge(double cutoff_hz, double fs) {
  if (!(fs > 0.0)) throw ParameterError("sampling rate must be positive");
  if (!(cutoff_hz > 0.0) || !(cutoff_hz < fs / 2.0))
    throw ParameterError("cutoff must lie strictly between 0 and fs/2");
}

}  // namespace detail

/// Second-order Butterworth low-pass, bilinear transform with the cutoff prewarped
/// so the -3 dB point lands exactly on `cutoff_hz`.
inline BiquadCoefficients design_butterworth_lowpass(double cutoff_hz, double fs) {
  detail::check_band_edge(cutoff_hz, fs);
  const double k = std::tan(std::numbers::pi * cutoff_hz / fs);
  const double k2 = k * k;
  const double norm = 1.0 / (1.0 + std::numbers::sqrt2 * k + k2);
  BiquadCoefficients c;
  c.b0 = k2 * norm;
  c.b1 = 2.0 * c.b0;
  c.b2 = c.b0;
  c.a1 = 2.0 * (k2 - 1.0) * norm;
  c.a2 = (1.0 - std::numbers::sqrt2 * k + k2) * norm;
  return c;
}

inline BiquadCoefficients design_butterworth_highpass(double cutoff_hz, double fs) {
  detail::check_band_edge(cutoff_hz, fs);
  const double k = std::tan(std::numbers::pi * cutoff_hz / fs);
  const double k2 = k * k;
  const double norm = 1.0 / (1.0 + std::numbers::sqrt2 * k + k2);
  BiquadCoefficients c;
  c.b0 = norm;
  c.b1 = -2.0 * norm;
  c.b2 = norm;
  c.a1 = 2.0 * (k2 - 1.0) * norm;
  c.a2 = (1.0 - std::numbers::sqrt2 * k + k2) * norm;
  return c;
}

/// Full-wave rectification.
inline RawSample rectify(RawSample sample) {
  for (double& v : sample.channels) v = std::abs(v);
  return sample;
}

/// Single-channel direct-form-II-transposed biquad.
class Biquad {
 public:
  Biquad() = default;
  explicit Biquad(const BiquadCoefficients& c) : c_(c) {}

  double step(double x) noexcept {
    const double y = c_.b0 * x + s1_;
    s1_ = c_.b1 * x - c_.a1 * y + s2_;
    s2_ = c_.b2 * x - c_.a2 * y;
    return y;
  }

  void reset() noexcept { s1_ = s2_ = 0.0; }

 private:
  BiquadCoefficients c_;
  double s1_ = 0.0;
  double s2_ = 0.0;
};

/// Per-channel low-pass state for one stream. Starts from zero state.
class EnvelopeFilter {
 public:
  EnvelopeFilter(const BiquadCoefficients& coeffs, std::size_t channels)
      : coeffs_(coeffs), s1_(channels, 0.0), s2_(channels, 0.0) {}

  std::size_t channels() const noexcept { return s1_.size(); }
  const BiquadCoefficients& coefficients() const noexcept { return coeffs_; }

  /// Filters an already rectified sample into `out`.
  void step(std::span<const double> rectified, std::span<double> out) {
    if (rectified.size() != s1_.size() || out.size() != s1_.size())
      throw StructuralError("envelope filter expects " + std::to_string(s1_.size()) + " channels, got " +
                            std::to_string(rectified.size()));
    const auto& c = coeffs_;
    for (std::size_t ch = 0; ch < s1_.size(); ++ch) {
      const double x = rectified[ch];
      const double y = c.b0 * x + s1_[ch];
      s1_[ch] = c.b1 * x - c.a1 * y + s2_[ch];
      s2_[ch] = c.b2 * x - c.a2 * y;
      out[ch] = y;
    }
  }

  EnvelopeFrame step(const RawSample& rectified) {
    EnvelopeFrame frame{rectified.t, std::vector<double>(s1_.size())};
    step(rectified.channels, frame.values);
    return frame;
  }

  void reset() {
    std::fill(s1_.begin(), s1_.end(), 0.0);
    std::fill(s2_.begin(), s2_.end(), 0.0);
  }

 private:
  BiquadCoefficients coeffs_;
  std::vector<double> s1_;
  std::vector<double> s2_;
};

/// Rectify-then-filter for a raw multi-channel stream.
class EnvelopeExtractor {
 public:
  EnvelopeExtractor(const BiquadCoefficients& coeffs, std::size_t channels)
      : filter_(coeffs, channels), scratch_(channels) {}

  void process(std::span<const double> raw, std::span<double> out) {
    if (raw.size() != scratch_.size())
      throw StructuralError("expected " + std::to_string(scratch_.size()) + " channels, got " +
                            std::to_string(raw.size()));
    for (std::size_t ch = 0; ch < raw.size(); ++ch) scratch_[ch] = std::abs(raw[ch]);
    filter_.step(scratch_, out);
  }

  EnvelopeFrame process(const RawSample& raw) {
    EnvelopeFrame frame{raw.t, std::vector<double>(scratch_.size())};
    process(raw.channels, frame.values);
    return frame;
  }

  std::size_t channels() const noexcept { return scratch_.size(); }
  void reset() { filter_.reset(); }

 private:
  EnvelopeFilter filter_;
  std::vector<double> scratch_;
};

}  // namespace tmag
