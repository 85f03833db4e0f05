#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "tmag/tmag.hpp"

namespace tmag::testkit {

/// Amplitude ratio of the filter's steady-state response to a unit sinusoid at
/// `freq_hz`, measured by driving the recursion and taking the peak over the
/// last full cycles.
inline double measured_sine_gain(const BiquadCoefficients& c, double freq_hz, double fs, double settle_s = 20.0,
                                 double measure_s = 5.0) {
  Biquad f(c);
  const auto settle = static_cast<std::size_t>(settle_s * fs);
  const auto measure = static_cast<std::size_t>(measure_s * fs);
  double peak = 0.0;
  // quadrature pair removes the dependence on where the samples fall in the cycle
  Biquad g(c);
  for (std::size_t i = 0; i < settle + measure; ++i) {
    const double phase = 2.0 * std::numbers::pi * freq_hz * static_cast<double>(i) / fs;
    const double y = f.step(std::sin(phase));
    const double z = g.step(std::cos(phase));
    if (i >= settle) peak = std::max(peak, std::hypot(y, z));
  }
  return peak;
}

/// Straightforward double loop over every entry.
inline double brute_force_frobenius(const TmaMap& a, const TmaMap& b) {
  double sum = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols; ++c) {
      const double d = a.at(r, c) - b.at(r, c);
      sum += d * d;
    }
  return std::sqrt(sum);
}

inline TmaMap random_map(Rng& rng, std::int64_t end, std::size_t channels, std::size_t cols, double scale = 1.0) {
  TmaMap m(end, channels, cols);
  for (double& v : m.data) v = scale * rng.uniform();
  return m;
}


/// Random parameters (biases included) on a small architecture plus a batch of
/// random inputs; compares every analytic gradient with a central difference.
struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  double resolvable = 0.0;
  std::size_t below_resolution = 0;
};

inline GradientCheck check_gradients(const CnnArchitecture& arch, std::uint64_t seed, double step = 1e-6,
                                     std::size_t batch = 3) {
  Rng rng(seed);
  CnnModel model;
  model.arch = arch;
  model.params = initialize_parameters(arch, seed);
  for (auto* t : model.params.tensors())
    for (double& v : *t) v += 0.1 * (rng.uniform() - 0.5);
  for (std::size_t c = 0; c < arch.classes; ++c) model.labels.push_back({static_cast<int>(c), ""});
  model.bounds = NormalizationBounds{};

  std::vector<TrainingExample> examples;
  for (std::size_t b = 0; b < batch; ++b) {
    // only the flat input matters to the network, so any rows x cols shape works
    TrainingExample ex{TmaMap{}, static_cast<int>(rng.below(arch.classes))};
    ex.map.cols = arch.input_cols;
    ex.map.data.resize(arch.input_size());
    for (double& v : ex.map.data) v = rng.uniform();
    examples.push_back(std::move(ex));
  }

  const auto analytic = loss_and_gradients(model, examples);
  // a central difference carries about eps * |L| / step of rounding, so a
  // 1e-5 relative comparison is only meaningful above this magnitude
  const double resolvable =
      std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(analytic.loss)) / (step * 1e-5);
  GradientCheck out;
  out.resolvable = resolvable;
  auto params = model.params.tensors();
  auto grads = analytic.gradients.tensors();
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t]->size(); ++i) {
      double& w = (*params[t])[i];
      const double saved = w;
      w = saved + step;
      const double up = loss_and_gradients(model, examples).loss;
      w = saved - step;
      const double down = loss_and_gradients(model, examples).loss;
      w = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double exact = (*grads[t])[i];
      const double scale = std::max({std::abs(exact), std::abs(numeric), resolvable});
      out.max_relative_error = std::max(out.max_relative_error, std::abs(exact - numeric) / scale);
      out.below_resolution += std::max(std::abs(exact), std::abs(numeric)) < resolvable;
      ++out.checked;
    }
  }
  return out;
}


/// A short protocol that runs in seconds: 3 gestures, 2 s holds, fewer repetitions.
inline SessionConfig small_config() {
  SessionConfig c;
  c.gestures = {{0, "alpha"}, {1, "beta"}, {2, "gamma"}};
  c.synth.hold_s = 2.0;
  c.synth.rest_s = 2.5;
  c.synth.lead_s = 2.0;
  c.synth.repetitions = 6;
  c.synth.calibration_repetitions = 3;
  c.synth.evaluation_gestures = 12;
  c.synth.snr_db = 30.0;
  c.synth.carrier = Carrier::Rademacher;
  c.cnn.epochs = 3;
  c.threshold_multiplier = 1.0;
  c.seed = 7;
  return c;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("tmag_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace tmag::testkit
