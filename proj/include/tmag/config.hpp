#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tmag/error.hpp"

namespace tmag {

/// Number of rows of a TMA map for `channels` electrodes: L first-order rows
/// plus L(L+1)/2 pairwise products.
constexpr std::size_t feature_rows(std::size_t channels) noexcept {
  return channels + channels * (channels + 1) / 2;
}

struct GestureLabel {
  int id = 0;
  std::string name;

  bool operator==(const GestureLabel&) const = default;
};

struct CnnSettings {
  std::size_t conv1_filters = 8;
  std::size_t conv2_filters = 16;
  std::size_t kernel = 3;
  std::size_t pool = 2;
  std::size_t fc1_units = 100;
  std::size_t fc2_units = 20;
  std::size_t batch_size = 32;
  double learning_rate = 0.001;
  std::size_t epochs = 15;

  bool operator==(const CnnSettings&) const = default;
};

enum class Carrier { Gaussian, Rademacher };

/// Parameters of the synthetic protocol used by `tmag synth` and the acceptance harness.
struct SynthSettings {
  double snr_db = 20.0;
  double noise_floor = 0.05;
  double rise_s = 0.1;
  double hold_s = 5.0;
  double fall_s = 0.1;
  double rest_s = 5.0;
  double lead_s = 5.0;
  std::size_t repetitions = 20;
  std::size_t calibration_repetitions = 5;
  std::size_t evaluation_gestures = 150;
  double separation = 0.8;
  bool band_limit = false;
  Carrier carrier = Carrier::Gaussian;

  bool operator==(const SynthSettings&) const = default;
};

/// Every hyperparameter of a session. Defaults:
/// 200 Hz, 8 electrodes, 2 Hz envelope cutoff, 80-sample maps taken every 20
/// samples, 400-sample refractory period, 120-sample extraction windows and a
/// threshold of 4 mean standard deviations.
struct SessionConfig {
  double fs = 200.0;
  std::size_t channels = 8;
  double cutoff_hz = 2.0;
  std::size_t window = 80;
  std::size_t hop = 20;
  std::size_t refractory = 400;
  std::size_t extraction_width = 120;
  double threshold_multiplier = 4.0;
  std::vector<GestureLabel> gestures = {
      {0, "middle_flexion"}, {1, "ring_flexion"}, {2, "v_flexion"}, {3, "hand_closure"}, {4, "pointer"}};
  CnnSettings cnn;
  SynthSettings synth;
  std::uint64_t seed = 2020;
  bool suppression = true;

  bool operator==(const SessionConfig&) const = default;

  std::size_t gesture_count() const noexcept { return gestures.size(); }
  std::size_t rows() const noexcept { return feature_rows(channels); }

  /// Samples after start-up during which onset detection stays disabled.
  std::size_t warmup_samples() const { return static_cast<std::size_t>(std::ceil(2.0 * fs / cutoff_hz)); }

  void validate() const {
    if (!(fs > 0.0)) throw ConfigError("fs must be positive");
    if (channels == 0) throw ConfigError("channel count must be positive");
    if (!(cutoff_hz > 0.0) || !(cutoff_hz < fs / 2.0)) throw ConfigError("cutoff must lie in (0, fs/2)");
    if (window == 0) throw ConfigError("window M must be positive");
    if (hop == 0 || hop > window) throw ConfigError("hop k must satisfy 0 < k <= M");
    if (refractory < hop) throw ConfigError("refractory r must be >= k");
    if (extraction_width < 2) throw ConfigError("extraction width must be >= 2");
    if (!(threshold_multiplier > 0.0)) throw ConfigError("threshold multiplier must be positive");
    if (gestures.empty()) throw ConfigError("at least one gesture label is required");
    for (std::size_t i = 0; i < gestures.size(); ++i)
      for (std::size_t j = i + 1; j < gestures.size(); ++j)
        if (gestures[i].id == gestures[j].id) throw ConfigError("duplicate gesture id " + std::to_string(gestures[i].id));
    if (cnn.kernel == 0 || cnn.pool == 0) throw ConfigError("kernel and pool must be positive");
    if (cnn.batch_size == 0) throw ConfigError("batch size must be positive");
    if (!(cnn.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  }

  /// Position of `id` in the gesture table, or npos.
  std::size_t gesture_index(int id) const noexcept {
    for (std::size_t i = 0; i < gestures.size(); ++i)
      if (gestures[i].id == id) return i;
    return static_cast<std::size_t>(-1);
  }
};

}  // namespace tmag
