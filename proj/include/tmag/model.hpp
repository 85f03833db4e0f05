#pragma once

#include <cstddef>

#include "tmag/cnn.hpp"
#include "tmag/config.hpp"
#include "tmag/envelope.hpp"
#include "tmag/onset.hpp"

namespace tmag {

/// Signal-path settings a trained model was built with. The engine runs from
/// these, so a model file is self-contained.
struct SignalSettings {
  double fs = 200.0;
  std::size_t channels = 8;
  double cutoff_hz = 2.0;
  std::size_t window = 80;
  std::size_t hop = 20;
  std::size_t refractory = 400;
  std::size_t extraction_width = 120;
  std::size_t warmup = 200;

  bool operator==(const SignalSettings&) const = default;

  static SignalSettings from(const SessionConfig& cfg) {
    cfg.validate();
    return {cfg.fs,   cfg.channels,   cfg.cutoff_hz,        cfg.window,
            cfg.hop,  cfg.refractory, cfg.extraction_width, cfg.warmup_samples()};
  }

  std::size_t rows() const noexcept { return feature_rows(channels); }
};

/// Everything `run` needs: signal settings, envelope filter, onset threshold and classifier.
struct SessionModel {
  SignalSettings signal;
  BiquadCoefficients filter;
  ThresholdCalibration calibration;
  CnnModel network;

  bool operator==(const SessionModel&) const = default;
};

}  // namespace tmag
