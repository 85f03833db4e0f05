#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tmag/cnn.hpp"
#include "tmag/config.hpp"
#include "tmag/engine.hpp"
#include "tmag/envelope.hpp"
#include "tmag/error.hpp"
#include "tmag/model.hpp"
#include "tmag/onset.hpp"
#include "tmag/recording.hpp"
#include "tmag/tma.hpp"

namespace tmag {

/// Activation vectors of every sample of a recording, one D-vector per sample.
class FeatureColumns {
 public:
  FeatureColumns(const Recording& rec, const BiquadCoefficients& filter)
      : channels_(rec.channels), rows_(feature_rows(rec.channels)), data_(rec.size() * rows_) {
    rec.validate();
    first_ = rec.samples.empty() ? 0 : rec.samples.front().t;
    EnvelopeExtractor env(filter, channels_);
    std::vector<double> frame(channels_);
    for (std::size_t i = 0; i < rec.size(); ++i) {
      env.process(rec.samples[i].channels, frame);
      build_feature_vector(frame, std::span<double>(data_).subspan(i * rows_, rows_));
    }
  }

  std::size_t size() const noexcept { return rows_ ? data_.size() / rows_ : 0; }
  std::int64_t first_index() const noexcept { return first_; }

  /// True when a map of `window` columns ending at sample index `n` lies inside the recording.
  bool has_map(std::int64_t n, std::size_t window) const noexcept {
    const std::int64_t pos = n - first_;
    return pos >= static_cast<std::int64_t>(window) - 1 && pos < static_cast<std::int64_t>(size());
  }

  void map_into(std::int64_t n, std::size_t window, TmaMap& map) const {
    if (!has_map(n, window)) throw NotReadyError("no complete map ends at sample " + std::to_string(n));
    if (map.channels != channels_ || map.cols != window) map = TmaMap(n, channels_, window);
    map.end_index = n;
    const auto first_col = static_cast<std::size_t>(n - first_) + 1 - window;
    for (std::size_t c = 0; c < window; ++c) {
      const double* col = data_.data() + (first_col + c) * rows_;
      for (std::size_t r = 0; r < rows_; ++r) map.data[r * window + c] = col[r];
    }
  }

  TmaMap map(std::int64_t n, std::size_t window) const {
    TmaMap m(n, channels_, window);
    map_into(n, window, m);
    return m;
  }

 private:
  std::size_t channels_;
  std::size_t rows_;
  std::vector<double> data_;
  std::int64_t first_ = 0;
};

/// d(n) for every n whose maps A(n) and A(n-k) both exist and n is past warm-up.
/// With stride == k the evaluation instants are exactly those of the engine
/// (the last sample of each k-sample batch).
inline std::vector<DifferencePoint> difference_series(const Recording& rec, const SignalSettings& s,
                                                      const BiquadCoefficients& filter, std::size_t stride = 1) {
  if (stride == 0) throw ParameterError("stride must be positive");
  const FeatureColumns cols(rec, filter);
  std::vector<DifferencePoint> out;
  if (cols.size() == 0) return out;
  const std::int64_t first = cols.first_index();
  const auto k = static_cast<std::int64_t>(s.hop);
  const std::int64_t warm_end = first + static_cast<std::int64_t>(s.warmup);
  TmaMap cur, prev;
  for (std::int64_t pos = static_cast<std::int64_t>(s.window) - 1 + k; pos < static_cast<std::int64_t>(cols.size());
       ++pos) {
    if (stride > 1 && (pos + 1) % static_cast<std::int64_t>(stride) != 0) continue;
    const std::int64_t n = first + pos;
    if (n < warm_end) continue;
    cols.map_into(n, s.window, cur);
    cols.map_into(n - k, s.window, prev);
    out.push_back(difference(cur, prev, s.hop));
  }
  return out;
}

/// Onsets the streaming detector would report on `rec` (no suppression).
inline std::vector<OnsetEvent> detect_onsets(const Recording& rec, const SignalSettings& s,
                                             const BiquadCoefficients& filter, double threshold) {
  const auto series = difference_series(rec, s, filter, s.hop);
  const std::int64_t first = rec.samples.empty() ? 0 : rec.samples.front().t;
  OnsetDetector det(threshold, s.refractory, first + static_cast<std::int64_t>(s.warmup));
  std::vector<OnsetEvent> out;
  for (const auto& p : series)
    if (auto e = det.step(p)) out.push_back(*e);
  return out;
}

/// The gesture performed in a single-gesture calibration recording.
inline int single_gesture(const Recording& rec) {
  std::optional<int> g;
  for (const auto& a : rec.annotations) {
    if (a.phase != Phase::FlexionOnset) continue;
    if (g && *g != a.gesture) throw CalibrationError("calibration recording mixes gestures");
    g = a.gesture;
  }
  if (!g) throw CalibrationError("calibration recording has no flexion annotation");
  return *g;
}

/// Pools d(n) of each calibration recording (every sample past warm-up, active
/// and rest alike) per gesture and applies the multiplier rule.
inline ThresholdCalibration calibrate_session(std::span<const Recording> recordings, const SessionConfig& cfg) {
  const SignalSettings s = SignalSettings::from(cfg);
  const auto filter = design_butterworth_lowpass(cfg.cutoff_hz, cfg.fs);
  std::vector<CalibrationSegment> segments;
  for (const auto& rec : recordings) {
    CalibrationSegment seg{single_gesture(rec), {}};
    for (const auto& p : difference_series(rec, s, filter)) seg.d.push_back(p.value);
    segments.push_back(std::move(seg));
  }
  std::vector<int> ids;
  for (const auto& g : cfg.gestures) ids.push_back(g.id);
  return calibrate_threshold(segments, ids, cfg.threshold_multiplier);
}

struct TrainingSet {
  std::vector<TrainingExample> examples;
  std::size_t accepted_onsets = 0;
  std::vector<std::string> warnings;
};

/// One map per sample time in [n0 - w/2, n0 - w/2 + w) around each labelled
/// onset n0, labelled with the onset's gesture. Onsets whose window does not
/// fit inside the recording are dropped with a warning. Maps are unnormalized.
inline TrainingSet extract_training_set(const Recording& rec, const SessionConfig& cfg,
                                        std::span<const Annotation> onsets) {
  cfg.validate();
  if (rec.channels != cfg.channels) throw ConfigError("recording channel count does not match the configuration");
  std::vector<Annotation> sorted(onsets.begin(), onsets.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.n < b.n; });
  const auto width = static_cast<std::int64_t>(cfg.extraction_width);
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i].n - sorted[i - 1].n < width)
      throw DataError("onsets at " + std::to_string(sorted[i - 1].n) + " and " + std::to_string(sorted[i].n) +
                      " are closer than the extraction width");

  const FeatureColumns cols(rec, design_butterworth_lowpass(cfg.cutoff_hz, cfg.fs));
  TrainingSet out;
  for (const auto& onset : sorted) {
    if (cfg.gesture_index(onset.gesture) >= cfg.gesture_count())
      throw DataError("onset at " + std::to_string(onset.n) + " has unknown gesture " + std::to_string(onset.gesture));
    const std::int64_t start = onset.n - width / 2;
    if (!cols.has_map(start, cfg.window) || !cols.has_map(start + width - 1, cfg.window)) {
      out.warnings.push_back("onset at " + std::to_string(onset.n) + " dropped: extraction window leaves the recording");
      continue;
    }
    for (std::int64_t n = start; n < start + width; ++n) out.examples.push_back({cols.map(n, cfg.window), onset.gesture});
    ++out.accepted_onsets;
  }
  return out;
}

/// Ground-truth mode: windows around every flexion-onset annotation.
inline TrainingSet extract_training_set(const Recording& rec, const SessionConfig& cfg) {
  const auto onsets = rec.annotations_of(Phase::FlexionOnset);
  if (onsets.empty()) throw UsageError("recording has no flexion-onset annotations");
  return extract_training_set(rec, cfg, onsets);
}

/// Recorded-data mode: windows around detector onsets that fall within one
/// second of a flexion label, carrying that label.
inline TrainingSet extract_detected_training_set(const Recording& rec, const SessionConfig& cfg, double threshold) {
  const auto labels = rec.annotations_of(Phase::FlexionOnset);
  if (labels.empty()) throw UsageError("recording has no flexion-onset annotations");
  const SignalSettings s = SignalSettings::from(cfg);
  const auto detected = detect_onsets(rec, s, design_butterworth_lowpass(cfg.cutoff_hz, cfg.fs), threshold);
  const auto tol = static_cast<std::int64_t>(std::llround(cfg.fs));
  std::vector<Annotation> confirmed;
  std::vector<bool> used(labels.size(), false);
  for (const auto& e : detected) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (used[i] || std::llabs(e.n - labels[i].n) > tol) continue;
      used[i] = true;
      confirmed.push_back({e.n, labels[i].gesture, Phase::FlexionOnset});
      break;
    }
  }
  return extract_training_set(rec, cfg, confirmed);
}

/// A session model with freshly initialized weights, unit normalization bounds
/// and no calibration (threshold 0). Useful for timing and for exercising the
/// engine without training.
inline SessionModel initial_session_model(const SessionConfig& cfg) {
  SessionModel m;
  m.signal = SignalSettings::from(cfg);
  m.filter = design_butterworth_lowpass(cfg.cutoff_hz, cfg.fs);
  m.calibration.multiplier = cfg.threshold_multiplier;
  m.network.arch = CnnArchitecture::for_maps(cfg.rows(), cfg.window, cfg.cnn, cfg.gesture_count());
  m.network.params = initialize_parameters(m.network.arch, derive_seed(cfg.seed, "init"));
  m.network.labels = cfg.gestures;
  m.network.bounds = NormalizationBounds{};
  return m;
}

/// Calibrate the threshold, extract and normalize training maps, train the CNN.
inline SessionModel train_session(std::span<const Recording> calibration, std::span<const Recording> training,
                                  const SessionConfig& cfg) {
  cfg.validate();
  SessionModel model;
  model.signal = SignalSettings::from(cfg);
  model.filter = design_butterworth_lowpass(cfg.cutoff_hz, cfg.fs);
  model.calibration = calibrate_session(calibration, cfg);

  std::vector<TrainingExample> examples;
  for (const auto& rec : training) {
    auto set = extract_training_set(rec, cfg);
    for (auto& ex : set.examples) examples.push_back(std::move(ex));
  }
  if (examples.empty()) throw DataError("no training examples extracted");

  NormalizationFitter fit;
  for (const auto& ex : examples) fit.add(ex.map);
  const NormalizationBounds bounds = fit.bounds();
  for (auto& ex : examples) normalize_in_place(ex.map, bounds);

  const auto arch = CnnArchitecture::for_maps(cfg.rows(), cfg.window, cfg.cnn, cfg.gesture_count());
  const TrainingSettings ts{cfg.cnn.learning_rate, cfg.cnn.epochs, cfg.cnn.batch_size, cfg.seed};
  model.network = train(examples, arch, cfg.gestures, ts);
  model.network.bounds = bounds;
  return model;
}

struct LatencyStats {
  std::size_t count = 0;
  double mean_us = 0.0;
  double p50_us = 0.0;
  double p95_us = 0.0;
  double max_us = 0.0;
};

inline LatencyStats latency_stats(std::vector<double> samples) {
  LatencyStats s;
  s.count = samples.size();
  if (samples.empty()) return s;
  std::sort(samples.begin(), samples.end());
  s.mean_us = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
  const auto rank = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(samples.size())));
    return samples[std::clamp<std::size_t>(idx, 1, samples.size()) - 1];
  };
  s.p50_us = rank(0.50);
  s.p95_us = rank(0.95);
  s.max_us = samples.back();
  return s;
}

struct EvaluationReport {
  std::vector<GestureLabel> labels;
  /// confusion[true class][predicted class]; the extra last column counts
  /// flexions that received no prediction (missed or suppressed).
  std::vector<std::vector<std::size_t>> confusion;
  std::vector<double> per_class_accuracy;
  double accuracy = 0.0;

  std::size_t true_onsets = 0;
  std::size_t detected = 0;
  std::size_t matched = 0;
  std::size_t false_positives = 0;
  double onset_recall = 0.0;
  double onset_precision = 0.0;
  double false_positive_rate = 0.0;

  std::size_t predictions = 0;
  std::size_t suppressed = 0;
  LatencyStats latency;
};

/// Scores engine events against ground truth. Every flexion and return
/// annotation is a true onset; an event matches the nearest unmatched true
/// onset within `tolerance` samples.
inline EvaluationReport score_events(std::span<const EngineEvent> events, const Recording& rec,
                                     const std::vector<GestureLabel>& labels, std::int64_t tolerance) {
  EvaluationReport r;
  r.labels = labels;
  const std::size_t g = labels.size();
  r.confusion.assign(g, std::vector<std::size_t>(g + 1, 0));
  const auto class_of = [&](int id) {
    for (std::size_t i = 0; i < g; ++i)
      if (labels[i].id == id) return i;
    throw DataError("annotation has gesture " + std::to_string(id) + " outside the model's label table");
  };

  std::vector<Annotation> truths;
  for (const auto& a : rec.annotations)
    if (a.phase != Phase::Rest) truths.push_back(a);
  std::sort(truths.begin(), truths.end(), [](const auto& a, const auto& b) { return a.n < b.n; });

  std::vector<double> latencies;
  for (const auto& e : events) {
    if (const auto* p = std::get_if<Prediction>(&e)) {
      ++r.predictions;
      latencies.push_back(p->compute_us);
    } else {
      ++r.suppressed;
    }
  }
  r.latency = latency_stats(std::move(latencies));

  std::vector<bool> used(events.size(), false);
  std::vector<std::optional<std::size_t>> match(truths.size());
  for (std::size_t t = 0; t < truths.size(); ++t) {
    std::optional<std::size_t> best;
    for (std::size_t e = 0; e < events.size(); ++e) {
      if (used[e]) continue;
      const std::int64_t dist = std::llabs(event_index(events[e]) - truths[t].n);
      if (dist > tolerance) continue;
      if (!best || dist < std::llabs(event_index(events[*best]) - truths[t].n)) best = e;
    }
    if (best) {
      used[*best] = true;
      match[t] = best;
    }
  }

  r.true_onsets = truths.size();
  r.detected = events.size();
  r.matched = static_cast<std::size_t>(std::count_if(match.begin(), match.end(), [](const auto& m) { return m.has_value(); }));
  r.false_positives = r.detected - r.matched;
  r.onset_recall = r.true_onsets ? static_cast<double>(r.matched) / static_cast<double>(r.true_onsets) : 1.0;
  r.onset_precision = r.detected ? static_cast<double>(r.matched) / static_cast<double>(r.detected) : 1.0;
  r.false_positive_rate = r.true_onsets ? static_cast<double>(r.false_positives) / static_cast<double>(r.true_onsets)
                                        : static_cast<double>(r.false_positives);

  std::size_t flexions = 0, correct = 0;
  for (std::size_t t = 0; t < truths.size(); ++t) {
    if (truths[t].phase != Phase::FlexionOnset) continue;
    const std::size_t row = class_of(truths[t].gesture);
    std::size_t col = g;
    if (match[t])
      if (const auto* p = std::get_if<Prediction>(&events[*match[t]])) col = class_of(p->gesture);
    ++r.confusion[row][col];
    ++flexions;
    if (col == row) ++correct;
  }
  r.accuracy = flexions ? static_cast<double>(correct) / static_cast<double>(flexions) : 0.0;
  for (std::size_t c = 0; c < g; ++c) {
    const auto total = std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), std::size_t{0});
    r.per_class_accuracy.push_back(total ? static_cast<double>(r.confusion[c][c]) / static_cast<double>(total) : 0.0);
  }
  return r;
}

/// Replays `rec` through a fresh engine (fast pacing) and scores it with a one-second matching tolerance.
inline EvaluationReport evaluate(const SessionModel& model, const Recording& rec, EngineOptions options = {}) {
  const auto events = run_replay(rec, model, options, Pacing::Fast);
  return score_events(events, rec, model.network.labels, static_cast<std::int64_t>(std::llround(model.signal.fs)));
}

/// Plain-text accuracy table, one row per gesture plus the total.
inline std::string format_report_table(const EvaluationReport& r) {
  std::ostringstream os;
  std::size_t width = 14;
  for (const auto& l : r.labels) width = std::max(width, l.name.size() + 2);
  os << std::left << std::setw(static_cast<int>(width)) << "Gesture" << std::right << std::setw(14) << "Accuracy (%)"
     << std::setw(8) << "Events" << '\n';
  os << std::string(width + 22, '-') << '\n';
  os << std::fixed << std::setprecision(2);
  for (std::size_t c = 0; c < r.labels.size(); ++c) {
    const auto total = std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), std::size_t{0});
    os << std::left << std::setw(static_cast<int>(width)) << r.labels[c].name << std::right << std::setw(14)
       << 100.0 * r.per_class_accuracy[c] << std::setw(8) << total << '\n';
  }
  os << std::string(width + 22, '-') << '\n';
  std::size_t all = 0;
  for (const auto& row : r.confusion) all += std::accumulate(row.begin(), row.end(), std::size_t{0});
  os << std::left << std::setw(static_cast<int>(width)) << "Total" << std::right << std::setw(14)
     << 100.0 * r.accuracy << std::setw(8) << all << '\n';
  os << "onset recall " << r.onset_recall << ", precision " << r.onset_precision << ", false positives "
     << r.false_positives << " (" << r.false_positive_rate << " per true onset)\n";
  os << std::setprecision(1) << "prediction latency mean " << r.latency.mean_us << " us, p95 " << r.latency.p95_us
     << " us over " << r.latency.count << " predictions\n";
  return os.str();
}

}  // namespace tmag
