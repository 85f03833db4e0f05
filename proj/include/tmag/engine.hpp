#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <istream>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <thread>
#include <variant>
#include <vector>

#include "tmag/cnn.hpp"
#include "tmag/envelope.hpp"
#include "tmag/error.hpp"
#include "tmag/model.hpp"
#include "tmag/onset.hpp"
#include "tmag/recording.hpp"
#include "tmag/tma.hpp"

namespace tmag {

struct Prediction {
  std::int64_t n = 0;
  int gesture = 0;
  double confidence = 0.0;
  double d_value = 0.0;
  /// Wall-clock time from the arrival of the batch's last sample to emission.
  double compute_us = 0.0;
};

/// A classified onset or a suppressed (return) onset.
using EngineEvent = std::variant<Prediction, OnsetEvent>;

inline std::int64_t event_index(const EngineEvent& e) {
  return std::visit([](const auto& v) { return v.n; }, e);
}

inline bool is_prediction(const EngineEvent& e) { return std::holds_alternative<Prediction>(e); }

struct EngineOptions {
  /// Exempt every second onset (the return to neutral) from classification.
  bool suppression = true;
  std::optional<double> threshold;
};

/// The real-time loop: every k samples, extend the envelope window, assemble
/// A(n), compare it with A(n-k) and classify when an onset is detected.
/// One instance per stream; the model may be shared between instances.
class Engine {
 public:
  enum class Expect { Flexion, Return };

  explicit Engine(const SessionModel& model, EngineOptions options = {})
      : model_(&model),
        options_(options),
        envelope_(model.filter, model.signal.channels),
        frame_(model.signal.channels),
        window_(model.signal.channels, model.signal.window),
        classifier_(model.network),
        threshold_(options.threshold.value_or(model.calibration.threshold)) {
    const auto& s = model.signal;
    if (s.hop == 0 || s.hop > s.window) throw ConfigError("model hop must satisfy 0 < k <= M");
    if (model.network.arch.input_rows != s.rows() || model.network.arch.input_cols != s.window)
      throw ConfigError("network input does not match the model's map shape");
    pending_.reserve(s.hop);
  }

  const SessionModel& model() const noexcept { return *model_; }
  std::size_t hop() const noexcept { return model_->signal.hop; }
  Expect expecting() const noexcept { return expect_; }
  double threshold() const noexcept { return threshold_; }
  std::size_t overruns() const noexcept { return overruns_; }
  const std::vector<DifferencePoint>& differences() const noexcept { return differences_; }
  /// Keep every d(n) past warm-up (the series the detector sees).
  void record_differences(bool on) { record_ = on; }

  /// Processes exactly k consecutive raw samples.
  std::optional<EngineEvent> step(std::span<const RawSample> batch) {
    const auto started = std::chrono::steady_clock::now();
    const auto& s = model_->signal;
    if (batch.size() != s.hop)
      throw StructuralError("engine step needs " + std::to_string(s.hop) + " samples, got " +
                            std::to_string(batch.size()));
    for (const RawSample& raw : batch) ingest(raw);

    std::optional<EngineEvent> out;
    if (window_.ready()) {
      window_.assemble_into(current_);
      if (has_previous_) {
        const DifferencePoint d = difference(current_, previous_, s.hop);
        if (record_ && d.n >= warmup_end_) differences_.push_back(d);
        if (auto onset = detector_->step(d)) out = on_onset(*onset, started);
      }
      std::swap(current_, previous_);
      has_previous_ = true;
    }
    const double budget_us = 1e6 * static_cast<double>(s.hop) / s.fs;
    if (elapsed_us(started) > budget_us) ++overruns_;
    return out;
  }

  /// Buffers one sample; runs a step once k samples are pending.
  std::optional<EngineEvent> push(const RawSample& sample) {
    pending_.push_back(sample);
    if (pending_.size() < model_->signal.hop) return std::nullopt;
    auto out = step(pending_);
    pending_.clear();
    return out;
  }

 private:
  static double elapsed_us(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - since).count();
  }

  void ingest(const RawSample& raw) {
    if (raw.channels.size() != model_->signal.channels)
      throw StructuralError("sample " + std::to_string(raw.t) + " has " + std::to_string(raw.channels.size()) +
                            " channels, expected " + std::to_string(model_->signal.channels));
    if (!detector_) {
      warmup_end_ = raw.t + static_cast<std::int64_t>(model_->signal.warmup);
      detector_.emplace(threshold_, model_->signal.refractory, warmup_end_);
    }
    envelope_.process(raw.channels, frame_);
    window_.push(raw.t, frame_);
  }

  EngineEvent on_onset(OnsetEvent onset, std::chrono::steady_clock::time_point started) {
    if (options_.suppression && expect_ == Expect::Return) {
      expect_ = Expect::Flexion;
      onset.suppressed = true;
      return onset;
    }
    if (options_.suppression) expect_ = Expect::Return;
    const Classification c = classifier_.predict(current_);
    Prediction p{onset.n, c.gesture, c.confidence, onset.d_value, 0.0};
    p.compute_us = std::max(elapsed_us(started), 1e-3);
    return p;
  }

  const SessionModel* model_;
  EngineOptions options_;
  EnvelopeExtractor envelope_;
  std::vector<double> frame_;
  FrameWindow window_;
  TmaMap current_;
  TmaMap previous_;
  bool has_previous_ = false;
  Classifier classifier_;
  double threshold_;
  std::optional<OnsetDetector> detector_;
  std::int64_t warmup_end_ = 0;
  Expect expect_ = Expect::Flexion;
  std::vector<RawSample> pending_;
  std::size_t overruns_ = 0;
  bool record_ = false;
  std::vector<DifferencePoint> differences_;
};

enum class Pacing { Fast, Realtime };

/// Feeds a recording to `engine` in k-sample batches. A trailing partial batch
/// is never processed (the loop is still waiting for samples).
inline std::vector<EngineEvent> run_replay(const Recording& rec, Engine& engine, Pacing pacing = Pacing::Fast) {
  const auto& signal = engine.model().signal;
  if (rec.fs != signal.fs)
    throw ConfigError("recording sampled at " + std::to_string(rec.fs) + " Hz, model expects " +
                      std::to_string(signal.fs) + " Hz");
  if (rec.channels != signal.channels)
    throw ConfigError("recording has " + std::to_string(rec.channels) + " channels, model expects " +
                      std::to_string(signal.channels));
  std::vector<EngineEvent> events;
  const std::size_t k = signal.hop;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i + k <= rec.samples.size(); i += k) {
    if (pacing == Pacing::Realtime) {
      const auto due = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                   std::chrono::duration<double>(static_cast<double>(i + k) / rec.fs));
      std::this_thread::sleep_until(due);
    }
    if (auto e = engine.step(std::span<const RawSample>(rec.samples).subspan(i, k))) events.push_back(*e);
  }
  return events;
}

inline std::vector<EngineEvent> run_replay(const Recording& rec, const SessionModel& model, EngineOptions options = {},
                                           Pacing pacing = Pacing::Fast) {
  Engine engine(model, options);
  return run_replay(rec, engine, pacing);
}

/// Ordered, bounded single-producer/single-consumer hand-off.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity ? capacity : 1) {}

  void push(T value) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
    if (closed_) return;
    items_.push_back(std::move(value));
    not_empty_.notify_one();
  }

  /// Blocks until an item arrives; nullopt once closed and drained.
  std::optional<T> pop() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return std::nullopt;
    T v = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return v;
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::mutex mutex_;
  std::condition_variable not_empty_, not_full_;
  std::deque<T> items_;
  bool closed_ = false;
};

/// Parses "t,ch0,...,chL-1" (commas and/or whitespace). Returns nullopt for
/// blank lines and a leading header.
inline std::optional<RawSample> parse_sample_line(std::string_view line, std::size_t channels, std::size_t line_no) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ',' || line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && !(line[i] == ',' || line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    if (i > start) fields.push_back(line.substr(start, i - start));
  }
  if (fields.empty()) return std::nullopt;
  if (line_no == 1 && fields.front() == "t") return std::nullopt;
  if (fields.size() != channels + 1)
    throw ParseError("expected " + std::to_string(channels + 1) + " fields, got " + std::to_string(fields.size()),
                     line_no);
  RawSample s;
  const auto [p, ec] = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), s.t);
  if (ec != std::errc{} || p != fields[0].data() + fields[0].size())
    throw ParseError("bad sample index '" + std::string(fields[0]) + "'", line_no);
  s.channels.resize(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    const auto f = fields[c + 1];
    const auto [q, e] = std::from_chars(f.data(), f.data() + f.size(), s.channels[c]);
    if (e != std::errc{} || q != f.data() + f.size() || !std::isfinite(s.channels[c]))
      throw ParseError("bad value '" + std::string(f) + "'", line_no);
  }
  return s;
}

/// Streams newline-delimited samples from `in` through `engine`: a reader
/// thread parses rows into a bounded queue, the calling thread runs the engine
/// and hands every event to `sink`.
inline void run_stream(std::istream& in, Engine& engine, const std::function<void(const EngineEvent&)>& sink,
                       std::size_t capacity = 4096) {
  BoundedQueue<RawSample> queue(capacity);
  std::exception_ptr failure;
  const std::size_t channels = engine.model().signal.channels;
  std::thread reader([&] {
    try {
      std::string line;
      std::size_t line_no = 0;
      while (std::getline(in, line)) {
        ++line_no;
        if (auto s = parse_sample_line(line, channels, line_no)) queue.push(std::move(*s));
      }
    } catch (...) {
      failure = std::current_exception();
    }
    queue.close();
  });
  try {
    while (auto s = queue.pop())
      if (auto e = engine.push(*s)) sink(*e);
  } catch (...) {
    queue.close();
    reader.join();
    throw;
  }
  reader.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace tmag
