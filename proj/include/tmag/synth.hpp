#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tmag/config.hpp"
#include "tmag/envelope.hpp"
#include "tmag/error.hpp"
#include "tmag/recording.hpp"
#include "tmag/rng.hpp"

namespace tmag {

/// Trapezoidal activation profile of one gesture and how strongly it drives each electrode.
struct GestureTemplate {
  int gesture = 0;
  std::vector<double> gains;
  double rise_s = 0.1;
  double hold_s = 5.0;
  double fall_s = 0.1;

  double duration() const noexcept { return rise_s + hold_s + fall_s; }

  /// Activation level in [0, 1] at `t` seconds after onset.
  double level(double t) const noexcept {
    if (t < 0.0) return 0.0;
    if (t < rise_s) return t / rise_s;
    t -= rise_s;
    if (t < hold_s) return 1.0;
    t -= hold_s;
    if (t < fall_s) return 1.0 - t / fall_s;
    return 0.0;
  }
};

struct ScriptEvent {
  int gesture = 0;
  double start_s = 0.0;
  /// Rest after the activation has fallen back to zero.
  double rest_s = 5.0;
};

struct SessionScript {
  std::vector<ScriptEvent> events;
  /// Carrier amplitude with no activation.
  double noise_floor = 0.05;
  /// Hold power over floor power on each template's strongest electrode.
  double snr_db = 20.0;
  std::uint64_t seed = 0;
  double min_duration_s = 0.0;
  bool band_limit = false;
  Carrier carrier = Carrier::Gaussian;
};

/// Cosine similarity of two gain vectors.
inline double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

namespace detail {

inline bool separated(const std::vector<std::vector<double>>& chosen, const std::vector<double>& cand, double sep) {
  for (const auto& c : chosen)
    if (cosine(c, cand) > sep + 1e-12) return false;
  return true;
}

}  // namespace detail

/// G gain patterns over L electrodes with pairwise cosine similarity <= separation.
/// First tries arcs around the armband (peak electrode 1, neighbours 0.5); falls
/// back to a greedy search over electrode subsets.
inline std::vector<GestureTemplate> default_template_set(std::size_t channels, std::size_t gestures, double separation,
                                                         double rise_s = 0.1, double hold_s = 5.0,
                                                         double fall_s = 0.1) {
  if (gestures < 2) throw ConfigError("need at least two gestures");
  if (channels == 0) throw ConfigError("need at least one channel");
  if (channels < 63 && gestures > (std::uint64_t{1} << channels) - 1)
    throw ConfigError("cannot build " + std::to_string(gestures) + " distinct templates over " +
                      std::to_string(channels) + " channels");

  std::vector<std::vector<double>> patterns;
  if (gestures <= channels) {
    for (std::size_t g = 0; g < gestures; ++g) {
      std::vector<double> gains(channels, 0.0);
      const std::size_t c = g * channels / gestures;
      gains[c] = 1.0;
      if (channels >= 3) {
        gains[(c + 1) % channels] = 0.5;
        gains[(c + channels - 1) % channels] = 0.5;
      }
      patterns.push_back(std::move(gains));
    }
    bool ok = true;
    for (std::size_t i = 0; i < patterns.size() && ok; ++i)
      for (std::size_t j = i + 1; j < patterns.size() && ok; ++j)
        ok = cosine(patterns[i], patterns[j]) <= separation + 1e-12;
    if (!ok) patterns.clear();
  }

  if (patterns.empty()) {
    if (channels > 20) throw ConfigError("subset search is limited to 20 channels");
    std::vector<std::uint32_t> masks;
    for (std::uint32_t m = 1; m < (1u << channels); ++m) masks.push_back(m);
    std::stable_sort(masks.begin(), masks.end(),
                     [](std::uint32_t a, std::uint32_t b) { return std::popcount(a) < std::popcount(b); });
    for (std::uint32_t m : masks) {
      std::vector<double> gains(channels, 0.0);
      for (std::size_t ch = 0; ch < channels; ++ch)
        if (m & (1u << ch)) gains[ch] = 1.0;
      if (detail::separated(patterns, gains, separation)) patterns.push_back(std::move(gains));
      if (patterns.size() == gestures) break;
    }
    if (patterns.size() < gestures)
      throw ConfigError("no set of " + std::to_string(gestures) + " templates over " + std::to_string(channels) +
                        " channels meets separation " + std::to_string(separation));
  }

  std::vector<GestureTemplate> out;
  for (std::size_t g = 0; g < gestures; ++g)
    out.push_back({static_cast<int>(g), std::move(patterns[g]), rise_s, hold_s, fall_s});
  return out;
}

/// Templates for the gestures of `cfg`, ids taken from its label table.
inline std::vector<GestureTemplate> default_template_set(const SessionConfig& cfg) {
  auto t = default_template_set(cfg.channels, cfg.gesture_count(), cfg.synth.separation, cfg.synth.rise_s,
                                cfg.synth.hold_s, cfg.synth.fall_s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i].gesture = cfg.gestures[i].id;
  return t;
}

/// Back-to-back events: `lead_s` of rest, then each gesture followed by `rest_s`.
inline SessionScript sequential_script(std::span<const int> gestures, const SessionConfig& cfg, std::uint64_t seed) {
  SessionScript s;
  s.noise_floor = cfg.synth.noise_floor;
  s.snr_db = cfg.synth.snr_db;
  s.seed = seed;
  s.band_limit = cfg.synth.band_limit;
  s.carrier = cfg.synth.carrier;
  s.min_duration_s = cfg.synth.lead_s;
  const double period = cfg.synth.rise_s + cfg.synth.hold_s + cfg.synth.fall_s + cfg.synth.rest_s;
  for (std::size_t i = 0; i < gestures.size(); ++i)
    s.events.push_back({gestures[i], cfg.synth.lead_s + static_cast<double>(i) * period, cfg.synth.rest_s});
  return s;
}

/// `count` gestures with (as far as divisible) equal repetitions per label, in seeded random order.
inline SessionScript balanced_random_script(std::size_t count, const SessionConfig& cfg, std::uint64_t seed) {
  std::vector<int> seq;
  for (std::size_t i = 0; i < count; ++i) seq.push_back(cfg.gestures[i % cfg.gesture_count()].id);
  Rng rng(derive_seed(seed, "sequence"));
  rng.shuffle(seq.begin(), seq.end());
  return sequential_script(seq, cfg, seed);
}

/// Amplitude scale of a template such that its strongest electrode reaches
/// `snr_db` above the noise floor in power.
inline double activation_amplitude(const GestureTemplate& t, double noise_floor, double snr_db) {
  const double peak = *std::max_element(t.gains.begin(), t.gains.end());
  if (!(peak > 0.0)) throw ConfigError("template for gesture " + std::to_string(t.gesture) + " has no positive gain");
  return noise_floor * (std::pow(10.0, snr_db / 20.0) - 1.0) / peak;
}

/// Amplitude-modulated noise: channel l = carrier * (floor + sum_e A_e * level_e(t) * gain_e[l]).
/// Annotates each activation start (flexion-onset), release start (return-onset)
/// and the end of the fall (rest).
inline Recording generate(const SessionScript& script, std::span<const GestureTemplate> templates, double fs,
                          std::size_t channels) {
  if (!(fs > 0.0)) throw ConfigError("fs must be positive");
  if (!(script.noise_floor > 0.0)) throw ConfigError("noise floor must be positive");
  const auto find = [&](int id) -> const GestureTemplate& {
    for (const auto& t : templates)
      if (t.gesture == id) return t;
    throw ConfigError("no template for gesture " + std::to_string(id));
  };
  for (const auto& t : templates)
    if (t.gains.size() != channels)
      throw ConfigError("template for gesture " + std::to_string(t.gesture) + " has " + std::to_string(t.gains.size()) +
                        " gains for " + std::to_string(channels) + " channels");

  struct Active {
    const GestureTemplate* tmpl;
    double start;
    double amplitude;
  };
  std::vector<Active> active;
  double end_s = script.min_duration_s;
  double prev_end = -1e300;
  for (const auto& e : script.events) {
    const GestureTemplate& t = find(e.gesture);
    if (e.start_s < prev_end) throw ConfigError("script events overlap");
    if (e.start_s < 0.0) throw ConfigError("script event starts before t = 0");
    prev_end = e.start_s + t.duration();
    end_s = std::max(end_s, prev_end + e.rest_s);
    active.push_back({&t, e.start_s, activation_amplitude(t, script.noise_floor, script.snr_db)});
  }

  Recording rec;
  rec.fs = fs;
  rec.channels = channels;
  const auto n_samples = static_cast<std::size_t>(std::ceil(end_s * fs - 1e-9));
  rec.samples.resize(n_samples);

  Rng rng(derive_seed(script.seed, "synth"));
  std::vector<Biquad> hp, lp;
  double carrier_gain = 1.0;
  if (script.band_limit) {
    const double hi = std::min(95.0, 0.475 * fs);
    const auto hpc = design_butterworth_highpass(std::min(20.0, 0.5 * hi), fs);
    const auto lpc = design_butterworth_lowpass(hi, fs);
    hp.assign(channels, Biquad(hpc));
    lp.assign(channels, Biquad(lpc));
    // unit-variance output: divide by the cascade's white-noise power gain
    Biquad h(hpc), l(lpc);
    double power = 0.0;
    for (int i = 0; i < 8192; ++i) {
      const double y = l.step(h.step(i == 0 ? 1.0 : 0.0));
      power += y * y;
    }
    carrier_gain = 1.0 / std::sqrt(power);
  }

  std::size_t cursor = 0;  // first event that may still be active
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double t = static_cast<double>(i) / fs;
    RawSample& s = rec.samples[i];
    s.t = static_cast<std::int64_t>(i);
    s.channels.assign(channels, script.noise_floor);
    while (cursor < active.size() && t >= active[cursor].start + active[cursor].tmpl->duration()) ++cursor;
    for (std::size_t e = cursor; e < active.size() && active[e].start <= t; ++e) {
      const double lvl = active[e].amplitude * active[e].tmpl->level(t - active[e].start);
      if (lvl == 0.0) continue;
      for (std::size_t ch = 0; ch < channels; ++ch) s.channels[ch] += lvl * active[e].tmpl->gains[ch];
    }
    for (std::size_t ch = 0; ch < channels; ++ch) {
      double c;
      if (script.carrier == Carrier::Rademacher) {
        c = (rng.next() >> 63) ? 1.0 : -1.0;
      } else {
        c = rng.gaussian();
        if (script.band_limit) c = carrier_gain * lp[ch].step(hp[ch].step(c));
      }
      s.channels[ch] *= c;
    }
  }

  const auto index_at = [fs](double seconds) { return static_cast<std::int64_t>(std::ceil(seconds * fs - 1e-9)); };
  const auto n_end = static_cast<std::int64_t>(n_samples);
  for (const auto& a : active) {
    const auto& t = *a.tmpl;
    const std::int64_t on = index_at(a.start);
    const std::int64_t release = index_at(a.start + t.rise_s + t.hold_s);
    const std::int64_t rest = index_at(a.start + t.duration());
    if (on < n_end) rec.annotations.push_back({on, t.gesture, Phase::FlexionOnset});
    if (release < n_end) rec.annotations.push_back({release, t.gesture, Phase::ReturnOnset});
    if (rest < n_end) rec.annotations.push_back({rest, t.gesture, Phase::Rest});
  }
  return rec;
}

inline Recording generate(const SessionScript& script, std::span<const GestureTemplate> templates,
                          const SessionConfig& cfg) {
  return generate(script, templates, cfg.fs, cfg.channels);
}

/// The full synthetic protocol: per gesture one calibration and one training
/// recording, then a balanced random evaluation sequence. Each recording draws
/// its noise from a seed derived from the config seed and its role.
struct SyntheticProtocol {
  std::vector<GestureTemplate> templates;
  std::vector<Recording> calibration;
  std::vector<Recording> training;
  Recording evaluation;
};

inline SyntheticProtocol synthesize_protocol(const SessionConfig& cfg) {
  cfg.validate();
  SyntheticProtocol p;
  p.templates = default_template_set(cfg);
  const auto repeated = [&](int id, std::size_t n, std::string_view role) {
    const std::vector<int> seq(n, id);
    const auto seed = derive_seed(cfg.seed, std::string(role) + "-" + std::to_string(id));
    return generate(sequential_script(seq, cfg, seed), p.templates, cfg);
  };
  for (const auto& g : cfg.gestures) {
    p.calibration.push_back(repeated(g.id, cfg.synth.calibration_repetitions, "calibration"));
    p.training.push_back(repeated(g.id, cfg.synth.repetitions, "training"));
  }
  p.evaluation = generate(balanced_random_script(cfg.synth.evaluation_gestures, cfg, derive_seed(cfg.seed, "evaluation")),
                          p.templates, cfg);
  return p;
}

}  // namespace tmag
