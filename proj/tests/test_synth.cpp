#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <vector>

#include "support.hpp"
#include "tmag/synth.hpp"

using namespace tmag;

namespace {

SessionScript empty_script(double seconds, Carrier carrier = Carrier::Gaussian) {
  SessionScript s;
  s.min_duration_s = seconds;
  s.seed = 5;
  s.carrier = carrier;
  return s;
}

std::vector<std::vector<double>> envelopes(const Recording& rec) {
  EnvelopeExtractor e(design_butterworth_lowpass(2.0, rec.fs), rec.channels);
  std::vector<std::vector<double>> out;
  for (const auto& s : rec.samples) out.push_back(e.process(s).values);
  return out;
}

}  // namespace

TEST(Templates, DefaultSetMeetsSeparation) {
  const auto t = default_template_set(8, 5, 0.8);
  ASSERT_EQ(t.size(), 5u);
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(t[i].gains.size(), 8u);
    EXPECT_GT(*std::max_element(t[i].gains.begin(), t[i].gains.end()), 0.0);
    for (std::size_t j = i + 1; j < t.size(); ++j) {
      EXPECT_LE(cosine(t[i].gains, t[j].gains), 0.8);
      EXPECT_NE(t[i].gains, t[j].gains);
    }
  }
}

TEST(Templates, TwoDisjointPatternsAreOrthogonal) {
  const auto t = default_template_set(8, 2, 0.0);
  EXPECT_EQ(cosine(t[0].gains, t[1].gains), 0.0);
}

TEST(Templates, SubsetSearchWhenArcsDoNotFit) {
  const auto t = default_template_set(4, 6, 0.75);
  ASSERT_EQ(t.size(), 6u);
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = i + 1; j < t.size(); ++j) EXPECT_LE(cosine(t[i].gains, t[j].gains), 0.75 + 1e-12);
}

TEST(Templates, InfeasibleRequestsAreConfigErrors) {
  EXPECT_THROW(default_template_set(3, 8, 0.0), ConfigError);
  EXPECT_THROW(default_template_set(2, 3, 0.0), ConfigError);
  EXPECT_THROW(default_template_set(8, 1, 0.8), ConfigError);
  EXPECT_THROW(default_template_set(8, 5, -0.5), ConfigError);
}

TEST(Templates, TrapezoidLevel) {
  const GestureTemplate t{0, {1.0}, 0.1, 1.0, 0.2};
  EXPECT_EQ(t.level(-0.01), 0.0);
  EXPECT_NEAR(t.level(0.05), 0.5, 1e-12);
  EXPECT_EQ(t.level(0.5), 1.0);
  EXPECT_NEAR(t.level(1.2), 0.5, 1e-12);
  EXPECT_EQ(t.level(1.31), 0.0);
  EXPECT_DOUBLE_EQ(t.duration(), 1.3);
}

TEST(Generate, EmptyScriptIsNoiseFloorOnly) {
  const std::vector<GestureTemplate> none;
  const auto rec = generate(empty_script(3.0, Carrier::Rademacher), none, 200.0, 8);
  EXPECT_EQ(rec.size(), 600u);
  EXPECT_TRUE(rec.annotations.empty());
  for (const auto& s : rec.samples)
    for (double v : s.channels) EXPECT_DOUBLE_EQ(std::abs(v), 0.05);
  EXPECT_NO_THROW(rec.validate());
}

TEST(Generate, SameSeedIsBitIdentical) {
  const auto cfg = testkit::small_config();
  const auto t = default_template_set(cfg);
  const std::vector<int> seq = {0, 2, 1};
  const auto a = generate(sequential_script(seq, cfg, 11), t, cfg);
  const auto b = generate(sequential_script(seq, cfg, 11), t, cfg);
  EXPECT_EQ(a, b);
  const auto c = generate(sequential_script(seq, cfg, 12), t, cfg);
  EXPECT_NE(a.samples, c.samples);
  EXPECT_EQ(a.annotations, c.annotations);
}

TEST(Generate, SingleChannelActivationLeavesOthersAlone) {
  std::vector<double> gains(8, 0.0);
  gains[0] = 1.0;
  const std::vector<GestureTemplate> t = {{0, gains, 0.1, 4.0, 0.1}};
  SessionScript s;
  s.events = {{0, 5.0, 5.0}};
  s.seed = 3;
  s.noise_floor = 0.05;
  s.snr_db = 20.0;
  const auto rec = generate(s, t, 200.0, 8);
  const double amplitude = activation_amplitude(t[0], 0.05, 20.0);
  const auto env = envelopes(rec);
  const auto mean_over = [&](std::size_t ch, std::size_t from, std::size_t to) {
    double m = 0.0;
    for (std::size_t i = from; i < to; ++i) m += env[i][ch];
    return m / static_cast<double>(to - from);
  };
  // rest: 2-4 s, hold: 7-9 s
  const double mean_abs_carrier = std::sqrt(2.0 / std::numbers::pi);
  EXPECT_NEAR(mean_over(0, 1400, 1800) - mean_over(0, 400, 800), amplitude * mean_abs_carrier,
              0.1 * amplitude * mean_abs_carrier);
  for (std::size_t ch = 1; ch < 8; ++ch)
    EXPECT_LT(std::abs(mean_over(ch, 1400, 1800) - mean_over(ch, 400, 800)), 0.05 * amplitude);
}

TEST(Generate, AnnotationsSitInsideTheRise) {
  const auto cfg = testkit::small_config();
  const auto t = default_template_set(cfg);
  const std::vector<int> seq = {1, 0, 2, 2};
  const auto script = sequential_script(seq, cfg, 4);
  const auto rec = generate(script, t, cfg);
  const auto flex = rec.annotations_of(Phase::FlexionOnset);
  const auto ret = rec.annotations_of(Phase::ReturnOnset);
  const auto rest = rec.annotations_of(Phase::Rest);
  ASSERT_EQ(flex.size(), seq.size());
  ASSERT_EQ(ret.size(), seq.size());
  ASSERT_EQ(rest.size(), seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const double start = script.events[i].start_s * cfg.fs;
    EXPECT_GE(static_cast<double>(flex[i].n), start - 1e-6);
    EXPECT_LE(static_cast<double>(flex[i].n), start + cfg.synth.rise_s * cfg.fs);
    EXPECT_EQ(flex[i].gesture, seq[i]);
    EXPECT_EQ(ret[i].n - flex[i].n, std::llround((cfg.synth.rise_s + cfg.synth.hold_s) * cfg.fs));
    EXPECT_GT(rest[i].n, ret[i].n);
  }
}

TEST(Generate, HoldPowerMatchesRequestedSnr) {
  for (double snr : {10.0, 20.0, 30.0}) {
    const std::vector<GestureTemplate> t = {{0, {0.5, 1.0, 0.25}, 0.1, 20.0, 0.1}};
    SessionScript s;
    s.events = {{0, 20.0, 20.0}};
    s.snr_db = snr;
    s.seed = 8;
    const auto rec = generate(s, t, 200.0, 3);
    double rest = 0.0, hold = 0.0;
    for (std::size_t i = 0; i < 4000; ++i) rest += rec.samples[i].channels[1] * rec.samples[i].channels[1];
    for (std::size_t i = 4100; i < 8000; ++i) hold += rec.samples[i].channels[1] * rec.samples[i].channels[1];
    const double measured = 10.0 * std::log10((hold / 3900.0) / (rest / 4000.0));
    EXPECT_NEAR(measured, snr, 1.0) << snr;
  }
}

TEST(Generate, RestEnvelopeIsStationary) {
  const std::vector<GestureTemplate> none;
  const auto rec = generate(empty_script(120.0), none, 200.0, 2);
  const auto env = envelopes(rec);
  const auto var = [&](std::size_t from, std::size_t to) {
    double m = 0.0, q = 0.0;
    for (std::size_t i = from; i < to; ++i) m += env[i][0];
    m /= static_cast<double>(to - from);
    for (std::size_t i = from; i < to; ++i) q += (env[i][0] - m) * (env[i][0] - m);
    return q / static_cast<double>(to - from);
  };
  const double first = var(400, 12200), second = var(12200, 24000);
  EXPECT_NEAR(first / second, 1.0, 0.35);
}

TEST(Generate, BandLimitedCarrierHasUnitPower) {
  SessionScript s = empty_script(60.0);
  s.band_limit = true;
  s.noise_floor = 1.0;
  const std::vector<GestureTemplate> none;
  const auto rec = generate(s, none, 200.0, 1);
  double p = 0.0;
  for (std::size_t i = 200; i < rec.size(); ++i) p += rec.samples[i].channels[0] * rec.samples[i].channels[0];
  EXPECT_NEAR(p / static_cast<double>(rec.size() - 200), 1.0, 0.05);
}

TEST(Generate, ScriptErrors) {
  const auto cfg = testkit::small_config();
  const auto t = default_template_set(cfg);
  SessionScript s;
  s.events = {{9, 1.0, 1.0}};
  EXPECT_THROW(generate(s, t, cfg), ConfigError);
  s.events = {{0, 1.0, 1.0}, {1, 1.5, 1.0}};
  EXPECT_THROW(generate(s, t, cfg), ConfigError);
  s.events = {};
  EXPECT_THROW(generate(s, t, 0.0, 8), ConfigError);
  EXPECT_THROW(generate(s, t, 200.0, 5), ConfigError);
}

TEST(Scripts, BalancedRandomSequence) {
  const SessionConfig cfg;
  const auto s = balanced_random_script(150, cfg, 2020);
  ASSERT_EQ(s.events.size(), 150u);
  std::map<int, int> count;
  for (const auto& e : s.events) ++count[e.gesture];
  for (const auto& g : cfg.gestures) EXPECT_EQ(count[g.id], 30);
  const auto again = balanced_random_script(150, cfg, 2020);
  for (std::size_t i = 0; i < 150; ++i) EXPECT_EQ(s.events[i].gesture, again.events[i].gesture);
  bool any_run_broken = false;
  for (std::size_t i = 1; i < 150; ++i) any_run_broken |= s.events[i].gesture != s.events[i - 1].gesture;
  EXPECT_TRUE(any_run_broken);
}

TEST(Scripts, SequentialTiming) {
  const SessionConfig cfg;
  const std::vector<int> seq = {0, 1};
  const auto s = sequential_script(seq, cfg, 1);
  EXPECT_DOUBLE_EQ(s.events[0].start_s, 5.0);
  EXPECT_DOUBLE_EQ(s.events[1].start_s, 5.0 + 10.2);
  EXPECT_EQ(s.snr_db, 20.0);
}

TEST(Protocol, ShapesOfTheSyntheticSession) {
  const auto cfg = testkit::small_config();
  const auto p = synthesize_protocol(cfg);
  ASSERT_EQ(p.calibration.size(), cfg.gesture_count());
  ASSERT_EQ(p.training.size(), cfg.gesture_count());
  for (std::size_t i = 0; i < cfg.gesture_count(); ++i) {
    EXPECT_EQ(p.calibration[i].annotations_of(Phase::FlexionOnset).size(), cfg.synth.calibration_repetitions);
    EXPECT_EQ(p.training[i].annotations_of(Phase::FlexionOnset).size(), cfg.synth.repetitions);
    for (const auto& a : p.training[i].annotations) EXPECT_EQ(a.gesture, cfg.gestures[i].id);
  }
  EXPECT_EQ(p.evaluation.annotations_of(Phase::FlexionOnset).size(), cfg.synth.evaluation_gestures);
  EXPECT_NE(p.training[0].samples, p.calibration[0].samples);
}
