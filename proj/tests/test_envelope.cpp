#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "support.hpp"
#include "tmag/envelope.hpp"

using namespace tmag;

namespace {

// Reference coefficients from an independent Butterworth design (analog
// prototype, prewarped bilinear transform) in double precision.
struct Reference {
  double fc, fs, b0, b1, b2, a1, a2;
};

constexpr Reference kReference[] = {
    {2.0, 200.0, 0.0009446918438401507, 0.0018893836876803015, 0.0009446918438401507, -1.911197067426073,
     0.9149758348014336},
    {50.0, 200.0, 0.2928932188134524, 0.5857864376269049, 0.2928932188134524, 0.0, 0.17157287525380993},
    {10.0, 1000.0, 0.0009446918438401507, 0.0018893836876803015, 0.0009446918438401507, -1.911197067426073,
     0.9149758348014336},
};

// Analog prototype H(s) = 1 / (s^2 + sqrt2 s + 1) evaluated on the prewarped axis.
double analog_magnitude(double f, double fc, double fs) {
  const double omega = std::tan(std::numbers::pi * f / fs) / std::tan(std::numbers::pi * fc / fs);
  const std::complex<double> s(0.0, omega);
  return std::abs(1.0 / (s * s + std::numbers::sqrt2 * s + 1.0));
}

std::vector<double> run(const BiquadCoefficients& c, const std::vector<double>& x) {
  Biquad f(c);
  std::vector<double> y;
  for (double v : x) y.push_back(f.step(v));
  return y;
}

}  // namespace

TEST(ButterworthDesign, MatchesReferenceCoefficients) {
  for (const auto& r : kReference) {
    const auto c = design_butterworth_lowpass(r.fc, r.fs);
    EXPECT_NEAR(c.b0, r.b0, 1e-15);
    EXPECT_NEAR(c.b1, r.b1, 1e-15);
    EXPECT_NEAR(c.b2, r.b2, 1e-15);
    EXPECT_NEAR(c.a1, r.a1, 1e-14);
    EXPECT_NEAR(c.a2, r.a2, 1e-14);
  }
}

TEST(ButterworthDesign, ResponseEqualsPrewarpedAnalogPrototype) {
  for (double fc : {0.5, 2.0, 10.0, 40.0, 90.0}) {
    const auto c = design_butterworth_lowpass(fc, 200.0);
    for (double f : {0.0, 0.3, 1.0, 2.0, 5.0, 20.0, 60.0, 99.0})
      EXPECT_NEAR(c.magnitude(f, 200.0), analog_magnitude(f, fc, 200.0), 1e-12) << fc << " " << f;
  }
}

TEST(ButterworthDesign, DcGainAndHalfPowerPoint) {
  const auto c = design_butterworth_lowpass(2.0, 200.0);
  EXPECT_NEAR(c.dc_gain(), 1.0, 1e-9);
  EXPECT_NEAR(20.0 * std::log10(c.magnitude(2.0, 200.0)), -3.0103, 0.05);
  EXPECT_TRUE(c.stable());
}

TEST(ButterworthDesign, MeasuredSinusoidGainAtCutoff) {
  const auto c = design_butterworth_lowpass(2.0, 200.0);
  const double gain = testkit::measured_sine_gain(c, 2.0, 200.0);
  EXPECT_NEAR(gain, 1.0 / std::numbers::sqrt2, 0.005 / std::numbers::sqrt2);
}

TEST(ButterworthDesign, HighCutoffStillAttenuatesNyquist) {
  const auto c = design_butterworth_lowpass(50.0, 200.0);
  EXPECT_TRUE(c.stable());
  EXPECT_LT(20.0 * std::log10(std::abs(c.response(100.0, 200.0))), -20.0);
}

TEST(ButterworthDesign, RejectsOutOfBandCutoff) {
  EXPECT_THROW(design_butterworth_lowpass(0.0, 200.0), ParameterError);
  EXPECT_THROW(design_butterworth_lowpass(-1.0, 200.0), ParameterError);
  EXPECT_THROW(design_butterworth_lowpass(100.0, 200.0), ParameterError);
  EXPECT_THROW(design_butterworth_lowpass(150.0, 200.0), ParameterError);
  EXPECT_THROW(design_butterworth_lowpass(2.0, 0.0), ParameterError);
  EXPECT_THROW(design_butterworth_lowpass(2.0, -200.0), ParameterError);
}

TEST(ButterworthDesign, HighpassBlocksDc) {
  const auto c = design_butterworth_highpass(20.0, 200.0);
  EXPECT_NEAR(c.dc_gain(), 0.0, 1e-12);
  EXPECT_NEAR(c.magnitude(20.0, 200.0), 1.0 / std::numbers::sqrt2, 1e-12);
  EXPECT_TRUE(c.stable());
}

TEST(Rectify, AbsoluteValuePerChannel) {
  const RawSample s{3, {-1, 2, 0, -0.5, 1, -3, 4, -2}};
  EXPECT_EQ(rectify(s).channels, (std::vector<double>{1, 2, 0, 0.5, 1, 3, 4, 2}));
  EXPECT_EQ(rectify(s).t, 3);
  const RawSample zero{0, std::vector<double>(8, 0.0)};
  EXPECT_EQ(rectify(zero).channels, zero.channels);
  EXPECT_EQ(rectify(rectify(s)).channels, rectify(s).channels);
}

TEST(Biquad, ImpulseResponseMatchesReference) {
  const std::vector<double> expected = {0.0009446918438401507, 0.003694875969248927, 0.007141957752324022,
                                        0.010268966487471285,  0.013091299879802499, 0.015624197754651853,
                                        0.017882697893417454,  0.019881596387900588, 0.02163541227877294,
                                        0.023158356247540382};
  std::vector<double> x(expected.size(), 0.0);
  x[0] = 1.0;
  const auto y = run(design_butterworth_lowpass(2.0, 200.0), x);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], expected[i], 1e-15);
}

TEST(Biquad, ZeroInZeroOut) {
  const auto y = run(design_butterworth_lowpass(2.0, 200.0), std::vector<double>(500, 0.0));
  for (double v : y) EXPECT_EQ(v, 0.0);
}

TEST(Biquad, ConstantInputSettlesWithinTwoSeconds) {
  const auto y = run(design_butterworth_lowpass(2.0, 200.0), std::vector<double>(1000, 3.5));
  for (std::size_t i = 400; i < y.size(); ++i) EXPECT_NEAR(y[i], 3.5, 3.5e-3);
}

TEST(Biquad, RectifiedSineSettlesToItsSampledMean) {
  // the discrete mean of |sin| sampled at 5 points per cycle, which sits a few
  // percent below the continuous 2/pi
  double discrete_mean = 0.0;
  for (int i = 0; i < 5; ++i) discrete_mean += std::abs(std::sin(2.0 * std::numbers::pi * 40.0 * i / 200.0)) / 5.0;
  std::vector<double> x(4000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::abs(std::sin(2.0 * std::numbers::pi * 40.0 * i / 200.0));
  const auto y = run(design_butterworth_lowpass(2.0, 200.0), x);
  double lo = 1e9, hi = -1e9, mean = 0.0;
  for (std::size_t i = 3600; i < y.size(); ++i) {
    lo = std::min(lo, y[i]);
    hi = std::max(hi, y[i]);
    mean += y[i] / 400.0;
  }
  EXPECT_NEAR(mean, discrete_mean, 1e-6);
  EXPECT_NEAR(mean, 2.0 / std::numbers::pi, 0.04 * 2.0 / std::numbers::pi);
  EXPECT_LT(hi - lo, 0.01 * mean);
}

TEST(EnvelopeFilter, Linearity) {
  const auto c = design_butterworth_lowpass(2.0, 200.0);
  Rng rng(11);
  std::vector<double> u(800), v(800), w(800);
  const double alpha = 1.7, beta = -0.6;
  for (std::size_t i = 0; i < u.size(); ++i) {
    u[i] = rng.gaussian();
    v[i] = rng.gaussian();
    w[i] = alpha * u[i] + beta * v[i];
  }
  const auto yu = run(c, u), yv = run(c, v), yw = run(c, w);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double expect = alpha * yu[i] + beta * yv[i];
    EXPECT_NEAR(yw[i], expect, 1e-9 * std::max(1.0, std::abs(expect)));
  }
}

TEST(EnvelopeExtractor, ScaleCovariance) {
  const auto c = design_butterworth_lowpass(2.0, 200.0);
  Rng rng(5);
  for (double alpha : {0.0, 0.25, 2.0, 1000.0}) {
    EnvelopeExtractor a(c, 3), b(c, 3);
    std::vector<double> ya(3), yb(3);
    for (int i = 0; i < 600; ++i) {
      std::vector<double> x = {rng.gaussian(), rng.gaussian(), rng.gaussian()};
      std::vector<double> xs = {alpha * x[0], alpha * x[1], alpha * x[2]};
      a.process(x, ya);
      b.process(xs, yb);
      for (int ch = 0; ch < 3; ++ch) EXPECT_NEAR(yb[ch], alpha * ya[ch], 1e-12 * std::abs(alpha * ya[ch]) + 1e-300);
    }
  }
}

TEST(EnvelopeExtractor, Causality) {
  const auto c = design_butterworth_lowpass(2.0, 200.0);
  Rng rng(9);
  std::vector<std::vector<double>> x(400, std::vector<double>(2));
  for (auto& s : x) s = {rng.gaussian(), rng.gaussian()};
  auto mutated = x;
  for (std::size_t i = 250; i < mutated.size(); ++i) mutated[i] = {rng.gaussian() * 50.0, -7.0};
  EnvelopeExtractor a(c, 2), b(c, 2);
  std::vector<double> ya(2), yb(2);
  for (std::size_t i = 0; i < 250; ++i) {
    a.process(x[i], ya);
    b.process(mutated[i], yb);
    EXPECT_EQ(ya, yb);
  }
}

TEST(EnvelopeExtractor, BoundedInputBoundedOutput) {
  const auto c = design_butterworth_lowpass(2.0, 200.0);
  Rng rng(3);
  EnvelopeExtractor e(c, 4);
  std::vector<double> y(4);
  const double bound = 2.5;
  for (int i = 0; i < 20000; ++i) {
    std::vector<double> x(4);
    // worst case for overshoot: long on/off runs at the bound
    for (double& v : x) v = ((i / 300) % 2 ? bound : 0.0) * (rng.uniform() < 0.9 ? 1.0 : -1.0);
    e.process(x, y);
    if (i <= 400) continue;
    for (double v : y) EXPECT_LE(std::abs(v), bound * 1.1);
  }
}

TEST(EnvelopeExtractor, DeterministicAcrossRuns) {
  const auto c = design_butterworth_lowpass(2.0, 200.0);
  const auto once = [&] {
    Rng rng(21);
    EnvelopeExtractor e(c, 8);
    std::vector<double> y(8), all;
    for (int i = 0; i < 1000; ++i) {
      std::vector<double> x(8);
      for (double& v : x) v = rng.gaussian();
      e.process(x, y);
      all.insert(all.end(), y.begin(), y.end());
    }
    return all;
  };
  EXPECT_EQ(once(), once());
}

TEST(EnvelopeExtractor, ChannelMismatchIsStructural) {
  EnvelopeExtractor e(design_butterworth_lowpass(2.0, 200.0), 8);
  std::vector<double> out(8);
  EXPECT_THROW(e.process(std::vector<double>(7, 0.0), out), StructuralError);
  EnvelopeFilter f(design_butterworth_lowpass(2.0, 200.0), 8);
  EXPECT_THROW(f.step(RawSample{0, std::vector<double>(9, 0.0)}), StructuralError);
}

TEST(EnvelopeFilter, ResetRestoresZeroState) {
  EnvelopeFilter f(design_butterworth_lowpass(2.0, 200.0), 1);
  const auto first = f.step(RawSample{0, {1.0}});
  f.step(RawSample{1, {1.0}});
  f.reset();
  EXPECT_EQ(f.step(RawSample{0, {1.0}}).values, first.values);
}
