#include <gtest/gtest.h>

#include <vector>

#include "support.hpp"
#include "tmag/tma.hpp"

using namespace tmag;

TEST(FeatureVector, RowCountFormula) {
  for (std::size_t l = 1; l <= 16; ++l) {
    EXPECT_EQ(feature_rows(l), l + l * (l + 1) / 2);
    EXPECT_EQ(build_feature_vector(std::vector<double>(l, 1.0)).size(), feature_rows(l));
  }
  EXPECT_EQ(feature_rows(8), 44u);
}

TEST(FeatureVector, TwoChannelExpansion) {
  EXPECT_EQ(build_feature_vector(std::vector<double>{2, 3}), (std::vector<double>{2, 3, 4, 6, 9}));
}

TEST(FeatureVector, LexicographicProductOrder) {
  const std::vector<double> x = {2, 3, 5, 7};
  const auto v = build_feature_vector(x);
  std::vector<double> expect = x;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i; j < x.size(); ++j) expect.push_back(x[i] * x[j]);
  EXPECT_EQ(v, expect);
  EXPECT_EQ(v[4], 4.0);   // x0^2
  EXPECT_EQ(v[7], 14.0);  // x0*x3
  EXPECT_EQ(v[8], 9.0);   // x1^2
  EXPECT_EQ(v[13], 49.0);  // x3^2
}

TEST(FeatureVector, ZeroFrame) {
  for (double v : build_feature_vector(std::vector<double>(8, 0.0))) EXPECT_EQ(v, 0.0);
}

TEST(FeatureVector, LengthMismatchIsStructural) {
  std::vector<double> out(10);
  EXPECT_THROW(build_feature_vector(std::vector<double>(8, 0.0), out), StructuralError);
}

TEST(FrameWindow, NotReadyUntilFull) {
  FrameWindow w(2, 3);
  EXPECT_FALSE(w.ready());
  EXPECT_THROW(w.assemble(), NotReadyError);
  w.push(0, std::vector<double>{1, 1});
  w.push(1, std::vector<double>{1, 1});
  EXPECT_FALSE(w.ready());
  EXPECT_THROW(w.assemble(), NotReadyError);
  w.push(2, std::vector<double>{1, 1});
  EXPECT_TRUE(w.ready());
}

TEST(FrameWindow, HandWorkedTwoByTwoMap) {
  FrameWindow w(2, 2);
  w.push(0, std::vector<double>{1, 0});
  w.push(1, std::vector<double>{0, 1});
  const TmaMap m = w.assemble();
  EXPECT_EQ(m.end_index, 1);
  EXPECT_EQ(m.rows(), 5u);
  EXPECT_EQ(m.cols, 2u);
  const std::vector<std::vector<double>> expect = {{1, 0}, {0, 1}, {1, 0}, {0, 0}, {0, 1}};
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(m.at(r, c), expect[r][c]);
}

TEST(FrameWindow, KeepsMostRecentFrames) {
  const std::size_t m = 5;
  FrameWindow w(1, m);
  for (std::int64_t t = 0; t <= static_cast<std::int64_t>(m); ++t) w.push(t, std::vector<double>{double(t + 1)});
  const auto map = w.assemble();
  for (std::size_t c = 0; c < m; ++c) EXPECT_EQ(map.at(0, c), double(c + 2));
}

TEST(FrameWindow, DefaultShape) {
  FrameWindow w(8, 80);
  for (std::int64_t t = 0; t < 80; ++t) w.push(t, std::vector<double>(8, 0.5));
  const auto map = w.assemble();
  EXPECT_EQ(map.rows(), 44u);
  EXPECT_EQ(map.cols, 80u);
  for (std::size_t r = 0; r < 44; ++r)
    for (std::size_t c = 1; c < 80; ++c) EXPECT_EQ(map.at(r, c), map.at(r, 0));
}

TEST(FrameWindow, ShiftProperty) {
  Rng rng(2);
  FrameWindow w(4, 10);
  std::vector<std::vector<double>> frames;
  for (std::int64_t t = 0; t < 40; ++t) {
    std::vector<double> f(4);
    for (double& v : f) v = rng.uniform();
    frames.push_back(f);
  }
  for (std::int64_t t = 0; t < 10; ++t) w.push(t, frames[t]);
  TmaMap prev = w.assemble();
  for (std::int64_t t = 10; t < 40; ++t) {
    w.push(t, frames[t]);
    const TmaMap cur = w.assemble();
    EXPECT_EQ(cur.end_index, prev.end_index + 1);
    const auto fresh = build_feature_vector(frames[t]);
    for (std::size_t r = 0; r < cur.rows(); ++r) {
      for (std::size_t c = 0; c + 1 < cur.cols; ++c) EXPECT_EQ(cur.at(r, c), prev.at(r, c + 1));
      EXPECT_EQ(cur.at(r, cur.cols - 1), fresh[r]);
    }
    prev = cur;
  }
}

TEST(FrameWindow, ColumnsMatchFramesAtTheirIndices) {
  Rng rng(8);
  const std::size_t m = 6;
  FrameWindow w(3, m);
  std::vector<std::vector<double>> frames;
  for (std::int64_t t = 100; t < 120; ++t) {
    std::vector<double> f(3);
    for (double& v : f) v = rng.uniform();
    frames.push_back(f);
    w.push(t, f);
  }
  const auto map = w.assemble();
  EXPECT_EQ(map.end_index, 119);
  for (std::size_t j = 0; j < m; ++j) {
    const auto expect = build_feature_vector(frames[frames.size() - m + j]);
    for (std::size_t r = 0; r < map.rows(); ++r) EXPECT_EQ(map.at(r, j), expect[r]);
  }
}

TEST(FrameWindow, ProductConsistency) {
  Rng rng(4);
  FrameWindow w(8, 80);
  for (std::int64_t t = 0; t < 200; ++t) {
    std::vector<double> f(8);
    for (double& v : f) v = rng.uniform();
    w.push(t, f);
  }
  const auto map = w.assemble();
  for (std::size_t c = 0; c < map.cols; ++c) {
    std::size_t r = 8;
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = i; j < 8; ++j) EXPECT_NEAR(map.at(r++, c), map.at(i, c) * map.at(j, c), 1e-12);
  }
}

TEST(FrameWindow, ScaleProperty) {
  Rng rng(6);
  FrameWindow a(3, 8), b(3, 8);
  const double alpha = 2.0;  // power of two keeps every product exact
  for (std::int64_t t = 0; t < 8; ++t) {
    std::vector<double> f(3), g(3);
    for (std::size_t i = 0; i < 3; ++i) {
      f[i] = rng.uniform();
      g[i] = alpha * f[i];
    }
    a.push(t, f);
    b.push(t, g);
  }
  const auto ma = a.assemble(), mb = b.assemble();
  for (std::size_t r = 0; r < ma.rows(); ++r)
    for (std::size_t c = 0; c < ma.cols; ++c)
      EXPECT_EQ(mb.at(r, c), (r < 3 ? alpha : alpha * alpha) * ma.at(r, c));
}

TEST(FrameWindow, RejectsGapsAndWrongWidth) {
  FrameWindow w(2, 4);
  w.push(5, std::vector<double>{1, 1});
  EXPECT_THROW(w.push(7, std::vector<double>{1, 1}), StructuralError);
  EXPECT_THROW(w.push(6, std::vector<double>{1, 1, 1}), StructuralError);
  EXPECT_THROW(FrameWindow(2, 0), ParameterError);
}

TEST(Normalization, FitUsesGlobalRegionExtremes) {
  TmaMap a(0, 2, 3), b(1, 2, 3);
  // first-order rows 0..1, products rows 2..4
  a.data = {0.1, 0.5, 0.9, 0.2, 0.3, 0.4, 1, 2, 3, 1, 1, 1, 0, 0, 0};
  b.data = {0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 5, 0, 0, 0, 0, 0, 0, 0, 0};
  const std::vector<TmaMap> one = {a};
  const auto ba = fit_normalization(one);
  EXPECT_EQ(ba.first_order_min, 0.1);
  EXPECT_EQ(ba.first_order_max, 0.9);
  EXPECT_EQ(ba.second_order_min, 0.0);
  EXPECT_EQ(ba.second_order_max, 3.0);
  const std::vector<TmaMap> two = {a, b};
  EXPECT_EQ(fit_normalization(two).second_order_max, 5.0);
}

TEST(Normalization, DegenerateRegionWidensByOne) {
  const std::vector<TmaMap> zeros = {TmaMap(0, 8, 80), TmaMap(1, 8, 80)};
  const auto b = fit_normalization(zeros);
  EXPECT_EQ(b, (NormalizationBounds{0.0, 1.0, 0.0, 1.0}));
  EXPECT_TRUE(b.valid());
}

TEST(Normalization, EmptySetIsAnError) {
  EXPECT_THROW(fit_normalization(std::vector<TmaMap>{}), ParameterError);
  EXPECT_THROW(NormalizationFitter{}.bounds(), ParameterError);
}

TEST(Normalization, MixedShapesRejected) {
  const std::vector<TmaMap> maps = {TmaMap(0, 2, 3), TmaMap(0, 2, 4)};
  EXPECT_THROW(fit_normalization(maps), StructuralError);
}

TEST(Normalization, EndpointsClampAndIdempotence) {
  TmaMap m(0, 1, 4);
  // rows: x, x^2
  m.data = {0.2, 0.6, -1.0, 3.0, 0.04, 0.36, 5.0, -2.0};
  const NormalizationBounds b{0.2, 0.6, 0.04, 0.36};
  const TmaMap n = normalize(m, b);
  EXPECT_EQ(n.data, (std::vector<double>{0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0}));
  EXPECT_EQ(m.data[2], -1.0);  // input untouched
  const NormalizationBounds unit{0.0, 1.0, 0.0, 1.0};
  EXPECT_EQ(normalize(normalize(n, unit), unit), normalize(n, unit));
}

TEST(Normalization, OutputsInUnitInterval) {
  Rng rng(12);
  std::vector<TmaMap> train;
  for (int i = 0; i < 5; ++i) train.push_back(testkit::random_map(rng, i, 8, 80));
  const auto b = fit_normalization(train);
  for (int i = 0; i < 5; ++i) {
    const auto m = normalize(testkit::random_map(rng, i, 8, 80, 3.0), b);
    for (double v : m.data) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Normalization, InvalidBoundsRejected) {
  TmaMap m(0, 1, 1);
  EXPECT_THROW(normalize_in_place(m, NormalizationBounds{1.0, 1.0, 0.0, 1.0}), ParameterError);
}
