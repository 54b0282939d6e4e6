#include <gtest/gtest.h>

#include <cmath>

#include "agentflow/fusion.hpp"
#include "support/oracles.hpp"

using namespace agentflow;
namespace ts = testing_support;

namespace {

ObservationWindow window(std::initializer_list<std::pair<double, double>> pairs) {
  ObservationWindow w;
  w.pairs.assign(pairs);
  return w;
}

}  // namespace

// --- correlation --------------------------------------------------------------

TEST(Correlation, IdenticalSeriesIsPerfect) {
  auto r = correlation(window({{1, 1}, {2, 2}, {3, 3}}));
  ASSERT_TRUE(r);
  EXPECT_EQ(*r, 1.0);
}

TEST(Correlation, DecreasingAffineIsInverse) {
  auto r = correlation(window({{1, 5}, {2, 3}, {3, 1}}));
  ASSERT_TRUE(r);
  EXPECT_EQ(*r, -1.0);
}

TEST(Correlation, MixedSeriesFrozenValue) {
  // direct scalar evaluation: 6 / sqrt(84)
  auto r = correlation(window({{1, 2}, {2, 1}, {3, 4}}));
  ASSERT_TRUE(r);
  EXPECT_NEAR(*r, 0.6546536707079772, 1e-12);
}

TEST(Correlation, ConstantSeriesHasZeroVariance) {
  EXPECT_FALSE(correlation(window({{1, 1}, {2, 1}, {3, 1}})));
  EXPECT_FALSE(correlation(window({{4, 1}, {4, 2}, {4, 9}})));
}

TEST(Correlation, NeedsAtLeastTwoPairs) {
  EXPECT_THROW(correlation(window({{1, 1}})), Error);
}

TEST(CorrelationSquared, SignIsIrrelevant) {
  EXPECT_EQ(correlation_squared(1.0), 1.0);
  EXPECT_EQ(correlation_squared(-1.0), 1.0);
  EXPECT_EQ(correlation_squared(0.5), 0.25);
}

TEST(Correlation, ExchangeAndAffineInvariance) {
  Rng rng(808);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + rng.pick(12);
    ObservationWindow ab, ba, scaled;
    const double alpha = rng.real(0.1, 5.0);
    const double beta = rng.real(-10, 10);
    for (std::size_t i = 0; i < k; ++i) {
      const double a = rng.real(-50, 50);
      const double b = rng.real(-50, 50);
      ab.pairs.emplace_back(a, b);
      ba.pairs.emplace_back(b, a);
      scaled.pairs.emplace_back(alpha * a + beta, b);
    }
    auto r1 = correlation(ab);
    auto r2 = correlation(ba);
    auto r3 = correlation(scaled);
    ASSERT_EQ(r1.has_value(), r2.has_value());
    if (!r1) continue;
    EXPECT_NEAR(*r1, *r2, 1e-12);
    EXPECT_EQ(correlation_squared(*r1), correlation_squared(*r2));
    ASSERT_TRUE(r3);
    EXPECT_NEAR(*r1, *r3, 1e-9);
  }
}

// --- closeness -----------------------------------------------------------------

TEST(Closeness, EqualSensorsGiveGammaOne) {
  Closeness c = closeness(10, 10, 20);
  EXPECT_EQ(c.raw, 1.0);
  EXPECT_EQ(c.clamped, 1.0);
}

TEST(Closeness, FrozenMidValue) {
  Closeness c = closeness(10, 15, 20);  // 1 - 5/20
  EXPECT_EQ(c.raw, 0.75);
  EXPECT_EQ(c.clamped, 0.75);
}

TEST(Closeness, BeyondThresholdClampsToZero) {
  Closeness c = closeness(0, 30, 20);  // 1 - 30/20
  EXPECT_EQ(c.raw, -0.5);
  EXPECT_EQ(c.clamped, 0.0);
}

TEST(Closeness, NonPositiveThresholdIsInvalid) {
  try {
    closeness(1, 2, 0);
    FAIL() << "expected InvalidThreshold";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_threshold);
  }
}

TEST(Closeness, GammaOneIffEqualAndMonotoneInDistance) {
  Rng rng(9);
  for (int trial = 0; trial < 500; ++trial) {
    const double a = rng.real(-100, 100);
    const double d1 = rng.real(0, 50);
    const double d2 = d1 + rng.real(0, 50);
    const double thr = rng.real(0.1, 40);
    EXPECT_EQ(closeness(a, a, thr).clamped, 1.0);
    if (d1 > 0) {
      EXPECT_LT(closeness(a, a + d1, thr).clamped, 1.0);
    }
    EXPECT_GE(closeness(a, a + d1, thr).clamped, closeness(a, a + d2, thr).clamped);
    EXPECT_LE(closeness(a, a + d1, thr).raw, 1.0);
  }
}

// --- average -------------------------------------------------------------------

TEST(Average, Basics) {
  EXPECT_EQ(average(4, 6), 5.0);
  EXPECT_EQ(average(3.5, 3.5), 3.5);
  EXPECT_EQ(average(-1, 1), 0.0);
}

// --- confidence --------------------------------------------------------------------

TEST(Confidence, BothFactorsAtMaximum) {
  const double h[] = {1.0};
  EXPECT_EQ(confidence(h, 1.0), 1.0);
}

TEST(Confidence, SingleWindowProduct) {
  const double h[] = {0.25};
  EXPECT_DOUBLE_EQ(confidence(h, 0.8), 0.2);
}

TEST(Confidence, MinimumOverHistory) {
  const double h[] = {0.9, 0.25, 0.81};
  EXPECT_EQ(confidence(h, 1.0), 0.25);
}

TEST(Confidence, StaysInUnitIntervalAndZeroWithZeroGamma) {
  Rng rng(77);
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<double> h;
    const std::size_t n = 1 + rng.pick(6);
    for (std::size_t i = 0; i < n; ++i) h.push_back(rng.real01());
    const double gamma = rng.real01();
    const double c = confidence(h, gamma);
    EXPECT_GE(c, 0.0);
    EXPECT_LE(c, 1.0);
    EXPECT_LE(c, gamma);
    EXPECT_EQ(confidence(h, 0.0), 0.0);
  }
}

// --- fuse ---------------------------------------------------------------------------

TEST(Fuse, HighConfidencePassesTheAverage) {
  FuseOutcome o = fuse(5, 0.9, 0.5, 20, 1.5, 100, std::nullopt);
  EXPECT_EQ(o.fused, 5.0);
  EXPECT_EQ(o.flag, FusionFlag::ok);
  EXPECT_FALSE(o.new_closeness_threshold);
}

TEST(Fuse, LowConfidenceHoldsLastGoodAndAdaptsThreshold) {
  FuseOutcome o = fuse(5, 0.1, 0.5, 20, 1.5, 100, 4.0);
  EXPECT_EQ(o.fused, 4.0);
  EXPECT_EQ(o.flag, FusionFlag::low_confidence);
  ASSERT_TRUE(o.new_closeness_threshold);
  EXPECT_EQ(*o.new_closeness_threshold, 30.0);
}

TEST(Fuse, FirstWindowWithoutHistoryIsDegraded) {
  FuseOutcome o = fuse(5, 0.1, 0.5, 20, 1.5, 100, std::nullopt);
  EXPECT_EQ(o.fused, 5.0);
  EXPECT_EQ(o.flag, FusionFlag::degraded);
}

TEST(Fuse, AdaptationNeverExceedsTheCap) {
  double thr = 20;
  for (int i = 0; i < 20; ++i) {
    FuseOutcome o = fuse(5, 0.0, 0.5, thr, 1.5, 100, 4.0);
    ASSERT_TRUE(o.new_closeness_threshold);
    EXPECT_GE(*o.new_closeness_threshold, thr);  // non-decreasing
    EXPECT_LE(*o.new_closeness_threshold, 100.0);
    thr = *o.new_closeness_threshold;
  }
  EXPECT_EQ(thr, 100.0);
}

TEST(FusionParams, BoundsAreValidated) {
  FusionParams p;
  p.closeness_threshold = 0;
  EXPECT_THROW(p.validate(), Error);
  p = {};
  p.confidence_threshold = 1.5;
  EXPECT_THROW(p.validate(), Error);
  p = {};
  p.window = 1;
  EXPECT_THROW(p.validate(), Error);
  p = {};
  p.rho = 1.0;
  EXPECT_THROW(p.validate(), Error);
}

// --- the agent pipeline ------------------------------------------------------------

TEST(Pipeline, EqualSensorsWindowIsPerfect) {
  FusionParams p;
  p.window = 3;
  FusionRun run = run_fusion_pipeline({{1, 1}, {2, 2}, {3, 3}}, p, 1);
  ASSERT_EQ(run.rows.size(), 1u);
  const FusionResult& row = run.rows[0];
  EXPECT_EQ(row.r, 1.0);
  EXPECT_EQ(row.corr2, 1.0);
  EXPECT_EQ(row.gamma, 1.0);
  EXPECT_EQ(row.average, 3.0);  // sensors agree: the sensor value itself
  EXPECT_EQ(row.confidence, 1.0);
  EXPECT_EQ(row.fused, 3.0);
  EXPECT_EQ(row.flag, FusionFlag::ok);
}

TEST(Pipeline, ConstantEqualSeriesDegradesButStaysLive) {
  FusionParams p;
  p.window = 4;
  std::vector<std::pair<double, double>> samples(8, {5.0, 5.0});
  FusionRun run = run_fusion_pipeline(samples, p, 1);
  ASSERT_EQ(run.rows.size(), 2u);
  for (const auto& row : run.rows) {
    EXPECT_TRUE(row.zero_variance);
    EXPECT_EQ(row.r, 0.0);
    EXPECT_EQ(row.confidence, 0.0);
    EXPECT_EQ(row.flag, FusionFlag::degraded);
    EXPECT_EQ(row.fused, 5.0);
  }
}

TEST(Pipeline, MatchesTheScalarOracleWithFeedback) {
  FusionParams p;
  p.window = 8;
  p.closeness_threshold = 6;
  p.confidence_threshold = 0.55;
  p.rho = 1.4;
  p.closeness_cap = 40;
  Rng rng(2718);
  std::vector<std::pair<double, double>> samples;
  for (int i = 0; i < 104; ++i) {
    const double base = rng.real(-20, 20);
    samples.emplace_back(base + rng.real(-4, 4), base + rng.real(-4, 4));
  }
  FusionRun run = run_fusion_pipeline(samples, p, 5);
  auto oracle = ts::fusion_oracle(samples, p);
  ASSERT_EQ(run.rows.size(), oracle.size());
  bool adapted = false;
  for (std::size_t i = 0; i < oracle.size(); ++i) {
    EXPECT_NEAR(run.rows[i].r, oracle[i].r, 1e-9) << "window " << i;
    EXPECT_NEAR(run.rows[i].corr2, oracle[i].corr2, 1e-9) << "window " << i;
    EXPECT_NEAR(run.rows[i].gamma, oracle[i].gamma, 1e-9) << "window " << i;
    EXPECT_NEAR(run.rows[i].average, oracle[i].avg, 1e-9) << "window " << i;
    EXPECT_NEAR(run.rows[i].confidence, oracle[i].confidence, 1e-9) << "window " << i;
    EXPECT_NEAR(run.rows[i].fused, oracle[i].fused, 1e-9) << "window " << i;
    EXPECT_EQ(fusion_flag_name(run.rows[i].flag), oracle[i].flag) << "window " << i;
    if (oracle[i].flag != "ok") adapted = true;
  }
  EXPECT_TRUE(adapted) << "trace never exercised the feedback path";
}

TEST(Pipeline, FeedbackRaisesAgent2ThresholdMonotonically) {
  FusionParams p;
  p.window = 2;
  p.closeness_threshold = 1.0;
  p.confidence_threshold = 0.9;
  p.rho = 2.0;
  p.closeness_cap = 8.0;
  // far-apart sensors: every window fails the gate
  std::vector<std::pair<double, double>> samples;
  for (int i = 0; i < 12; ++i) samples.emplace_back(i, i + 50.0);

  CustomOpRegistry reg;
  register_fusion_ops(reg, p.window);
  MultiAgentSystem sys = build_fusion_system(p, 1, reg);
  double last = p.closeness_threshold;
  std::size_t fed = 0;
  for (int s = 0; s < 60; ++s) {
    std::map<std::string, double> env;
    if (fed < samples.size()) {
      env = {{"s1", samples[fed].first}, {"s2", samples[fed].second}};
      ++fed;
    }
    sys.step(env);
    const double thr = sys.agent("Agent2").beliefs.at("closeness_threshold");
    EXPECT_GE(thr, last);
    EXPECT_LE(thr, p.closeness_cap);
    last = thr;
  }
  EXPECT_EQ(last, p.closeness_cap);
}

// The smallest window where gate feedback still lands before the next
// window's closeness firing.
TEST(Pipeline, SmallestSequentialWindowStillMatchesTheOracle) {
  FusionParams p;
  p.window = 3;
  p.closeness_threshold = 2;
  p.confidence_threshold = 0.7;
  p.rho = 1.6;
  p.closeness_cap = 30;
  Rng rng(606);
  std::vector<std::pair<double, double>> samples;
  for (int i = 0; i < 60; ++i) {
    const double base = rng.real(-10, 10);
    samples.emplace_back(base + rng.real(-2, 2), base + rng.real(-2, 2));
  }
  FusionRun run = run_fusion_pipeline(samples, p, 3);
  auto oracle = ts::fusion_oracle(samples, p);
  ASSERT_EQ(run.rows.size(), oracle.size());
  std::size_t failures = 0;
  for (std::size_t i = 0; i < oracle.size(); ++i) {
    ASSERT_NEAR(run.rows[i].gamma, oracle[i].gamma, 1e-9) << "window " << i;
    ASSERT_NEAR(run.rows[i].fused, oracle[i].fused, 1e-9) << "window " << i;
    ASSERT_EQ(fusion_flag_name(run.rows[i].flag), oracle[i].flag) << "window " << i;
    if (oracle[i].flag != "ok") ++failures;
  }
  ASSERT_GT(failures, 0u);
  ASSERT_NEAR(run.final_closeness_threshold, oracle.back().threshold_after, 1e-9);
}

TEST(Pipeline, TooFewRowsIsRejected) {
  FusionParams p;
  p.window = 8;
  try {
    run_fusion_pipeline({{1, 2}, {2, 3}, {3, 4}}, p, 1);
    FAIL() << "expected TooFewRows";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::too_few_rows);
  }
}
