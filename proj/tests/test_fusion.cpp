#include <gtest/gtest.h>

#include <limits>
#include <random>
#include <thread>

#include "psv/fusion.hpp"
#include "support.hpp"

using namespace psv;

namespace {

std::vector<PsogSample> psog_stream(const CalibModel& m, std::size_t n, double shift_mm = 0.0) {
  std::vector<PsogSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double eh = 8.0 * std::sin(0.01 * static_cast<double>(i)), ev = -5.0 * std::cos(0.007 * static_cast<double>(i));
    PsogSample s;
    s.t = static_cast<double>(i) / 1000.0;
    s.i_h = forward(m, eh, shift_mm, Axis::Horizontal);
    s.i_v = forward(m, ev, shift_mm, Axis::Vertical);
    out.push_back(s);
  }
  return out;
}

std::vector<ShiftEstimate> shift_stream(std::size_t n, double mm) {
  std::vector<ShiftEstimate> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    out[k].t = static_cast<double>(k) / 5.0;
    out[k].x_h = mm;
    out[k].x_v = -mm;
  }
  return out;
}

}  // namespace

TEST(MovingAverage, PrefixWarmUp) {
  const std::vector<double> x{1, 2, 3, 4};
  EXPECT_EQ(moving_average(x, 3), (std::vector<double>{1, 1.5, 2, 3}));
}

TEST(MovingAverage, ConstantAndIdentity) {
  const std::vector<double> c(20, 0.3);
  for (double v : moving_average(c, 3)) EXPECT_DOUBLE_EQ(v, 0.3);
  const std::vector<double> x{0.5, -2, 7, 1e-3};
  EXPECT_EQ(moving_average(x, 1), x);
  EXPECT_THROW(MovingAverage(0), InvalidArgument);
}

TEST(MovingAverage, MatchesBruteForceBitwise) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> d;
  for (std::size_t n : {1u, 2u, 3u, 7u}) {
    std::vector<double> x(500);
    for (double& v : x) v = d(rng);
    const auto got = moving_average(x, n);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::size_t m = std::min(n, i + 1);
      double sum = 0.0;
      for (std::size_t j = 0; j < m; ++j) sum += x[i - j];
      EXPECT_EQ(got[i], sum / static_cast<double>(m));
    }
  }
}

TEST(Zoh, FiveToThousandRepeatsTwoHundredTimes) {
  const std::vector<double> low{1, 2, 3, 4, 5};
  const auto high = zoh_upsample<double>(low, 5.0, 1000.0, 1000);
  ASSERT_EQ(high.size(), 1000u);
  for (std::size_t i = 0; i < high.size(); ++i) {
    EXPECT_EQ(high[i].value, low[i / 200]);
    EXPECT_FALSE(high[i].stale);
  }
}

TEST(Zoh, EqualRatesIsIdentity) {
  const std::vector<double> low{3, 1, 4, 1, 5};
  const auto high = zoh_upsample<double>(low, 100.0, 100.0, low.size());
  for (std::size_t i = 0; i < low.size(); ++i) EXPECT_EQ(high[i].value, low[i]);
}

TEST(Zoh, TrailingSamplesAreStale) {
  const std::vector<double> one{7};
  const auto high = zoh_upsample<double>(one, 5, 10);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(high[i].value, 7);
    EXPECT_EQ(high[i].stale, i >= 5);
  }
}

TEST(Zoh, RatesMustDivide) {
  const std::vector<double> low{1};
  EXPECT_THROW(zoh_upsample<double>(low, 3.0, 1000.0, 10), InvalidArgument);
  EXPECT_THROW(zoh_upsample<double>(std::span<const double>{}, 1, 3), InvalidArgument);
  StreamConfig bad;
  bad.ma_window = 0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(Correct, ZeroShiftEqualsTraditionalInversion) {
  const CalibModel m = test::known_model();
  const auto psog = psog_stream(m, 1000);
  const auto shifts = shift_stream(5, 0.0);
  const StreamConfig cfg;
  const auto out = correct(psog, shifts, m, cfg);
  const auto smooth_h = moving_average(std::vector<double>([&] {
    std::vector<double> v;
    for (const auto& s : psog) v.push_back(s.i_h);
    return v;
  }()), cfg.ma_window);
  ASSERT_EQ(out.size(), psog.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_EQ(out[i].t, psog[i].t);
    EXPECT_EQ(out[i].gaze_h, invert(m, smooth_h[i], 0.0, Axis::Horizontal).eye_deg);
    EXPECT_EQ(out[i].shift_applied.h, 0.0);
  }
}

TEST(Correct, InfiniteGateReproducesTraditional) {
  const CalibModel m = test::known_model();
  const auto psog = psog_stream(m, 600, 1.0);
  StreamConfig gated;
  gated.shift_gate_mm = std::numeric_limits<double>::infinity();
  const auto a = correct(psog, shift_stream(3, 1.0), m, gated);
  const auto b = correct(psog, shift_stream(3, 0.0), m, StreamConfig{});
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].gaze_h, b[i].gaze_h);
    EXPECT_EQ(a[i].gaze_v, b[i].gaze_v);
  }
}

TEST(Correct, GateZeroesSmallShiftsOnly) {
  const CalibModel m = test::known_model();
  const auto psog = psog_stream(m, 400);
  StreamConfig cfg;
  cfg.shift_gate_mm = 0.5;
  for (const auto& g : correct(psog, shift_stream(2, 0.4), m, cfg)) EXPECT_EQ(g.shift_applied.h, 0.0);
  const auto big = correct(psog, shift_stream(2, 1.0), m, cfg);
  EXPECT_EQ(big.back().shift_applied.h, 1.0);
  EXPECT_EQ(big.back().shift_applied.v, -1.0);
}

TEST(Correct, KnownShiftIsRemovedExactly) {
  const CalibModel m = test::known_model();
  const auto psog = psog_stream(m, 1000, 1.0);
  StreamConfig cfg;
  cfg.smooth_psog = false;
  auto shifts = shift_stream(5, 1.0);
  for (auto& s : shifts) s.x_v = 1.0;
  const auto out = correct(psog, shifts, m, cfg);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double eh = 8.0 * std::sin(0.01 * static_cast<double>(i));
    EXPECT_NEAR(out[i].gaze_h, eh, 1e-9);
  }
}

TEST(Correct, StaleFlagsPastTheLastEstimate) {
  const CalibModel m = test::known_model();
  const auto out = correct(psog_stream(m, 500), shift_stream(2, 0.0), m, StreamConfig{});
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i].flags.stale_shift, i >= 400) << i;
  ShiftEstimate stale;
  stale.stale = true;
  const auto held = correct(psog_stream(m, 10), std::vector<ShiftEstimate>{stale}, m, StreamConfig{});
  EXPECT_TRUE(held.front().flags.stale_shift);
}

TEST(Correct, ExtrapolationFlagPropagates) {
  CalibModel m = test::known_model();
  auto psog = psog_stream(m, 3);
  for (auto& s : psog) s.i_h = forward(m, 14, 0, Axis::Horizontal);
  const auto out = correct(psog, shift_stream(1, 0.0), m, StreamConfig{});
  EXPECT_TRUE(out.back().flags.extrapolated);
  EXPECT_EQ(out.back().gaze_h, 10.0);
}

TEST(Correct, StepShiftLatencyBound) {
  const CalibModel m = test::known_model();
  const auto psog = psog_stream(m, 2000);
  auto shifts = shift_stream(10, 0.0);
  // Step at t = 0.45 s; the first frame to see it is at 0.6 s.
  for (std::size_t k = 3; k < shifts.size(); ++k) shifts[k].x_h = 1.0;
  const StreamConfig cfg;
  const auto out = correct(psog, shifts, m, cfg);
  std::size_t first = out.size();
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i].shift_applied.h != 0.0) {
      first = i;
      break;
    }
  const double t_step = 0.45;
  ASSERT_LT(first, out.size());
  EXPECT_GE(out[first].t, t_step);
  EXPECT_LE(out[first].t, t_step + 1.0 / cfg.f_vog + static_cast<double>(cfg.ma_window - 1) / cfg.f_psog);
  EXPECT_EQ(out[first + cfg.ma_window - 1].shift_applied.h, 1.0);
}

TEST(Correct, Deterministic) {
  const CalibModel m = test::known_model();
  const auto psog = psog_stream(m, 800, 0.5);
  const auto shifts = shift_stream(4, 0.5);
  const auto a = correct(psog, shifts, m, StreamConfig{});
  const auto b = correct(psog, shifts, m, StreamConfig{});
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].gaze_h, b[i].gaze_h);
    EXPECT_EQ(a[i].gaze_v, b[i].gaze_v);
    EXPECT_EQ(a[i].flags.bits(), b[i].flags.bits());
  }
}

TEST(Engine, ThreadedQueuesMatchBatch) {
  const CalibModel m = test::known_model();
  const auto psog = psog_stream(m, 1500, 0.75);
  auto shifts = shift_stream(8, 0.75);
  shifts[4].x_h = -0.25;
  const auto batch = correct(psog, shifts, m, StreamConfig{});

  BoundedQueue<PsogSample> pq(16);
  BoundedQueue<ShiftEstimate> sq(2);
  std::thread pp([&] {
    for (const auto& s : psog) pq.push(s);
    pq.close();
  });
  std::thread sp([&] {
    for (const auto& s : shifts) sq.push(s);
    sq.close();
  });
  CorrectionEngine engine(m, StreamConfig{});
  std::vector<GazeSample> streamed;
  run_engine(engine, pq, sq, [&](const GazeSample& g) { streamed.push_back(g); });
  pp.join();
  sp.join();
  ASSERT_EQ(streamed.size(), batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    EXPECT_EQ(streamed[i].gaze_h, batch[i].gaze_h) << i;
    EXPECT_EQ(streamed[i].gaze_v, batch[i].gaze_v) << i;
  }
}
