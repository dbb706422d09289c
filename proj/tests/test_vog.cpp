#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "psv/vog.hpp"

using namespace psv;

namespace {

const SceneConfig kVog = SceneConfig::vog_default();
const VogThresholds kThr{};

const GainModel& gains() {
  static const GainModel g = estimate_gains(kVog, GainSweep{}, kThr);
  return g;
}

TrackedFeatures track(double th, double tv, SensorPose pose = {}, double t = 0.0) {
  return track_features(render_frame({th, tv}, pose, kVog), kThr, t);
}

/// Features displaced from the reference by explicit pixel offsets.
TrackedFeatures displaced(const TrackedFeatures& ref, Point2 d_pc, Point2 d_cr) {
  TrackedFeatures f = ref;
  f.pc_px = ref.pc_px + d_pc;
  for (auto& g : f.glints) g = g + d_cr;
  f.cr_px = f.glints[f.cr_rank];
  return f;
}

}  // namespace

TEST(PupilDetection, NeutralWithinOnePixelOfTruth) {
  const Frame f = render_frame({}, {}, kVog);
  const Detection d = detect_pupil_center(f, kThr.pupil);
  ASSERT_TRUE(d.valid);
  EXPECT_LT(distance(d.px, f.truth->pupil_center_px.px), 1.0);
}

TEST(PupilDetection, BrightFrameIsInvalid) {
  EXPECT_FALSE(detect_pupil_center(Frame(320, 240, 0.9), kThr.pupil).valid);
  Frame tiny(320, 240, 0.9);
  for (int x = 10; x < 14; ++x) tiny.at(x, 10) = 0.0;  // 4 px, under the minimum
  EXPECT_FALSE(detect_pupil_center(tiny, kThr.pupil).valid);
}

TEST(PupilDetection, GridRmsAgainstTruth) {
  double ss = 0.0;
  int n = 0;
  for (Axis axis : kAxes)
    for (double deg : {-10.0, -5.0, 0.0, 5.0, 10.0})
      for (double mm : {-2.0, 0.0, 2.0}) {
        EyeState eye;
        SensorPose pose;
        (axis == Axis::Horizontal ? eye.theta_h : eye.theta_v) = deg;
        (axis == Axis::Horizontal ? pose.dx : pose.dy) = mm;
        const Frame f = render_frame(eye, pose, kVog);
        const Detection d = detect_pupil_center(f, kThr.pupil);
        ASSERT_TRUE(d.valid);
        const double e = distance(d.px, f.truth->pupil_center_px.px);
        ss += e * e;
        ++n;
      }
  EXPECT_LE(std::sqrt(ss / n), 2.0);
}

TEST(GlintDetection, NearestGlintMatchesTruth) {
  const Frame f = render_frame({}, {}, kVog);
  const Detection pc = detect_pupil_center(f, kThr.pupil);
  const Detection cr = detect_corneal_reflection(f, kThr.glint, pc.px);
  ASSERT_TRUE(cr.valid);
  double best = 1e9;
  for (const auto& t : f.truth->cr_px)
    if (t) best = std::min(best, distance(cr.px, t->px));
  EXPECT_LT(best, 1.0);
  EXPECT_EQ(detect_glints(f, kThr.glint).size(), 2u);
}

TEST(GlintDetection, AbsentGlintsAreInvalid) {
  SceneConfig wide = kVog;
  wide.light_positions = {{-200, 0, 30}, {200, 0, 30}};
  const Frame f = render_frame({}, {}, wide);
  const TrackedFeatures t = track_features(f, kThr);
  EXPECT_TRUE(t.pc_valid);
  EXPECT_FALSE(t.cr_valid);
  EXPECT_FALSE(t.valid());
}

TEST(Gains, WithinRendererBands) {
  const GainModel& g = gains();
  for (Axis a : kAxes) {
    EXPECT_GT(g.g_e[a], 0.2);
    EXPECT_LT(g.g_e[a], 0.7);
    EXPECT_GT(g.g_s[a], 0.7);
    EXPECT_LT(g.g_s[a], 1.0);
    EXPECT_GT(g.px_per_mm[a], 0.0);
  }
}

TEST(Gains, RigidReflectionIsRejected) {
  GainModel g = gains();
  g.g_e.h = 1.0;
  g.g_s.h = 0.9;
  EXPECT_THROW(g.validate(), InvalidArgument);
  g = gains();
  g.g_s.v = g.g_e.v;
  EXPECT_THROW(g.validate(), InvalidArgument);
}

TEST(Gains, ShortSweepIsRejected) {
  GainSweep sweep;
  sweep.eye_deg = {-5, 5};
  EXPECT_THROW(estimate_gains(kVog, sweep, kThr), InvalidArgument);
}

TEST(ShiftEstimate, ReferenceFeaturesGiveZero) {
  const ShiftEstimate s = estimate_sensor_shift(gains().reference, gains());
  EXPECT_EQ(s.x_h, 0.0);
  EXPECT_EQ(s.x_v, 0.0);
  EXPECT_TRUE(s.reliable);
}

TEST(ShiftEstimate, PureEyeMotionGivesZero) {
  const GainModel& g = gains();
  const Point2 d_pc{12.0, -7.0};
  const TrackedFeatures f = displaced(g.reference, d_pc, {g.g_e.h * d_pc.x, g.g_e.v * d_pc.y});
  const ShiftEstimate s = estimate_sensor_shift(f, g);
  EXPECT_NEAR(s.x_h, 0.0, 1e-12);
  EXPECT_NEAR(s.x_v, 0.0, 1e-12);
}

TEST(ShiftEstimate, AlgebraicRecoveryOfMixedDisplacements) {
  const GainModel& g = gains();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> eye(-30, 30), shift(-2, 2);
  for (int i = 0; i < 200; ++i) {
    const double eh = eye(rng), ev = eye(rng), sh = shift(rng), sv = shift(rng);
    const Point2 d_pc{eh + sh * g.px_per_mm.h, ev + sv * g.px_per_mm.v};
    const Point2 d_cr{g.g_e.h * eh + g.g_s.h * sh * g.px_per_mm.h, g.g_e.v * ev + g.g_s.v * sv * g.px_per_mm.v};
    const ShiftEstimate s = estimate_sensor_shift(displaced(g.reference, d_pc, d_cr), g);
    EXPECT_NEAR(s.x_h, sh, 1e-9);
    EXPECT_NEAR(s.x_v, sv, 1e-9);
  }
}

TEST(ShiftEstimate, EitherGlintRecoversTheShift) {
  const GainModel& g = gains();
  for (double th : {-8.0, 0.0, 6.0}) {
    TrackedFeatures f = track(th, 3, {1.0, -0.5});
    ASSERT_EQ(f.glints.size(), g.reference.glints.size());
    std::vector<ShiftEstimate> est;
    for (std::size_t k = 0; k < f.glints.size(); ++k) {
      f.cr_rank = k;
      f.cr_px = f.glints[k];
      est.push_back(estimate_sensor_shift(f, g));
    }
    for (const ShiftEstimate& e : est) {
      EXPECT_NEAR(e.x_h, 1.0, 0.15) << th;
      EXPECT_NEAR(e.x_v, -0.5, 0.15) << th;
    }
  }
}

TEST(ShiftEstimate, RenderedShiftIsRecovered) {
  for (double mm : {-1.75, -0.75, 0.75, 1.75}) {
    const ShiftEstimate h = estimate_sensor_shift(track(0, 0, {mm, 0}), gains());
    const ShiftEstimate v = estimate_sensor_shift(track(0, 0, {0, mm}), gains());
    EXPECT_NEAR(h.x_h, mm, 0.3);
    EXPECT_NEAR(h.x_v, 0.0, 0.3);
    EXPECT_NEAR(v.x_v, mm, 0.3);
    EXPECT_NEAR(v.x_h, 0.0, 0.3);
  }
}

TEST(ShiftEstimate, InvalidFeaturesThrowAndEstimatorCarriesForward) {
  TrackedFeatures bad;
  EXPECT_THROW(estimate_sensor_shift(bad, gains()), InvalidArgument);
  ShiftEstimator est(gains());
  const ShiftEstimate first = est.update(track(0, 0, {1.0, 0}, 0.2));
  EXPECT_FALSE(first.stale);
  bad.t = 0.4;
  const ShiftEstimate carried = est.update(bad);
  EXPECT_TRUE(carried.stale);
  EXPECT_EQ(carried.x_h, first.x_h);
  EXPECT_EQ(carried.x_v, first.x_v);
  EXPECT_EQ(carried.t, 0.4);
}

TEST(ShiftEstimate, LargeEstimatesAreFlaggedUnreliable) {
  const GainModel& g = gains();
  const double mm = 6.0;
  const Point2 d{mm * g.px_per_mm.h, 0};
  const TrackedFeatures f = displaced(g.reference, d, {g.g_s.h * d.x, 0});
  const ShiftEstimate s = estimate_sensor_shift(f, g, 5.0);
  EXPECT_NEAR(s.x_h, mm, 1e-9);
  EXPECT_FALSE(s.reliable);
}

TEST(Blobs, FourConnectivity) {
  Frame f(8, 8, 1.0);
  f.at(2, 2) = 0.0;
  f.at(3, 3) = 0.0;  // diagonal neighbour: separate component
  const auto blobs = find_blobs(f, [](double v) { return v < 0.5 ? 0.5 - v : 0.0; });
  EXPECT_EQ(blobs.size(), 2u);
}
