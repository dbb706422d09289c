#include <gtest/gtest.h>

#include <memory>
#include <sstream>

#include "psv/eval.hpp"

using namespace psv;

namespace {

/// Coarse axis-line scan, enough for pipeline properties.
const TablePsog& coarse_source() {
  static const TablePsog source = [] {
    ScanSpec spec;
    spec.eye_step = 2.5;
    spec.separable_eye = true;
    spec.full_shift_grid = false;
    auto table = std::make_shared<ScanTable>(spec);
    fill_scan(*table, SceneConfig{}, PhotosensorLayout{});
    return TablePsog(table);
  }();
  return source;
}

const Calibrated& calibrated() {
  static const Calibrated c = calibrate(PipelineConfig{}, coarse_source());
  return c;
}

Scenario constant_scenario(std::size_t n, EyeState e = {}) {
  Scenario sc;
  sc.eye_track.assign(n, e);
  sc.phase.assign(n, Phase::Rest);
  return sc;
}

std::size_t count_phase(const Segmentation& s, Phase p) {
  std::size_t n = 0;
  for (const auto& seg : s.segments) n += seg.phase == p;
  return n;
}

}  // namespace

TEST(HvScenario, DefaultLayout) {
  const Scenario sc = gen_hv_scenario();
  EXPECT_DOUBLE_EQ(sc.duration(), 36.0);
  EXPECT_EQ(sc.size(), 36000u);
  const Segmentation seg = segment_fixations(sc);
  EXPECT_EQ(count_phase(seg, Phase::Horizontal), 16u);
  EXPECT_EQ(count_phase(seg, Phase::Vertical), 16u);
  EXPECT_EQ(seg.dropped, 0u);
  // H phase: +2.5, -2.5, +2.5, -2.5, +5, ...
  EXPECT_EQ(sc.eye_at(1.5).theta_h, 2.5);
  EXPECT_EQ(sc.eye_at(2.5).theta_h, -2.5);
  EXPECT_EQ(sc.eye_at(13.5).theta_h, 10.0);
  EXPECT_EQ(sc.eye_at(13.5).theta_v, 0.0);
  EXPECT_EQ(sc.eye_at(18.5).theta_v, 2.5);
  EXPECT_EQ(sc.eye_at(35.5).theta_v, 0.0);
  for (const auto& e : sc.eye_track) {
    EXPECT_LE(std::abs(e.theta_h), 10.0);
    EXPECT_TRUE(e.theta_h == 0.0 || e.theta_v == 0.0);
  }
}

TEST(HvScenario, ZeroAmplitudeIsOneFixation) {
  HvSpec spec;
  spec.amplitudes = {0.0};
  const Scenario sc = gen_hv_scenario(spec);
  const Segmentation seg = segment_fixations(sc);
  ASSERT_EQ(seg.segments.size(), 1u);
  EXPECT_EQ(seg.segments[0].start_idx, 100u);
  EXPECT_EQ(seg.segments[0].end_idx, sc.size() - 100);
}

TEST(HvScenario, CountsFollowDwellAndAmplitudes) {
  HvSpec spec;
  spec.amplitudes = {5.0};
  spec.dwell = 2.0;
  const Segmentation seg = segment_fixations(gen_hv_scenario(spec));
  EXPECT_EQ(count_phase(seg, Phase::Horizontal), 4u);
  EXPECT_EQ(count_phase(seg, Phase::Vertical), 4u);
  spec.amplitudes = {12.0};
  EXPECT_THROW(gen_hv_scenario(spec), InvalidArgument);
}

TEST(HvScenario, SaccadesKeepPlateauCounts) {
  HvSpec spec;
  spec.saccades = true;
  const Scenario sc = gen_hv_scenario(spec);
  EXPECT_EQ(sc.size(), 36000u);
  const Segmentation seg = segment_fixations(sc);
  EXPECT_EQ(count_phase(seg, Phase::Horizontal), 16u);
  EXPECT_EQ(count_phase(seg, Phase::Vertical), 16u);
  EXPECT_NEAR(minimum_jerk(0.5), 0.5, 1e-15);
  EXPECT_EQ(minimum_jerk(1.0), 1.0);
}

TEST(HvScenario, ShiftEventsTrackAmplitudeRank) {
  const HvSpec spec;
  const ShiftEvent big = hv_shift_event(spec, Axis::Horizontal, Axis::Horizontal, -1.75);
  EXPECT_EQ(big.start, spec.block_start(Axis::Horizontal, 3));
  EXPECT_EQ(big.duration, 4.0);
  EXPECT_EQ(big.pose.dx, -1.75);
  EXPECT_EQ(hv_shift_event(spec, Axis::Vertical, Axis::Vertical, 0.25).start, spec.block_start(Axis::Vertical, 0));
  const ShiftEvent mid = hv_shift_event(spec, Axis::Vertical, Axis::Horizontal, 1.0);
  EXPECT_EQ(mid.start, spec.block_start(Axis::Vertical, 2));
  EXPECT_EQ(mid.pose.dy, 0.0);
  Scenario sc = gen_hv_scenario(spec);
  sc.shift_events = {big};
  EXPECT_EQ(sc.pose_at(big.start).dx, -1.75);
  EXPECT_EQ(sc.pose_at(big.start + 4.0).dx, 0.0);
  sc.shift_events[0].pose.dx = -2.0;
  EXPECT_THROW(sc.validate(), InvalidArgument);
}

TEST(ReadingScenario, DeterministicAndBounded) {
  ReadingSpec spec;
  const Scenario a = gen_reading_scenario(spec), b = gen_reading_scenario(spec);
  EXPECT_DOUBLE_EQ(a.duration(), 10.0);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.eye_track[i].theta_h, b.eye_track[i].theta_h);
    EXPECT_EQ(a.eye_track[i].theta_v, b.eye_track[i].theta_v);
    EXPECT_LE(std::abs(a.eye_track[i].theta_h), 10.0);
    EXPECT_LE(std::abs(a.eye_track[i].theta_v), 5.0);
  }
  spec.seed = 2;
  const Scenario c = gen_reading_scenario(spec);
  EXPECT_NE(c.eye_track[5000].theta_h, a.eye_track[5000].theta_h);
  const Segmentation seg = segment_fixations(a);
  EXPECT_GT(seg.segments.size(), 25u);
}

TEST(ReadingScenario, StrongestWindowEvent) {
  const Scenario sc = gen_reading_scenario({});
  const ShiftEvent ev = strongest_window_event(sc, Axis::Horizontal, 1.75);
  EXPECT_EQ(ev.duration, 2.5);
  EXPECT_EQ(ev.pose.dx, 1.75);
  EXPECT_LE(ev.start + ev.duration, sc.duration() + 1e-12);
  EXPECT_NEAR(ev.start * 10, std::round(ev.start * 10), 1e-9);
  EXPECT_THROW(strongest_window_event(sc, Axis::Vertical, 1, 11.0), InvalidArgument);
}

TEST(GazeCsv, LoadsTrackAndPoseRuns) {
  std::istringstream in(
      "t,theta_h,theta_v,dx,dy\n"
      "0,1,2,0,0\n0.001,1,2,0.5,0\n0.002,1,2,0.5,0\n0.003,3,-1,0,0\n");
  const Scenario sc = load_gaze_csv(in, 1000.0);
  ASSERT_EQ(sc.size(), 4u);
  EXPECT_EQ(sc.eye_track[3].theta_h, 3);
  ASSERT_EQ(sc.shift_events.size(), 1u);
  EXPECT_DOUBLE_EQ(sc.shift_events[0].start, 0.001);
  EXPECT_DOUBLE_EQ(sc.shift_events[0].duration, 0.002);
  EXPECT_EQ(sc.shift_events[0].pose.dx, 0.5);
  std::istringstream gap("0,1,2\n0.005,1,2\n");
  EXPECT_THROW(load_gaze_csv(gap, 1000.0), Error);
  std::istringstream junk("0,1,x\n");
  EXPECT_THROW(load_gaze_csv(junk, 1000.0), Error);
}

TEST(Segmentation, ConstantTrackAndTrim) {
  const Scenario sc = constant_scenario(1000);
  const Segmentation seg = segment_fixations(sc, 0.1);
  ASSERT_EQ(seg.segments.size(), 1u);
  EXPECT_EQ(seg.segments[0].start_idx, 100u);
  EXPECT_EQ(seg.segments[0].end_idx, 900u);
  EXPECT_EQ(segment_fixations(constant_scenario(200), 0.1).dropped, 1u);
}

TEST(Segmentation, ZeroTrimSegmentsAbut) {
  const Segmentation seg = segment_fixations(gen_hv_scenario(), 0.0);
  for (std::size_t k = 1; k < seg.segments.size(); ++k)
    EXPECT_EQ(seg.segments[k].start_idx, seg.segments[k - 1].end_idx);
  EXPECT_EQ(seg.segments.front().start_idx, 0u);
  EXPECT_EQ(seg.segments.back().end_idx, 36000u);
}

TEST(Metrics, AccuracyExamples) {
  const std::vector<double> truth{1, 2, 3, 4, 5, 6};
  std::vector<double> out = truth;
  const std::vector<FixationSegment> segs{{0, 3}, {3, 6}, {6, 6}};
  EXPECT_EQ(accuracy(out, truth, segs), (std::vector<double>{0, 0}));
  for (double& v : out) v += 0.5;
  EXPECT_EQ(accuracy(out, truth, segs), (std::vector<double>{0.5, 0.5}));
  out[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_EQ(accuracy(out, truth, segs)[0], 0.5);
  EXPECT_THROW(accuracy(std::vector<double>{1}, truth, segs), InvalidArgument);
}

TEST(Metrics, CrosstalkExamples) {
  const std::vector<double> on(10, 10.0), off(10, 0.0);
  std::vector<double> out = off;
  const FixationSegment seg{0, 10};
  EXPECT_EQ(*fixation_crosstalk(out, off, on, seg), 0.0);
  for (double& v : out) v = 0.1;
  EXPECT_NEAR(*fixation_crosstalk(out, off, on, seg), 1.0, 1e-12);
  const std::vector<double> tiny(10, 0.2);
  EXPECT_FALSE(fixation_crosstalk(out, off, tiny, seg).has_value());
}

TEST(Metrics, SummaryUsesSampleSd) {
  const std::vector<double> v{1, 2, 3, 4};
  const Summary s = summarize(v);
  EXPECT_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.sd, std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_EQ(summarize(std::vector<double>{7}).sd, 0.0);
  EXPECT_EQ(summarize(std::vector<double>{}).n, 0u);
}

TEST(Metrics, PerfectOutputGivesZeroErrors) {
  const Scenario sc = gen_hv_scenario();
  std::vector<GazeSample> out(sc.size());
  for (std::size_t i = 0; i < sc.size(); ++i) {
    out[i].gaze_h = sc.eye_track[i].theta_h;
    out[i].gaze_v = sc.eye_track[i].theta_v;
  }
  const MetricsReport rep = compute_metrics(sc, out, {});
  EXPECT_EQ(rep.acc_h.mean, 0.0);
  EXPECT_EQ(rep.cross_hv.mean, 0.0);
  EXPECT_EQ(rep.cross_hv.n, 16u);
  EXPECT_EQ(rep.cross_vh.n, 16u);
  EXPECT_THROW(compute_metrics(sc, std::vector<GazeSample>(3), {}), InvalidArgument);
}

TEST(Pipeline, CalibrationOnScanTableIsMonotoneAndGainsValid) {
  const Calibrated& c = calibrated();
  for (Axis a : kAxes) {
    EXPECT_TRUE(is_monotone(c.model[a]));
    EXPECT_LT(c.diagnostics.model_rms[a], 1e-9);
  }
  EXPECT_NO_THROW(c.gains.validate());
}

TEST(Pipeline, PairedRunsShareStreamsAndAggregatesRecompute) {
  HvSpec hv;
  hv.amplitudes = {5.0, 10.0};
  Scenario sc = gen_hv_scenario(hv);
  sc.shift_events = {hv_shift_event(hv, Axis::Horizontal, Axis::Horizontal, 1.0)};
  const PipelineConfig cfg;
  const PairedResult p = run_paired(sc, cfg, coarse_source(), calibrated().model, calibrated().gains);
  // Same streams: same shift-error list, different gaze only where shifts apply.
  ASSERT_EQ(p.traditional.report.shift_errors.size(), p.corrected.report.shift_errors.size());
  for (std::size_t k = 0; k < p.corrected.report.shift_errors.size(); ++k)
    EXPECT_EQ(p.traditional.report.shift_errors[k].estimate.x_h, p.corrected.report.shift_errors[k].estimate.x_h);
  const ExperimentResult again = evaluate(sc, p.streams, calibrated().model, cfg, Mode::Corrected);
  for (std::size_t i = 0; i < sc.size(); i += 97) EXPECT_EQ(again.output[i].gaze_h, p.corrected.output[i].gaze_h);
  for (std::size_t i = 0; i < sc.size(); ++i) EXPECT_EQ(p.traditional.output[i].shift_applied.h, 0.0);

  for (const auto* r : {&p.traditional.report, &p.corrected.report}) {
    std::vector<double> h, v;
    for (const auto& f : r->fixations) {
      h.push_back(f.acc_h);
      v.push_back(f.acc_v);
    }
    const Summary sh = summarize(h), sv = summarize(v);
    EXPECT_EQ(sh.mean, r->acc_h.mean);
    EXPECT_EQ(sh.sd, r->acc_h.sd);
    EXPECT_EQ(sv.mean, r->acc_v.mean);
  }
  EXPECT_LT(p.corrected.report.accuracy_during_shift(Axis::Horizontal).mean,
            p.traditional.report.accuracy_during_shift(Axis::Horizontal).mean);
}

TEST(Pipeline, ShiftErrorIsAntisymmetricUnderMirror) {
  HvSpec hv;
  hv.amplitudes = {10.0};
  const PipelineConfig cfg;
  const Scenario base = gen_hv_scenario(hv);
  for (double d : {0.75, 1.75}) {
    Summary signed_err[2];
    for (int k = 0; k < 2; ++k) {
      Scenario sc = base;
      const double mm = k == 0 ? d : -d;
      sc.shift_events = {hv_shift_event(hv, Axis::Horizontal, Axis::Horizontal, mm)};
      const Streams st = simulate_streams(sc, cfg, coarse_source(), calibrated().gains);
      std::vector<double> e;
      for (std::size_t f = 0; f < st.shifts.size(); ++f)
        if (st.vog_truth[f].dx != 0.0) e.push_back(st.shifts[f].x_h - st.vog_truth[f].dx);
      signed_err[k] = summarize(e);
    }
    const double sd = std::max(signed_err[0].sd, signed_err[1].sd);
    EXPECT_LE(std::abs(signed_err[0].mean + signed_err[1].mean), std::max(2.0 * sd, 1e-6)) << d;
  }
}

TEST(Output, CsvHeadersAndRows) {
  const Scenario sc = constant_scenario(400, {2, 0});
  std::vector<GazeSample> out(sc.size());
  for (auto& g : out) g.gaze_h = 2.25;
  const MetricsReport rep = compute_metrics(sc, out, {});
  std::ostringstream fix, sum, truth;
  write_fixations_csv(fix, sc, rep);
  write_summary(sum, rep, "corrected");
  write_truth_csv(truth, sc);
  EXPECT_EQ(fix.str().substr(0, fix.str().find('\n')), kFixationCsvHeader);
  EXPECT_NE(fix.str().find("rest,0.1,0.3,2,0,0.25,0,,0"), std::string::npos) << fix.str();
  EXPECT_NE(sum.str().find("[corrected]\naccuracy_h_deg_mean = 0.25"), std::string::npos) << sum.str();
  const std::string t = truth.str();
  EXPECT_EQ(std::count(t.begin(), t.end(), '\n'), 401);
}
