// psv: render frames, scan PSOG outputs, calibrate, and run experiments.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "psv/calib.hpp"
#include "psv/config.hpp"
#include "psv/eval.hpp"
#include "psv/scan.hpp"

namespace fs = std::filesystem;
using namespace psv;

namespace {

constexpr int kExitThresholds = 1;
constexpr int kExitError = 2;

struct Common {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> jobs;
};

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
  if (!c.out_dir.empty()) cfg.out_dir = c.out_dir;
  if (c.seed) cfg.seed = *c.seed;
  if (c.jobs) cfg.jobs = *c.jobs;
  cfg.scenario.reading.seed = cfg.seed;
  cfg.scenario.hv.pupil_radius = cfg.pipeline.pupil_radius;
  cfg.scenario.reading.pupil_radius = cfg.pipeline.pupil_radius;
  cfg.scan.pupil_radius = cfg.pipeline.pupil_radius;
  cfg.validate();
  return cfg;
}

fs::path out_path(const RunConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.out_dir);
  return fs::path(cfg.out_dir) / name;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw Error("cannot open " + p.string() + " for writing");
  return out;
}

std::string stamp(const RunConfig& cfg, const char* schema) {
  return std::string("# ") + schema + " config=" + config_hash(cfg);
}

/// Key of everything a scan depends on; a scan file is only resumed when it
/// matches.
std::string scan_key(const RunConfig& cfg) {
  RunConfig k;
  k.pipeline.psog_scene = cfg.pipeline.psog_scene;
  k.pipeline.layout = cfg.pipeline.layout;
  k.pipeline.pupil_radius = cfg.pipeline.pupil_radius;
  k.scan = cfg.scan;
  return config_hash(k);
}

fs::path scan_file(const RunConfig& cfg) { return fs::path(cfg.out_dir) / "scan.csv"; }

std::shared_ptr<ScanTable> load_scan(const RunConfig& cfg) {
  const fs::path p = scan_file(cfg);
  std::ifstream in(p);
  if (!in) throw Error("scan table " + p.string() + " not found; run `psv scan` first or pass --exact");
  std::string first;
  std::getline(in, first);
  if (first.find("scan=" + scan_key(cfg)) == std::string::npos)
    throw Error("scan table " + p.string() + " was produced with different scene/scan settings; rerun `psv scan`");
  auto table = std::make_shared<ScanTable>(cfg.scan);
  read_scan_rows(in, *table);
  return table;
}

std::unique_ptr<PsogSource> make_source(const RunConfig& cfg, bool exact) {
  if (exact) return std::make_unique<RenderedPsog>(cfg.pipeline.psog_scene, cfg.pipeline.layout);
  return std::make_unique<TablePsog>(load_scan(cfg));
}

// ------------------------------------------------------------------ render

struct RenderArgs {
  double theta_h = 0, theta_v = 0, dx = 0, dy = 0;
  std::string camera = "psog";
  std::string name = "frame";
};

int cmd_render(const Common& common, const RenderArgs& a) {
  const RunConfig cfg = resolve(common);
  const EyeState eye{a.theta_h, a.theta_v, cfg.pipeline.pupil_radius};
  const SensorPose pose{a.dx, a.dy};
  const SceneConfig& scene = a.camera == "vog" ? cfg.pipeline.vog_scene : cfg.pipeline.psog_scene;
  const Frame frame = render_frame(eye, pose, scene);
  const fs::path pgm = out_path(cfg, a.name + ".pgm");
  write_pgm(frame, pgm.string(), "psv-frame v1 config=" + config_hash(cfg));
  std::ofstream truth = open_out(out_path(cfg, a.name + ".truth.txt"));
  truth << stamp(cfg, "psv-truth v1") << '\n' << std::setprecision(17);
  truth << "theta_h_deg = " << eye.theta_h << "\ntheta_v_deg = " << eye.theta_v << '\n';
  truth << "dx_mm = " << pose.dx << "\ndy_mm = " << pose.dy << '\n';
  const auto& t = *frame.truth;
  truth << "pupil_center_px = " << t.pupil_center_px.px.x << ',' << t.pupil_center_px.px.y << '\n';
  for (std::size_t k = 0; k < t.cr_px.size(); ++k) {
    truth << "cr" << k + 1 << "_px = ";
    if (t.cr_px[k])
      truth << t.cr_px[k]->px.x << ',' << t.cr_px[k]->px.y << (t.cr_px[k]->in_frame ? "" : " (off-frame)");
    else
      truth << "none";
    truth << '\n';
  }
  if (!truth) throw Error("write failed for truth sidecar");
  std::cout << "wrote " << pgm.string() << " (" << frame.width << "x" << frame.height << ")\n";
  return 0;
}

// -------------------------------------------------------------------- scan

int cmd_scan(const Common& common, bool restart) {
  const RunConfig cfg = resolve(common);
  fs::create_directories(cfg.out_dir);
  const fs::path p = scan_file(cfg);
  const std::string header = stamp(cfg, "psv-scan v1") + " scan=" + scan_key(cfg);
  ScanTable table(cfg.scan);

  // Resume: keep every well-formed row of a matching file, drop a torn tail.
  std::vector<std::string> kept;
  if (!restart && fs::exists(p)) {
    std::ifstream in(p);
    std::string first, line;
    std::getline(in, first);
    if (first.find("scan=" + scan_key(cfg)) == std::string::npos)
      throw Error(p.string() + " holds a scan with different settings; pass --restart to overwrite it");
    while (std::getline(in, line)) {
      ScanRow row;
      try {
        if (!parse_scan_row(line, row)) continue;
        table.set(row);
      } catch (const Error&) {
        break;
      }
      kept.push_back(line);
    }
  }
  {
    std::ofstream out = open_out(p);
    out << header << '\n' << kScanCsvHeader << '\n';
    for (const auto& l : kept) out << l << '\n';
  }
  std::ofstream out(p, std::ios::app);
  const std::size_t total = table.nodes().size();
  std::size_t done = kept.size();
  if (done) std::cerr << "resuming scan at row " << done << " of " << total << '\n';
  constexpr std::size_t kChunk = 256;
  for (;;) {
    const std::size_t n = fill_scan(table, cfg.pipeline.psog_scene, cfg.pipeline.layout, cfg.jobs,
                                    [&](const ScanRow& r) { write_scan_row(out, r); }, kChunk);
    if (n == 0) break;
    out.flush();
    if (!out) throw Error("write failed for " + p.string());
    done += n;
    std::cerr << "scanned " << done << " / " << total << '\n';
  }
  std::cout << "wrote " << p.string() << " (" << total << " rows)\n";
  return 0;
}

// --------------------------------------------------------------- calibrate

int cmd_calibrate(const Common& common, const std::string& mode, bool exact) {
  const RunConfig cfg = resolve(common);
  const auto source = make_source(cfg, exact);
  Calibrated cal = calibrate(cfg.pipeline, *source);
  CalibModel model = cal.model;
  if (mode == "auto") {
    const auto clusters = estimate_sensor_clusters(cfg.pipeline, cal.gains);
    const AutoCalibration au = fit_auto(cal.grid, clusters.mean, &cal.model);
    model = au.model;
    std::ofstream est = open_out(out_path(cfg, "sensor_estimates.csv"));
    est << stamp(cfg, "psv-sensor-estimates v1") << '\n' << "axis,eye_deg,true_mm,estimated_mm\n";
    for (const auto& f : clusters.frames)
      est << axis_name(f.axis) << ',' << f.eye_deg << ',' << f.true_mm << ',' << f.estimated_mm << '\n';
    for (Axis axis : kAxes) {
      std::cout << axis_name(axis) << " sensor positions (true -> estimated):";
      for (std::size_t i = 0; i < clusters.mean[axis].size(); ++i)
        std::cout << ' ' << cfg.pipeline.calib_grid.sensor_mm[i] << "->" << clusters.mean[axis][i];
      std::cout << '\n';
    }
  } else if (mode != "ground_truth") {
    throw InvalidArgument("calibration mode must be ground_truth or auto");
  }
  const FitDiagnostics diag = diagnose(model, cal.grid);
  for (Axis axis : kAxes)
    std::cout << axis_name(axis) << " residual rms: stage1 " << cal.diagnostics.stage1_rms[axis] << ", stage2 "
              << cal.diagnostics.stage2_rms[axis] << ", model " << diag.model_rms[axis] << '\n';
  const fs::path p = out_path(cfg, "model.txt");
  std::ostringstream text;
  save_model(model, text);
  std::ofstream out = open_out(p);
  out << text.str() << stamp(cfg, "calibrated") << " mode=" << mode << '\n';
  if (!out) throw Error("write failed for " + p.string());
  std::cout << "wrote " << p.string() << '\n';
  return 0;
}

// --------------------------------------------------------------------- run

struct RunArgs {
  std::string mode = "both";
  std::string scenario;
  bool shift_grid = false;
  std::optional<double> shift_mm;
  std::string shift_axis = "h";
  std::string model_path;
};

Scenario build_scenario(const RunConfig& cfg) {
  const auto& s = cfg.scenario;
  if (s.kind == "hv") return gen_hv_scenario(s.hv);
  if (s.kind == "tx") return gen_reading_scenario(s.reading);
  std::ifstream in(s.csv_path);
  if (!in) throw Error("cannot open gaze CSV " + s.csv_path);
  return load_gaze_csv(in, s.csv_rate, "csv", cfg.pipeline.pupil_radius);
}

struct Checks {
  bool ok = true;
  void operator()(bool pass, const std::string& what) {
    std::cout << (pass ? "PASS " : "FAIL ") << what << '\n';
    ok = ok && pass;
  }
};

std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(4) << v;
  return s.str();
}

void write_streams(const RunConfig& cfg, const Scenario& sc, const Streams& st) {
  std::ofstream truth = open_out(out_path(cfg, "truth.csv"));
  truth << stamp(cfg, "psv-truth v1") << '\n';
  write_truth_csv(truth, sc);
  std::ofstream psog = open_out(out_path(cfg, "psog.csv"));
  psog << stamp(cfg, "psv-psog v1") << '\n' << kPsogCsvHeader << '\n';
  for (const auto& s : st.psog) write_csv_row(psog, s);
  std::ofstream vog = open_out(out_path(cfg, "vog.csv"));
  vog << stamp(cfg, "psv-vog v1") << '\n' << kVogCsvHeader << '\n';
  for (std::size_t k = 0; k < st.features.size(); ++k) write_csv_row(vog, st.features[k], st.shifts[k]);
}

void write_result(const RunConfig& cfg, const Scenario& sc, const ExperimentResult& r, std::ostream& report) {
  const std::string m = mode_name(r.mode);
  std::ofstream gaze = open_out(out_path(cfg, "gaze_" + m + ".csv"));
  gaze << stamp(cfg, "psv-gaze v1") << '\n' << kGazeCsvHeader << '\n';
  for (const auto& g : r.output) write_csv_row(gaze, g);
  std::ofstream fix = open_out(out_path(cfg, "fixations_" + m + ".csv"));
  fix << stamp(cfg, "psv-fixations v1") << '\n';
  write_fixations_csv(fix, sc, r.report);
  write_summary(report, r.report, m);
}

int cmd_run(const Common& common, const RunArgs& a, bool exact) {
  RunConfig cfg = resolve(common);
  if (!a.scenario.empty()) {
    cfg.scenario.kind = a.scenario;
    cfg.validate();
  }
  if (a.mode != "traditional" && a.mode != "corrected" && a.mode != "both")
    throw InvalidArgument("--mode must be traditional, corrected or both");
  const bool want_trad = a.mode != "corrected", want_corr = a.mode != "traditional";
  const fs::path model_path = a.model_path.empty() ? fs::path(cfg.out_dir) / "model.txt" : fs::path(a.model_path);
  if (!fs::exists(model_path))
    throw Error("calibration model " + model_path.string() + " not found; run `psv calibrate` first");
  Calibrated cal;
  cal.model = load_model(model_path.string());
  const auto source = make_source(cfg, exact);
  GainSweep sweep = cfg.pipeline.gain_sweep;
  sweep.pupil_radius = cfg.pipeline.pupil_radius;
  cal.gains = estimate_gains(cfg.pipeline.vog_scene, sweep, cfg.pipeline.thresholds);
  const auto& th = cfg.thresholds;
  Checks check;

  if (a.shift_grid) {
    if (cfg.scenario.kind != "hv") throw InvalidArgument("--shift-grid runs on the hv scenario");
    const auto pts = run_shift_grid(cfg.scenario.hv, cfg.shifts.grid, cfg.pipeline, *source, cal,
                                    cfg.shifts.orthogonal, cfg.shifts.max_mm, cfg.shifts.hv_event_s, cfg.jobs);
    std::ofstream out = open_out(out_path(cfg, "shift_grid.csv"));
    out << stamp(cfg, "psv-shift-grid v1") << '\n';
    write_shift_grid_csv(out, pts);
    for (const auto& p : pts) {
      if (p.eye_axis != p.shift_axis) continue;
      const Axis ax = p.shift_axis;
      const std::string tag = std::string(axis_name(ax)) + " shift " + num(p.shift_mm) + " mm";
      if (want_corr)
        check(p.corrected[ax].mean <= th.shifted_corrected_max_deg,
              tag + ": corrected " + num(p.corrected[ax].mean) + " deg <= " + num(th.shifted_corrected_max_deg));
      if (want_trad && std::abs(p.shift_mm) >= th.traditional_floor_mm)
        check(p.traditional[ax].mean >= th.shifted_traditional_min_deg,
              tag + ": traditional " + num(p.traditional[ax].mean) + " deg >= " +
                  num(th.shifted_traditional_min_deg));
      if (want_trad && want_corr && std::abs(p.shift_mm) >= th.shifted_min_mm)
        check(p.corrected[ax].mean < p.traditional[ax].mean, tag + ": corrected below traditional");
    }
    std::cout << "wrote " << out_path(cfg, "shift_grid.csv").string() << '\n';
    return check.ok ? 0 : kExitThresholds;
  }

  Scenario sc = build_scenario(cfg);
  std::optional<Axis> shift_axis;
  if (a.shift_mm) {
    shift_axis = a.shift_axis == "v" ? Axis::Vertical : Axis::Horizontal;
    if (a.shift_axis != "h" && a.shift_axis != "v") throw InvalidArgument("--shift-axis must be h or v");
    sc.shift_events.push_back(cfg.scenario.kind == "hv"
                                  ? hv_shift_event(cfg.scenario.hv, *shift_axis, *shift_axis, *a.shift_mm,
                                                   cfg.shifts.max_mm, cfg.shifts.hv_event_s)
                                  : strongest_window_event(sc, *shift_axis, *a.shift_mm, cfg.shifts.tx_event_s));
  }
  const PairedResult p = run_paired(sc, cfg.pipeline, *source, cal.model, cal.gains);
  write_streams(cfg, sc, p.streams);
  std::ofstream report = open_out(out_path(cfg, "report.txt"));
  report << stamp(cfg, "psv-report v1") << "\nscenario = " << sc.label << "\n\n";
  std::vector<const ExperimentResult*> results;
  if (want_trad) results.push_back(&p.traditional);
  if (want_corr) results.push_back(&p.corrected);
  for (const auto* r : results) {
    write_result(cfg, sc, *r, report);
    const auto& rep = r->report;
    std::cout << mode_name(r->mode) << ": accuracy H " << num(rep.acc_h.mean) << " (SD " << num(rep.acc_h.sd)
              << "), V " << num(rep.acc_v.mean) << " (SD " << num(rep.acc_v.sd) << ") deg";
    if (cfg.scenario.kind == "hv")
      std::cout << "; crosstalk HV " << num(rep.cross_hv.mean) << "%, VH " << num(rep.cross_vh.mean) << '%';
    std::cout << '\n';
  }
  const auto& corr = p.corrected.report;
  const auto& trad = p.traditional.report;
  if (sc.shift_events.empty()) {
    for (const auto* r : results) {
      const auto& rep = r->report;
      const std::string m = mode_name(r->mode);
      check(rep.acc_h.mean <= th.baseline_accuracy_deg,
            m + " accuracy H " + num(rep.acc_h.mean) + " <= " + num(th.baseline_accuracy_deg));
      check(rep.acc_v.mean <= th.baseline_accuracy_deg,
            m + " accuracy V " + num(rep.acc_v.mean) + " <= " + num(th.baseline_accuracy_deg));
      if (cfg.scenario.kind == "hv") {
        check(rep.cross_hv.mean <= th.baseline_crosstalk_pct,
              m + " crosstalk HV " + num(rep.cross_hv.mean) + " <= " + num(th.baseline_crosstalk_pct));
        check(rep.cross_vh.mean <= th.baseline_crosstalk_pct,
              m + " crosstalk VH " + num(rep.cross_vh.mean) + " <= " + num(th.baseline_crosstalk_pct));
      }
    }
  } else if (shift_axis) {
    const Axis ax = *shift_axis;
    const double c = corr.accuracy_during_shift(ax).mean, t = trad.accuracy_during_shift(ax).mean;
    if (want_corr)
      check(c <= th.shifted_corrected_max_deg,
            "corrected accuracy during shift " + num(c) + " <= " + num(th.shifted_corrected_max_deg));
    if (want_trad && std::abs(*a.shift_mm) >= th.traditional_floor_mm)
      check(t >= th.shifted_traditional_min_deg,
            "traditional accuracy during shift " + num(t) + " >= " + num(th.shifted_traditional_min_deg));
    if (want_trad && want_corr && std::abs(*a.shift_mm) >= th.shifted_min_mm)
      check(c < t, "corrected accuracy during shift below traditional");
  }
  std::cout << "wrote " << cfg.out_dir << "/report.txt\n";
  return check.ok ? 0 : kExitThresholds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid photosensor/video eye-tracking simulator"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config_path, "INI config file (defaults when omitted)")->check(CLI::ExistingFile);
  app.add_option("--out", common.out_dir, "Output directory");
  app.add_option("--seed", common.seed, "Scenario RNG seed");
  app.add_option("--jobs", common.jobs, "Worker threads")->check(CLI::PositiveNumber);

  auto* config = app.add_subcommand("config", "Show the effective configuration");
  bool print_defaults = false;
  config->add_flag("--print-defaults", print_defaults, "Print the built-in defaults instead of the loaded config");

  RenderArgs render_args;
  auto* render = app.add_subcommand("render", "Render one frame as PGM with a truth sidecar");
  render->add_option("--theta-h", render_args.theta_h, "Horizontal eye rotation, deg (nasal > 0)");
  render->add_option("--theta-v", render_args.theta_v, "Vertical eye rotation, deg (down > 0)");
  render->add_option("--dx", render_args.dx, "Sensor shift away from the nose, mm");
  render->add_option("--dy", render_args.dy, "Sensor shift upward, mm");
  render->add_option("--camera", render_args.camera, "psog or vog")->check(CLI::IsMember({"psog", "vog"}));
  render->add_option("--name", render_args.name, "Output file stem");

  bool restart = false;
  auto* scan = app.add_subcommand("scan", "Dense scan of PSOG outputs (resumable)");
  scan->add_flag("--restart", restart, "Discard an existing scan file");

  std::string calib_mode = "ground_truth";
  bool exact = false;
  auto* calibrate_cmd = app.add_subcommand("calibrate", "Fit and store the calibration model");
  calibrate_cmd->add_option("--mode", calib_mode, "ground_truth or auto")
      ->check(CLI::IsMember({"ground_truth", "auto"}));

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Run an experiment and check the acceptance thresholds");
  run->add_option("--mode", run_args.mode, "traditional, corrected or both")
      ->check(CLI::IsMember({"traditional", "corrected", "both"}));
  run->add_option("--scenario", run_args.scenario, "hv, tx or csv (overrides the config)")
      ->check(CLI::IsMember({"hv", "tx", "csv"}));
  run->add_flag("--shift-grid", run_args.shift_grid, "Accuracy against sensor shift over the configured grid");
  run->add_option("--shift-mm", run_args.shift_mm, "Add one shift event of this size");
  run->add_option("--shift-axis", run_args.shift_axis, "h or v")->check(CLI::IsMember({"h", "v"}));
  run->add_option("--model", run_args.model_path, "Calibration model (default OUT/model.txt)");

  for (auto* sub : {calibrate_cmd, run}) {
    auto* fast = sub->add_flag("--fast", "Interpolate PSOG outputs from the scan table (default)");
    sub->add_flag("--exact", exact, "Render every PSOG sample")->excludes(fast);
  }

  CLI11_PARSE(app, argc, argv);
  try {
    if (*config) {
      const RunConfig cfg = print_defaults ? RunConfig{} : resolve(common);
      std::cout << "; config hash " << config_hash(cfg) << '\n' << dump_config(cfg);
      return 0;
    }
    if (*render) return cmd_render(common, render_args);
    if (*scan) return cmd_scan(common, restart);
    if (*calibrate_cmd) return cmd_calibrate(common, calib_mode, exact);
    if (*run) return cmd_run(common, run_args, exact);
  } catch (const std::exception& e) {
    std::cerr << "psv: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
