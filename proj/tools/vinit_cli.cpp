// Command-line front end: synthetic benchmark sweeps, EuRoC oracle runs,
// and report merging.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "vinit/euroc.hpp"
#include "vinit/report.hpp"
#include "vinit/window.hpp"

namespace {

using namespace vinit;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct CommonArgs {
  int window = 10;
  double period = 2.5;
  double spacing = 0.5;
  double ebar_threshold = 1e-4;
  bool no_viba = false;
  std::string pose_noise;  // "ROT_DEG,TRANS_M"
  uint64_t seed = 0;
  int jobs = 1;
  std::string out;
  std::string timings_out;  // optional; timings are not byte-deterministic
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--window", args.window, "keyframes per window")
      ->capture_default_str();
  cmd->add_option("--period", args.period, "launch period in seconds")
      ->capture_default_str();
  cmd->add_option("--spacing", args.spacing, "keyframe spacing in seconds")
      ->capture_default_str();
  cmd->add_option("--ebar-threshold", args.ebar_threshold,
                  "NEC gate threshold")
      ->capture_default_str();
  cmd->add_flag("--no-viba", args.no_viba, "skip the joint VI-BA step");
  cmd->add_option("--pose-noise", args.pose_noise,
                  "Step-0 pose noise as ROT_DEG,TRANS_M");
  cmd->add_option("--seed", args.seed, "RNG seed")->capture_default_str();
  cmd->add_option("--jobs", args.jobs, "worker pool size")
      ->capture_default_str();
  cmd->add_option("--out", args.out, "report file (JSON lines)");
  cmd->add_option("--timings-out", args.timings_out,
                  "optional per-segment stage timings file");
}

PoseNoise parse_pose_noise(const std::string& text, uint64_t seed) {
  PoseNoise noise;
  noise.seed = seed;
  if (text.empty()) return noise;
  double rot_deg = 0.0, trans_m = 0.0;
  char comma = 0;
  std::stringstream ss(text);
  if (!(ss >> rot_deg)) {
    throw Error(ErrorCode::InvalidInput, "--pose-noise expects ROT_DEG[,TRANS_M]");
  }
  if (ss >> comma >> trans_m && comma != ',') {
    throw Error(ErrorCode::InvalidInput, "--pose-noise expects ROT_DEG[,TRANS_M]");
  }
  noise.rotation_sigma = rot_deg * M_PI / 180.0;
  noise.translation_sigma = trans_m;
  return noise;
}

InitConfig make_config(const CommonArgs& args) {
  InitConfig cfg;
  cfg.window_size = args.window;
  cfg.keyframe_spacing = args.spacing;
  cfg.ebar_threshold = args.ebar_threshold;
  cfg.run_viba = !args.no_viba;
  return cfg;
}

void print_table(const std::string& title,
                 const std::vector<std::pair<std::string, std::vector<AggregateRow>>>& blocks) {
  std::printf("%s\n", title.c_str());
  std::printf("%-28s %5s %5s  %10s %10s  %10s %10s\n", "name", "segs", "ok",
              "ATE w/o", "ATE w/", "RRE w/o", "RRE w/");
  auto cell = [](double v) {
    char buf[32];
    if (std::isfinite(v)) std::snprintf(buf, sizeof(buf), "%10.4f", v);
    else std::snprintf(buf, sizeof(buf), "%10s", "-");
    return std::string(buf);
  };
  for (const auto& [name, rows] : blocks) {
    for (const AggregateRow& r : rows) {
      const std::string label = name + (r.label == "all" ? "" : (":" + r.label));
      std::printf("%-28s %5d %5d  %s %s  %s %s\n", label.c_str(), r.segments,
                  r.successes, cell(r.mean_ate_wo).c_str(),
                  cell(r.mean_ate_w).c_str(), cell(r.mean_rre_wo).c_str(),
                  cell(r.mean_rre_w).c_str());
    }
  }
}

void write_timings(const std::string& path,
                   const std::vector<SegmentResult>& segments) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::ParseError, "cannot write " + path);
  for (const SegmentResult& seg : segments) {
    Json j;
    j["index"] = seg.segment_index;
    if (seg.completed) {
      j["bias_ms"] = seg.result.timings.bias_ms;
      j["map_ms"] = seg.result.timings.map_ms;
      j["pose_ms"] = seg.result.timings.pose_ms;
      j["gate_ms"] = seg.result.timings.gate_ms;
      j["viba_ms"] = seg.result.timings.viba_ms;
      j["total_ms"] = seg.result.timings.total_ms;
    }
    out << j.dump() << '\n';
  }
}

int finish_run(const CommonArgs& args, const WindowedDataset& dataset,
               const InitConfig& cfg, RunReport& report,
               const std::vector<SegmentResult>& segments) {
  report.segments = summarize_sweep(segments, dataset, cfg);
  if (!args.out.empty()) write_report(args.out, report);
  if (!args.timings_out.empty()) write_timings(args.timings_out, segments);
  print_table("initialization sweep: " + report.name,
              {{report.name, compute_aggregates(report.segments)}});
  double mean_total = 0.0;
  int n = 0;
  for (const SegmentResult& seg : segments) {
    if (seg.completed) {
      mean_total += seg.result.timings.total_ms;
      ++n;
    }
  }
  if (n > 0) {
    std::printf("mean wall time per segment: %.1f ms over %d segments\n",
                mean_total / n, n);
  }
  return kExitOk;
}

int cmd_synth(const CommonArgs& args, const std::string& traj, double duration,
              double rate, int landmarks, const std::string& gyro_bias,
              double pixel_noise, double bearing_noise, double imu_noise) {
  SyntheticSpec spec;
  if (traj == "stationary") spec.kind = TrajectoryKind::Stationary;
  else if (traj == "constant-velocity") spec.kind = TrajectoryKind::ConstantVelocity;
  else if (traj == "circular") spec.kind = TrajectoryKind::Circular;
  else if (traj == "sinusoidal-rotation") spec.kind = TrajectoryKind::SinusoidalRotation;
  else {
    std::fprintf(stderr, "error: unknown trajectory '%s'\n", traj.c_str());
    return kExitUsage;
  }
  spec.duration = duration;
  spec.imu_rate = rate;
  spec.keyframe_spacing = args.spacing;
  spec.landmark_count = landmarks;
  spec.seed = args.seed;
  spec.pixel_sigma = pixel_noise;
  spec.bearing_sigma = bearing_noise;
  spec.imu_noise_scale = imu_noise;
  if (!gyro_bias.empty()) {
    std::stringstream ss(gyro_bias);
    char c1 = 0, c2 = 0;
    if (!(ss >> spec.bias.gyro[0] >> c1 >> spec.bias.gyro[1] >> c2 >>
          spec.bias.gyro[2]) ||
        c1 != ',' || c2 != ',') {
      std::fprintf(stderr, "error: --gyro-bias expects X,Y,Z\n");
      return kExitUsage;
    }
  }
  try {
    spec.validate();
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }

  const SyntheticSequence seq = generate_synthetic(spec);
  const PoseNoise noise = parse_pose_noise(args.pose_noise, args.seed + 1);
  const WindowedDataset dataset = make_synthetic_dataset(seq, noise);
  const InitConfig cfg = make_config(args);
  const auto segments = sweep_initializations(dataset, cfg, args.period, args.jobs);

  RunReport report;
  report.command = "synth";
  report.name = "synth-" + traj + "-seed" + std::to_string(args.seed);
  report.seed = args.seed;
  report.config = {{"traj", traj},
                   {"duration", duration},
                   {"rate", rate},
                   {"window", args.window},
                   {"period", args.period},
                   {"spacing", args.spacing},
                   {"ebar_threshold", args.ebar_threshold},
                   {"viba", !args.no_viba},
                   {"pose_noise", args.pose_noise},
                   {"landmarks", landmarks},
                   {"pixel_noise", pixel_noise},
                   {"bearing_noise", bearing_noise},
                   {"imu_noise", imu_noise}};
  return finish_run(args, dataset, cfg, report, segments);
}

int cmd_euroc(const CommonArgs& args, const std::string& dir,
              const std::string& calib_path, double pixel_noise) {
  namespace fs = std::filesystem;
  if (!fs::exists(euroc_imu_path(dir))) {
    std::fprintf(stderr, "error: missing %s\n", euroc_imu_path(dir).c_str());
    return kExitRuntime;
  }
  if (!fs::exists(euroc_gt_path(dir))) {
    std::fprintf(stderr, "error: missing %s\n", euroc_gt_path(dir).c_str());
    return kExitRuntime;
  }
  if (!fs::exists(calib_path)) {
    std::fprintf(stderr, "error: missing %s\n", calib_path.c_str());
    return kExitRuntime;
  }

  const EurocSequence seq = load_euroc_sequence(dir, calib_path);
  EurocWindowOptions opt;
  opt.keyframe_spacing = args.spacing;
  opt.visual.pixel_sigma = pixel_noise;
  opt.visual.bearing_sigma = pixel_noise / seq.calib.rig.fx;
  opt.seed = args.seed;
  const WindowedDataset dataset = make_euroc_dataset(seq, opt);

  InitConfig cfg = make_config(args);
  cfg.noise = seq.calib.noise;
  cfg.gravity_magnitude = seq.calib.gravity_magnitude;
  const auto segments = sweep_initializations(dataset, cfg, args.period, args.jobs);

  RunReport report;
  report.command = "euroc";
  report.name = fs::path(dir).filename().string();
  if (report.name.empty()) report.name = dir;
  report.seed = args.seed;
  report.config = {{"dir", dir},
                   {"calib", calib_path},
                   {"window", args.window},
                   {"period", args.period},
                   {"spacing", args.spacing},
                   {"ebar_threshold", args.ebar_threshold},
                   {"viba", !args.no_viba},
                   {"pixel_noise", pixel_noise}};
  return finish_run(args, dataset, cfg, report, segments);
}

int cmd_report(const std::vector<std::string>& files, const std::string& out) {
  if (files.empty()) {
    std::fprintf(stderr, "error: no report files given\n");
    return kExitUsage;
  }
  std::vector<RunReport> reports;
  for (const std::string& f : files) {
    reports.push_back(read_report(f));  // throws on schema mismatch
  }

  std::vector<std::pair<std::string, std::vector<AggregateRow>>> blocks;
  std::vector<SegmentReport> all_segments;
  for (const RunReport& r : reports) {
    blocks.push_back({r.name, compute_aggregates(r.segments)});
    all_segments.insert(all_segments.end(), r.segments.begin(),
                        r.segments.end());
  }
  blocks.push_back({"Avg", {aggregate_rows("all", [&] {
                      std::vector<const SegmentReport*> ptrs;
                      for (const auto& s : all_segments) ptrs.push_back(&s);
                      return ptrs;
                    }())}});
  print_table("merged reports", blocks);

  if (!out.empty()) {
    RunReport merged;
    merged.command = "report";
    merged.name = "merged";
    merged.segments = all_segments;
    write_report(out, merged);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stereo visual-inertial initialization toolkit"};
  app.require_subcommand(1);

  CommonArgs synth_args, euroc_args;

  auto* synth = app.add_subcommand("synth", "synthetic benchmark sweep");
  std::string traj = "circular";
  double duration = 30.0, rate = 200.0;
  int landmarks = 600;
  std::string gyro_bias;
  double pixel_noise = 0.0, bearing_noise = 0.0, imu_noise = 0.0;
  synth->add_option("--traj", traj,
                    "stationary|constant-velocity|circular|sinusoidal-rotation")
      ->capture_default_str();
  synth->add_option("--duration", duration, "sequence length in seconds")
      ->capture_default_str();
  synth->add_option("--rate", rate, "IMU rate in Hz")->capture_default_str();
  synth->add_option("--landmarks", landmarks, "landmark count")
      ->capture_default_str();
  synth->add_option("--gyro-bias", gyro_bias, "injected gyro bias X,Y,Z");
  synth->add_option("--pixel-noise", pixel_noise, "pixel noise sigma (px)")
      ->capture_default_str();
  synth->add_option("--bearing-noise", bearing_noise, "bearing noise sigma (rad)")
      ->capture_default_str();
  synth->add_option("--imu-noise", imu_noise, "IMU noise scale (0 = noise-free)")
      ->capture_default_str();
  add_common(synth, synth_args);

  auto* euroc = app.add_subcommand("euroc", "oracle-driven dataset sweep");
  std::string dir, calib_path;
  double euroc_pixel_noise = 1.0;
  euroc->add_option("--dir", dir, "dataset directory (contains mav0/)")
      ->required();
  euroc->add_option("--calib", calib_path, "calibration config file")->required();
  euroc->add_option("--pixel-noise", euroc_pixel_noise,
                    "synthesized observation pixel noise (px)")
      ->capture_default_str();
  add_common(euroc, euroc_args);

  auto* merge = app.add_subcommand("report", "merge report files into a table");
  std::vector<std::string> report_files;
  std::string merge_out;
  merge->add_option("files", report_files, "report files");
  merge->add_option("--out", merge_out, "write merged report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) {
      if (duration <= 0.0 || rate <= 0.0 || synth_args.window < 3) {
        std::fprintf(stderr, "error: invalid synth arguments\n");
        return kExitUsage;
      }
      return cmd_synth(synth_args, traj, duration, rate, landmarks, gyro_bias,
                       pixel_noise, bearing_noise, imu_noise);
    }
    if (euroc->parsed()) {
      if (euroc_args.window < 3) {
        std::fprintf(stderr, "error: invalid euroc arguments\n");
        return kExitUsage;
      }
      return cmd_euroc(euroc_args, dir, calib_path, euroc_pixel_noise);
    }
    if (merge->parsed()) {
      return cmd_report(report_files, merge_out);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.code() == ErrorCode::InvalidInput &&
                   std::string(e.what()).find("--") != std::string::npos
               ? kExitUsage
               : kExitRuntime;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
