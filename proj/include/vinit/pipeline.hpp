#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "vinit/inertial_map.hpp"
#include "vinit/nec.hpp"
#include "vinit/pose_refine.hpp"
#include "vinit/vi_ba.hpp"

namespace vinit {

struct InitConfig {
  int window_size = 10;           // keyframes per initialization window
  double keyframe_spacing = 0.5;  // seconds
  double ebar_threshold = 1e-4;
  bool run_viba = true;
  // Literal reading of the gate translation (world-in-camera translation of
  // the first keyframe of the pair) instead of the relative translation.
  bool nec_literal_translation = false;

  ImuNoiseSpec noise;
  PriorSpec prior;
  double gravity_magnitude = 9.81;

  LmConfig lm_bias;
  LmConfig lm_translation;
  InertialMapConfig map;
  VibaOptions viba;

  // Extra solve passes with the preintegration re-linearized at the
  // previous bias estimate; removes the first-order correction error.
  int map_relinearize_passes = 1;

  // Ablation/testing hook: pins the gyroscope bias through the whole
  // pipeline instead of estimating it.
  std::optional<Vec3> gyro_bias_override;

  void validate() const {
    if (window_size < 3) {
      throw Error(ErrorCode::InvalidInput, "window_size must be >= 3");
    }
    if (!(ebar_threshold > 0.0)) {
      throw Error(ErrorCode::InvalidInput, "ebar_threshold must be > 0");
    }
  }
};

// One initialization window: Step-0 keyframe poses (from an external pose
// source), the IMU stream spanning them, and the visual products.
struct InitWindow {
  std::vector<KeyframeState> keyframes;  // Step-0 poses; velocities ignored
  std::vector<ImuSample> imu;
  std::vector<StereoPairSet> pair_sets;
  std::vector<std::vector<BearingPair>> covisible_pairs;
  std::vector<Observation> observations;
  PinholeStereoRig rig;
  Extrinsics extrinsics;
};

struct StageTimings {
  double bias_ms = 0.0;       // Step 1
  double map_ms = 0.0;        // Step 2
  double pose_ms = 0.0;       // Step 3
  double gate_ms = 0.0;       // success check
  double viba_ms = 0.0;       // Step 4
  double total_ms = 0.0;
};

struct InitResult {
  std::vector<KeyframeState> keyframes;  // final (Step 4 if run, else Step 3)
  std::vector<Landmark> landmarks;
  std::vector<bool> landmark_valid;
  GravityModel gravity;
  ImuBias bias;
  NecCheckReport nec_report;
  bool success = false;
  bool viba_ran = false;
  StageTimings timings;

  // Per-stage states for evaluation.
  std::vector<KeyframeState> step0_keyframes;
  Vec3 step1_bias = Vec3::Zero();
  InertialMapState step2_state;
  std::vector<KeyframeState> step3_keyframes;
};

namespace detail {

class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  double stop_ms() const {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

template <typename F>
auto run_stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.code(), std::string(name) + ": " + e.what());
  }
}

}  // namespace detail

// Runs Steps 1-4 over one keyframe window given external Step-0 poses.
inline InitResult run_initialization(const InitWindow& window,
                                     const InitConfig& cfg = {}) {
  cfg.validate();
  const detail::StageTimer total_timer;

  const int n = static_cast<int>(window.keyframes.size());
  if (n < 2) {
    throw Error(ErrorCode::InsufficientData, "window needs >= 2 keyframes");
  }
  if (window.pair_sets.size() + 1 != window.keyframes.size() ||
      window.covisible_pairs.size() + 1 != window.keyframes.size()) {
    throw Error(ErrorCode::InvalidInput, "per-interval products mismatch");
  }

  InitResult result;
  result.step0_keyframes = window.keyframes;

  std::vector<double> kf_times;
  for (const auto& kf : window.keyframes) kf_times.push_back(kf.timestamp);
  const auto slices = detail::run_stage("step1 (gyro bias)", [&] {
    return split_by_keyframes(window.imu, kf_times);
  });

  auto preintegrate_at = [&](const ImuBias& bias) {
    std::vector<Preintegration> out;
    out.reserve(slices.size());
    for (const auto& slice : slices) {
      out.push_back(preintegrate(slice, bias, cfg.noise));
    }
    return out;
  };

  // Step 1: eigenvalue-based gyroscope bias estimation (seeded at zero).
  detail::StageTimer t1;
  std::vector<Preintegration> preints = preintegrate_at(ImuBias{});
  if (cfg.gyro_bias_override) {
    result.step1_bias = *cfg.gyro_bias_override;
  } else {
    result.step1_bias = detail::run_stage("step1 (gyro bias)", [&] {
      return estimate_gyro_bias_stereo(window.pair_sets, preints,
                                       window.extrinsics, Vec3::Zero(),
                                       cfg.lm_bias)
          .bias;
    });
  }
  result.timings.bias_ms = t1.stop_ms();

  // Step 2: inertial-only MAP for velocities, gravity, and both biases.
  detail::StageTimer t2;
  PriorSpec prior = cfg.prior;
  if (cfg.gyro_bias_override) {
    // Pin the gyro bias at the override so later stages consume it as-is.
    prior.mean.gyro = *cfg.gyro_bias_override;
    prior.covariance.topLeftCorner<3, 3>() = Mat3::Identity() * 1e-18;
  }
  InertialMapConfig map_cfg = cfg.map;
  map_cfg.gravity_magnitude = cfg.gravity_magnitude;

  ImuBias lin_bias;
  lin_bias.gyro = result.step1_bias;
  InertialMapResult map_res = detail::run_stage("step2 (inertial MAP)", [&] {
    preints = preintegrate_at(lin_bias);
    auto res = solve_inertial_map(window.keyframes, preints,
                                  result.step1_bias, prior, map_cfg);
    for (int pass = 0; pass < cfg.map_relinearize_passes; ++pass) {
      lin_bias = res.state.bias;
      preints = preintegrate_at(lin_bias);
      res = solve_inertial_map(window.keyframes, preints, lin_bias.gyro, prior,
                               map_cfg);
    }
    return res;
  });
  result.step2_state = map_res.state;
  result.gravity = map_res.state.gravity;
  result.bias = map_res.state.bias;
  result.timings.map_ms = t2.stop_ms();

  // Step 3: rotation update by integration, re-triangulation, 3-DoF BA.
  detail::StageTimer t3;
  preints = preintegrate_at(result.bias);
  const std::vector<Rotation> body_rotations = propagate_body_rotations(
      window.keyframes[0].pose_wb.rotation, preints, result.bias.gyro);

  std::vector<KeyframeState> step3 = window.keyframes;
  for (int k = 0; k < n; ++k) {
    step3[k].pose_wb.rotation = body_rotations[k];
    step3[k].velocity = map_res.state.velocities[k];
  }

  // Landmarks from the first stereo observation of each track, using the
  // updated rotations (old triangulations are invalid after the update).
  int max_lm = -1;
  for (const auto& obs : window.observations) {
    max_lm = std::max(max_lm, obs.landmark_id);
  }
  result.landmarks.assign(max_lm + 1, Landmark{});
  result.landmark_valid.assign(max_lm + 1, false);
  detail::run_stage("step3 (triangulation)", [&] {
    for (const auto& obs : window.observations) {
      if (obs.kind != ObservationKind::Stereo) continue;
      if (result.landmark_valid[obs.landmark_id]) continue;
      const RigidTransform cw =
          (step3[obs.keyframe_id].pose_wb * window.extrinsics.left).inverse();
      try {
        result.landmarks[obs.landmark_id] = triangulate(obs, cw, window.rig);
        result.landmark_valid[obs.landmark_id] = true;
      } catch (const Error&) {
        // Degenerate depth: leave the track invalid.
      }
    }
    return 0;
  });
  std::vector<Observation> usable;
  usable.reserve(window.observations.size());
  for (const auto& obs : window.observations) {
    if (result.landmark_valid[obs.landmark_id]) usable.push_back(obs);
  }
  if (usable.empty()) {
    throw Error(ErrorCode::DegenerateScene,
                "step3 (triangulation): no usable landmark tracks");
  }

  std::vector<Rotation> rot_cw(n);
  std::vector<Vec3> t_cw(n);
  for (int k = 0; k < n; ++k) {
    const RigidTransform cw =
        (step3[k].pose_wb * window.extrinsics.left).inverse();
    rot_cw[k] = cw.rotation;
    t_cw[k] = cw.translation;
  }
  const TranslationBaResult tba = detail::run_stage("step3 (3-DoF BA)", [&] {
    return translation_only_ba(rot_cw, t_cw, result.landmarks, usable,
                               window.rig, cfg.viba.huber, cfg.lm_translation);
  });
  for (int k = 0; k < n; ++k) {
    const RigidTransform wc =
        RigidTransform(rot_cw[k], tba.translations[k]).inverse();
    step3[k].pose_wb = wc * window.extrinsics.left.inverse();
  }
  result.step3_keyframes = step3;
  result.timings.pose_ms = t3.stop_ms();

  // Success gate: average NEC residual with the optimized translations.
  detail::StageTimer tg;
  std::vector<Vec3> gate_translations(preints.size());
  for (size_t k = 0; k < preints.size(); ++k) {
    const RigidTransform cw_k =
        (step3[k].pose_wb * window.extrinsics.left).inverse();
    if (cfg.nec_literal_translation) {
      gate_translations[k] = cw_k.translation;
    } else {
      const RigidTransform wc_k1 = step3[k + 1].pose_wb * window.extrinsics.left;
      const Vec3 t = (cw_k * wc_k1).translation;
      gate_translations[k] = t.norm() > 1e-12 ? Vec3(t.normalized()) : Vec3::Zero();
    }
  }
  result.nec_report = detail::run_stage("gate (NEC check)", [&] {
    return compute_nec_check(window.covisible_pairs, preints, result.bias.gyro,
                             window.extrinsics, gate_translations,
                             cfg.ebar_threshold);
  });
  result.timings.gate_ms = tg.stop_ms();
  result.success = result.nec_report.passed;
  result.keyframes = step3;

  // Step 4: joint VI-BA, only after a passing gate.
  if (result.success && cfg.run_viba) {
    detail::StageTimer t4;
    VibaOptions viba = cfg.viba;
    const VibaResult refined = detail::run_stage("step4 (VI-BA)", [&] {
      return joint_vi_ba(step3, result.landmarks, preints, usable,
                         result.gravity, result.bias, cfg.prior, window.rig,
                         window.extrinsics, viba);
    });
    result.keyframes = refined.keyframes;
    result.landmarks = refined.landmarks;
    result.gravity = refined.gravity;
    result.bias = refined.bias;
    result.viba_ran = true;
    result.timings.viba_ms = t4.stop_ms();
  }

  result.timings.total_ms = total_timer.stop_ms();
  return result;
}

// A dataset that can materialize initialization windows at any keyframe
// index; the synthetic generator and the EuRoC loader both provide one.
// The ground-truth accessors are optional evaluation aids.
struct WindowedDataset {
  std::vector<double> keyframe_times;
  std::function<InitWindow(int first_keyframe, int count)> make_window;
  std::function<std::vector<RigidTransform>(int first_keyframe, int count)>
      ground_truth_poses;
  std::function<Vec3(int first_keyframe, int count)> ground_truth_gyro_bias;
  std::function<double(int first_keyframe, int count)> mean_angular_rate_deg;
};

struct SegmentResult {
  int segment_index = 0;
  double start_time = 0.0;
  bool completed = false;   // stages ran to the gate (or past it)
  std::string error;        // set when a stage threw
  InitResult result;
};

// Launches one initialization per `launch_period` along the dataset and
// collects per-segment results. Segments run in a small worker pool;
// output order is deterministic by segment index.
inline std::vector<SegmentResult> sweep_initializations(
    const WindowedDataset& dataset, const InitConfig& cfg,
    double launch_period = 2.5, int jobs = 1) {
  const int n_kf = static_cast<int>(dataset.keyframe_times.size());
  std::vector<int> starts;
  double next_launch = dataset.keyframe_times.empty()
                           ? 0.0
                           : dataset.keyframe_times.front();
  for (int k = 0; k < n_kf; ++k) {
    if (k + cfg.window_size > n_kf) break;
    if (dataset.keyframe_times[k] + 1e-9 >= next_launch) {
      starts.push_back(k);
      next_launch = dataset.keyframe_times[k] + launch_period;
    }
  }
  if (starts.empty() && n_kf >= cfg.window_size) starts.push_back(0);

  std::vector<SegmentResult> results(starts.size());
  auto run_segment = [&](int i) {
    SegmentResult& seg = results[i];
    seg.segment_index = i;
    seg.start_time = dataset.keyframe_times[starts[i]];
    try {
      const InitWindow window =
          dataset.make_window(starts[i], cfg.window_size);
      seg.result = run_initialization(window, cfg);
      seg.completed = true;
    } catch (const std::exception& e) {
      seg.error = e.what();
    }
  };

  jobs = std::max(1, jobs);
  if (jobs == 1) {
    for (size_t i = 0; i < starts.size(); ++i) run_segment(static_cast<int>(i));
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int t = 0; t < jobs; ++t) {
      pool.emplace_back([&] {
        for (size_t i = next.fetch_add(1); i < starts.size();
             i = next.fetch_add(1)) {
          run_segment(static_cast<int>(i));
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  return results;
}

}  // namespace vinit
