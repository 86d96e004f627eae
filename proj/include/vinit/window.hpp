#pragma once

#include <memory>
#include <random>

#include "vinit/pipeline.hpp"
#include "vinit/synthetic.hpp"

namespace vinit {

// Gaussian pose perturbation emulating visual-SLAM error in the Step-0
// poses (zero sigmas hand the ground truth through unchanged).
struct PoseNoise {
  double rotation_sigma = 0.0;     // rad
  double translation_sigma = 0.0;  // m
  uint64_t seed = 0;
};

// Cuts one initialization window out of a synthetic sequence.
inline InitWindow make_synthetic_window(const SyntheticSequence& seq,
                                        int first_keyframe, int count,
                                        const PoseNoise& noise = {}) {
  const int n_kf = static_cast<int>(seq.keyframes.size());
  if (first_keyframe < 0 || count < 2 || first_keyframe + count > n_kf) {
    throw Error(ErrorCode::OutOfRange, "window outside the sequence");
  }

  InitWindow window;
  window.rig = seq.rig;
  window.extrinsics = seq.extrinsics;

  std::mt19937_64 rng(noise.seed + 0x9e3779b97f4a7c15ull *
                                       static_cast<uint64_t>(first_keyframe));
  std::normal_distribution<double> randn(0.0, 1.0);
  for (int k = first_keyframe; k < first_keyframe + count; ++k) {
    KeyframeState kf = seq.keyframes[k];
    kf.velocity = Vec3::Zero();  // Step-0 supplies poses only
    if (noise.rotation_sigma > 0.0) {
      kf.pose_wb.rotation =
          kf.pose_wb.rotation *
          Rotation::exp(noise.rotation_sigma *
                        Vec3(randn(rng), randn(rng), randn(rng)));
    }
    if (noise.translation_sigma > 0.0) {
      kf.pose_wb.translation += noise.translation_sigma *
                                Vec3(randn(rng), randn(rng), randn(rng));
    }
    window.keyframes.push_back(kf);
  }

  const double t0 = seq.keyframes[first_keyframe].timestamp;
  const double t1 = seq.keyframes[first_keyframe + count - 1].timestamp;
  const double margin = 2.0 / seq.spec.imu_rate;
  for (const ImuSample& s : seq.imu) {
    if (s.timestamp >= t0 - margin && s.timestamp <= t1 + margin) {
      window.imu.push_back(s);
    }
  }

  for (int k = first_keyframe; k + 1 < first_keyframe + count; ++k) {
    StereoPairSet set = seq.pair_sets[k];
    set.keyframe_k = k - first_keyframe;
    set.keyframe_k1 = set.keyframe_k + 1;
    window.pair_sets.push_back(std::move(set));
    window.covisible_pairs.push_back(seq.covisible_pairs[k]);
  }

  for (const Observation& obs : seq.observations) {
    if (obs.keyframe_id >= first_keyframe &&
        obs.keyframe_id < first_keyframe + count) {
      Observation local = obs;
      local.keyframe_id -= first_keyframe;
      window.observations.push_back(local);
    }
  }
  return window;
}

inline WindowedDataset make_synthetic_dataset(const SyntheticSequence& seq,
                                              const PoseNoise& noise = {}) {
  WindowedDataset ds;
  for (const auto& kf : seq.keyframes) ds.keyframe_times.push_back(kf.timestamp);
  // Shared copy keeps the dataset valid independently of the caller.
  auto shared = std::make_shared<SyntheticSequence>(seq);
  ds.make_window = [shared, noise](int first, int count) {
    return make_synthetic_window(*shared, first, count, noise);
  };
  ds.ground_truth_poses = [shared](int first, int count) {
    std::vector<RigidTransform> poses;
    for (int k = first; k < first + count; ++k) {
      poses.push_back(shared->keyframes[k].pose_wb);
    }
    return poses;
  };
  ds.ground_truth_gyro_bias = [shared](int, int) {
    return shared->bias.gyro;
  };
  ds.mean_angular_rate_deg = [shared](int first, int count) {
    const double t0 = shared->keyframes[first].timestamp;
    const double t1 = shared->keyframes[first + count - 1].timestamp;
    double sum = 0.0;
    int n = 0;
    for (const ImuSample& s : shared->imu) {
      if (s.timestamp < t0 || s.timestamp > t1) continue;
      sum += (s.angular_velocity - shared->bias.gyro).norm();
      ++n;
    }
    return n > 0 ? sum / n * 180.0 / M_PI : 0.0;
  };
  return ds;
}

}  // namespace vinit
