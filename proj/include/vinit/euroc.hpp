#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "vinit/pipeline.hpp"
#include "vinit/synthetic.hpp"

namespace vinit {

// Raw ASL-format records. Timestamps stay integer nanoseconds until a
// caller rebases and divides, so epoch-scale stamps lose no precision.
struct EurocImuRecord {
  int64_t timestamp_ns = 0;
  Vec3 angular_velocity = Vec3::Zero();  // rad/s
  Vec3 acceleration = Vec3::Zero();      // m/s^2
};

struct EurocGtRecord {
  int64_t timestamp_ns = 0;
  Vec3 position = Vec3::Zero();
  Rotation orientation;  // q_wb
  Vec3 velocity = Vec3::Zero();
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();
};

namespace detail {

inline std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  return fields;
}

inline double parse_double(const std::string& s, int line_no) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) {
      ++pos;
    }
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::ParseError,
                "line " + std::to_string(line_no) + ": bad number '" + s + "'");
  }
}

inline int64_t parse_ns(const std::string& s, int line_no) {
  int64_t v = 0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last) {
    throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) +
                                           ": bad timestamp '" + s + "'");
  }
  return v;
}

template <typename Row>
std::vector<Row> parse_csv(const std::string& path, size_t n_fields,
                           Row (*make_row)(const std::vector<std::string>&, int)) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::ParseError, "cannot open " + path);
  }
  std::vector<Row> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_csv_row(line);
    if (fields.size() != n_fields) {
      throw Error(ErrorCode::ParseError,
                  "line " + std::to_string(line_no) + ": expected " +
                      std::to_string(n_fields) + " fields, got " +
                      std::to_string(fields.size()));
    }
    rows.push_back(make_row(fields, line_no));
  }
  for (size_t i = 0; i + 1 < rows.size(); ++i) {
    if (rows[i + 1].timestamp_ns <= rows[i].timestamp_ns) {
      throw Error(ErrorCode::InvalidInput,
                  "timestamps not strictly increasing at row " +
                      std::to_string(i + 2));
    }
  }
  return rows;
}

}  // namespace detail

// IMU CSV: timestamp_ns, w_x, w_y, w_z, a_x, a_y, a_z.
inline std::vector<EurocImuRecord> load_euroc_imu_records(
    const std::string& path) {
  return detail::parse_csv<EurocImuRecord>(
      path, 7, +[](const std::vector<std::string>& f, int ln) {
        EurocImuRecord r;
        r.timestamp_ns = detail::parse_ns(f[0], ln);
        for (int i = 0; i < 3; ++i) {
          r.angular_velocity[i] = detail::parse_double(f[1 + i], ln);
          r.acceleration[i] = detail::parse_double(f[4 + i], ln);
        }
        return r;
      });
}

// Same stream as ImuSamples with absolute double-seconds timestamps.
inline std::vector<ImuSample> load_euroc_imu(const std::string& path) {
  std::vector<ImuSample> samples;
  for (const EurocImuRecord& r : load_euroc_imu_records(path)) {
    ImuSample s;
    s.timestamp = static_cast<double>(r.timestamp_ns) / 1e9;
    s.angular_velocity = r.angular_velocity;
    s.acceleration = r.acceleration;
    samples.push_back(s);
  }
  return samples;
}

// Ground-truth CSV: timestamp_ns, p(3), q(w,x,y,z), v(3), b_w(3), b_a(3).
inline std::vector<EurocGtRecord> load_euroc_groundtruth(
    const std::string& path) {
  return detail::parse_csv<EurocGtRecord>(
      path, 17, +[](const std::vector<std::string>& f, int ln) {
        EurocGtRecord r;
        r.timestamp_ns = detail::parse_ns(f[0], ln);
        for (int i = 0; i < 3; ++i) r.position[i] = detail::parse_double(f[1 + i], ln);
        const double qw = detail::parse_double(f[4], ln);
        const double qx = detail::parse_double(f[5], ln);
        const double qy = detail::parse_double(f[6], ln);
        const double qz = detail::parse_double(f[7], ln);
        const double norm = std::sqrt(qw * qw + qx * qx + qy * qy + qz * qz);
        if (std::abs(norm - 1.0) >= 1e-3) {
          throw Error(ErrorCode::InvalidInput,
                      "line " + std::to_string(ln) +
                          ": quaternion norm off by >= 1e-3");
        }
        r.orientation = Rotation(qw, qx, qy, qz);  // renormalized
        for (int i = 0; i < 3; ++i) {
          r.velocity[i] = detail::parse_double(f[8 + i], ln);
          r.gyro_bias[i] = detail::parse_double(f[11 + i], ln);
          r.accel_bias[i] = detail::parse_double(f[14 + i], ln);
        }
        return r;
      });
}

// Serialization; numeric fields written with enough digits to roundtrip
// exactly.
inline void write_euroc_imu_csv(const std::string& path,
                                const std::vector<EurocImuRecord>& records) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::ParseError, "cannot write " + path);
  out << "#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],"
         "w_RS_S_z [rad s^-1],a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],"
         "a_RS_S_z [m s^-2]\n";
  out.precision(17);
  for (const EurocImuRecord& r : records) {
    out << r.timestamp_ns;
    for (int i = 0; i < 3; ++i) out << ',' << r.angular_velocity[i];
    for (int i = 0; i < 3; ++i) out << ',' << r.acceleration[i];
    out << '\n';
  }
}

inline void write_euroc_gt_csv(const std::string& path,
                               const std::vector<EurocGtRecord>& records) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::ParseError, "cannot write " + path);
  out << "#timestamp,p_RS_R_x [m],p_RS_R_y [m],p_RS_R_z [m],q_RS_w [],"
         "q_RS_x [],q_RS_y [],q_RS_z [],v_RS_R_x [m s^-1],v_RS_R_y [m s^-1],"
         "v_RS_R_z [m s^-1],b_w_RS_S_x [rad s^-1],b_w_RS_S_y [rad s^-1],"
         "b_w_RS_S_z [rad s^-1],b_a_RS_S_x [m s^-2],b_a_RS_S_y [m s^-2],"
         "b_a_RS_S_z [m s^-2]\n";
  out.precision(17);
  for (const EurocGtRecord& r : records) {
    const Eigen::Quaterniond& q = r.orientation.quaternion();
    out << r.timestamp_ns;
    for (int i = 0; i < 3; ++i) out << ',' << r.position[i];
    out << ',' << q.w() << ',' << q.x() << ',' << q.y() << ',' << q.z();
    for (int i = 0; i < 3; ++i) out << ',' << r.velocity[i];
    for (int i = 0; i < 3; ++i) out << ',' << r.gyro_bias[i];
    for (int i = 0; i < 3; ++i) out << ',' << r.accel_bias[i];
    out << '\n';
  }
}

// Key-value calibration file: intrinsics, stereo baseline, body-to-camera
// extrinsics (quaternion w x y z + translation per camera), IMU noise
// densities, gravity magnitude. '#' starts a comment.
struct CalibrationConfig {
  PinholeStereoRig rig;
  Extrinsics extrinsics;
  ImuNoiseSpec noise;
  double gravity_magnitude = 9.81;
};

inline CalibrationConfig load_calibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open " + path);
  CalibrationConfig calib;
  std::string line;
  int line_no = 0;
  Eigen::Matrix<double, 4, 1> ql(1, 0, 0, 0), qr(1, 0, 0, 0);
  Vec3 tl = Vec3::Zero(), tr = Vec3::Zero();
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::stringstream ss(line);
    std::string key;
    if (!(ss >> key)) continue;
    std::vector<double> vals;
    double v;
    while (ss >> v) vals.push_back(v);
    auto need = [&](size_t n) {
      if (vals.size() != n) {
        throw Error(ErrorCode::ParseError,
                    "line " + std::to_string(line_no) + ": key '" + key +
                        "' expects " + std::to_string(n) + " values");
      }
    };
    if (key == "fx") need(1), calib.rig.fx = vals[0];
    else if (key == "fy") need(1), calib.rig.fy = vals[0];
    else if (key == "cx") need(1), calib.rig.cx = vals[0];
    else if (key == "cy") need(1), calib.rig.cy = vals[0];
    else if (key == "baseline") need(1), calib.rig.baseline = vals[0];
    else if (key == "image_width") need(1), calib.rig.width = static_cast<int>(vals[0]);
    else if (key == "image_height") need(1), calib.rig.height = static_cast<int>(vals[0]);
    else if (key == "q_bc_left") need(4), ql << vals[0], vals[1], vals[2], vals[3];
    else if (key == "t_bc_left") need(3), tl << vals[0], vals[1], vals[2];
    else if (key == "q_bc_right") need(4), qr << vals[0], vals[1], vals[2], vals[3];
    else if (key == "t_bc_right") need(3), tr << vals[0], vals[1], vals[2];
    else if (key == "gyro_noise_density") need(1), calib.noise.gyro_noise_density = vals[0];
    else if (key == "accel_noise_density") need(1), calib.noise.accel_noise_density = vals[0];
    else if (key == "gyro_bias_walk") need(1), calib.noise.gyro_bias_walk = vals[0];
    else if (key == "accel_bias_walk") need(1), calib.noise.accel_bias_walk = vals[0];
    else if (key == "gravity") need(1), calib.gravity_magnitude = vals[0];
    else {
      throw Error(ErrorCode::ParseError,
                  "line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  calib.extrinsics.left =
      RigidTransform(Rotation(ql[0], ql[1], ql[2], ql[3]), tl);
  calib.extrinsics.right =
      RigidTransform(Rotation(qr[0], qr[1], qr[2], qr[3]), tr);
  return calib;
}

inline void save_calibration(const std::string& path,
                             const CalibrationConfig& calib) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::ParseError, "cannot write " + path);
  out.precision(17);
  out << "fx " << calib.rig.fx << "\nfy " << calib.rig.fy << "\ncx "
      << calib.rig.cx << "\ncy " << calib.rig.cy << "\nbaseline "
      << calib.rig.baseline << "\nimage_width " << calib.rig.width
      << "\nimage_height " << calib.rig.height << "\n";
  const auto& ql = calib.extrinsics.left.rotation.quaternion();
  const auto& qr = calib.extrinsics.right.rotation.quaternion();
  out << "q_bc_left " << ql.w() << ' ' << ql.x() << ' ' << ql.y() << ' '
      << ql.z() << "\n";
  out << "t_bc_left " << calib.extrinsics.left.translation.transpose() << "\n";
  out << "q_bc_right " << qr.w() << ' ' << qr.x() << ' ' << qr.y() << ' '
      << qr.z() << "\n";
  out << "t_bc_right " << calib.extrinsics.right.translation.transpose()
      << "\n";
  out << "gyro_noise_density " << calib.noise.gyro_noise_density << "\n";
  out << "accel_noise_density " << calib.noise.accel_noise_density << "\n";
  out << "gyro_bias_walk " << calib.noise.gyro_bias_walk << "\n";
  out << "accel_bias_walk " << calib.noise.accel_bias_walk << "\n";
  out << "gravity " << calib.gravity_magnitude << "\n";
}

// Assumed dataset layout under the sequence directory.
inline std::string euroc_imu_path(const std::string& dir) {
  return dir + "/mav0/imu0/data.csv";
}
inline std::string euroc_gt_path(const std::string& dir) {
  return dir + "/mav0/state_groundtruth_estimate0/data.csv";
}

struct EurocSequence {
  std::vector<EurocImuRecord> imu;
  std::vector<EurocGtRecord> gt;
  CalibrationConfig calib;
};

inline EurocSequence load_euroc_sequence(const std::string& dir,
                                         const std::string& calib_path) {
  namespace fs = std::filesystem;
  EurocSequence seq;
  if (!fs::exists(euroc_imu_path(dir))) {
    throw Error(ErrorCode::ParseError, "missing " + euroc_imu_path(dir));
  }
  if (!fs::exists(euroc_gt_path(dir))) {
    throw Error(ErrorCode::ParseError, "missing " + euroc_gt_path(dir));
  }
  seq.imu = load_euroc_imu_records(euroc_imu_path(dir));
  seq.gt = load_euroc_groundtruth(euroc_gt_path(dir));
  seq.calib = load_calibration(calib_path);
  if (seq.imu.size() < 2 || seq.gt.size() < 2) {
    throw Error(ErrorCode::InsufficientData, "dataset too short");
  }
  return seq;
}

namespace detail {

// Ground truth interpolated at a rebased time (seconds after base_ns).
inline EurocGtRecord interpolate_gt(const std::vector<EurocGtRecord>& gt,
                                    int64_t base_ns, double t) {
  const int64_t t_ns = base_ns + static_cast<int64_t>(std::llround(t * 1e9));
  auto it = std::lower_bound(
      gt.begin(), gt.end(), t_ns,
      [](const EurocGtRecord& r, int64_t v) { return r.timestamp_ns < v; });
  if (it == gt.begin()) return gt.front();
  if (it == gt.end()) return gt.back();
  const EurocGtRecord& b = *it;
  const EurocGtRecord& a = *(it - 1);
  const double u = static_cast<double>(t_ns - a.timestamp_ns) /
                   static_cast<double>(b.timestamp_ns - a.timestamp_ns);
  EurocGtRecord r;
  r.timestamp_ns = t_ns;
  r.position = (1.0 - u) * a.position + u * b.position;
  r.orientation = a.orientation.slerp(u, b.orientation);
  r.velocity = (1.0 - u) * a.velocity + u * b.velocity;
  r.gyro_bias = (1.0 - u) * a.gyro_bias + u * b.gyro_bias;
  r.accel_bias = (1.0 - u) * a.accel_bias + u * b.accel_bias;
  return r;
}

}  // namespace detail

struct EurocWindowOptions {
  double keyframe_spacing = 0.5;  // seconds
  VisualSynthesisSpec visual;     // synthesized observation layer
  uint64_t seed = 0;
};

// Oracle-driven windowed dataset: keyframe poses interpolated from ground
// truth, real IMU records, and a synthesized visual layer (the image
// products are out of scope). All times are rebased to the first IMU
// record.
inline WindowedDataset make_euroc_dataset(const EurocSequence& seq,
                                          const EurocWindowOptions& opt = {}) {
  const int64_t base_ns = seq.imu.front().timestamp_ns;
  auto to_s = [base_ns](int64_t ns) {
    return static_cast<double>(ns - base_ns) / 1e9;
  };

  const double t_begin =
      std::max(0.0, to_s(seq.gt.front().timestamp_ns));
  const double t_end = std::min(to_s(seq.imu.back().timestamp_ns),
                                to_s(seq.gt.back().timestamp_ns));

  WindowedDataset ds;
  for (double t = t_begin; t <= t_end; t += opt.keyframe_spacing) {
    ds.keyframe_times.push_back(t);
  }

  // Shared immutable inputs captured by value into the closures.
  auto imu = std::make_shared<std::vector<ImuSample>>();
  for (const EurocImuRecord& r : seq.imu) {
    ImuSample s;
    s.timestamp = to_s(r.timestamp_ns);
    s.angular_velocity = r.angular_velocity;
    s.acceleration = r.acceleration;
    imu->push_back(s);
  }
  auto gt = std::make_shared<std::vector<EurocGtRecord>>(seq.gt);
  const CalibrationConfig calib = seq.calib;
  const auto times = std::make_shared<std::vector<double>>(ds.keyframe_times);
  const EurocWindowOptions options = opt;

  auto keyframes_at = [gt, base_ns, times](int first, int count) {
    std::vector<KeyframeState> kfs;
    for (int k = first; k < first + count; ++k) {
      const EurocGtRecord r =
          detail::interpolate_gt(*gt, base_ns, times->at(k));
      KeyframeState kf;
      kf.timestamp = times->at(k);
      kf.pose_wb = RigidTransform(r.orientation, r.position);
      kf.velocity = r.velocity;
      kfs.push_back(kf);
    }
    return kfs;
  };

  ds.make_window = [imu, calib, options, keyframes_at](int first, int count) {
    InitWindow window;
    window.rig = calib.rig;
    window.extrinsics = calib.extrinsics;
    window.keyframes = keyframes_at(first, count);
    const double t0 = window.keyframes.front().timestamp;
    const double t1 = window.keyframes.back().timestamp;
    for (const ImuSample& s : *imu) {
      if (s.timestamp >= t0 - 0.05 && s.timestamp <= t1 + 0.05) {
        window.imu.push_back(s);
      }
    }
    std::mt19937_64 rng(options.seed +
                        0x9e3779b97f4a7c15ull * static_cast<uint64_t>(first));
    VisualProducts products = synthesize_visual_products(
        window.keyframes, window.rig, window.extrinsics, options.visual, rng);
    window.observations = std::move(products.observations);
    window.pair_sets = std::move(products.pair_sets);
    window.covisible_pairs = std::move(products.covisible_pairs);
    // Step-0 poses only; velocities are estimated by the pipeline.
    for (auto& kf : window.keyframes) kf.velocity = Vec3::Zero();
    return window;
  };

  ds.ground_truth_poses = [keyframes_at](int first, int count) {
    std::vector<RigidTransform> poses;
    for (const KeyframeState& kf : keyframes_at(first, count)) {
      poses.push_back(kf.pose_wb);
    }
    return poses;
  };

  ds.ground_truth_gyro_bias = [gt, base_ns, times](int first, int count) {
    Vec3 mean = Vec3::Zero();
    for (int k = first; k < first + count; ++k) {
      mean += detail::interpolate_gt(*gt, base_ns, times->at(k)).gyro_bias;
    }
    return Vec3(mean / count);
  };

  ds.mean_angular_rate_deg = [imu, gt, base_ns, times](int first, int count) {
    const double t0 = times->at(first);
    const double t1 = times->at(first + count - 1);
    const Vec3 bias =
        detail::interpolate_gt(*gt, base_ns, 0.5 * (t0 + t1)).gyro_bias;
    double sum = 0.0;
    int n = 0;
    for (const ImuSample& s : *imu) {
      if (s.timestamp < t0 || s.timestamp > t1) continue;
      sum += (s.angular_velocity - bias).norm();
      ++n;
    }
    return n > 0 ? sum / n * 180.0 / M_PI : 0.0;
  };

  return ds;
}

// Serializes a synthetic sequence in the dataset layout (fixture for the
// ingestion path and for oracle runs without real data). Timestamps get an
// epoch-scale offset so the nanosecond arithmetic is exercised.
inline void write_euroc_fixture(const std::string& dir,
                                const SyntheticSequence& seq,
                                int64_t epoch_ns = 1403636579753555392ll) {
  namespace fs = std::filesystem;
  fs::create_directories(dir + "/mav0/imu0");
  fs::create_directories(dir + "/mav0/state_groundtruth_estimate0");

  std::vector<EurocImuRecord> imu;
  for (const ImuSample& s : seq.imu) {
    EurocImuRecord r;
    r.timestamp_ns = epoch_ns + static_cast<int64_t>(std::llround(s.timestamp * 1e9));
    r.angular_velocity = s.angular_velocity;
    r.acceleration = s.acceleration;
    imu.push_back(r);
  }
  write_euroc_imu_csv(euroc_imu_path(dir), imu);

  // Ground-truth stream at 200 Hz from the analytic trajectory.
  std::vector<EurocGtRecord> gt;
  const double dt = 1.0 / 200.0;
  for (double t = 0.0; t <= seq.imu.back().timestamp + 1e-9; t += dt) {
    const TrajectorySample ts = eval_trajectory(seq.spec, t);
    EurocGtRecord r;
    r.timestamp_ns = epoch_ns + static_cast<int64_t>(std::llround(t * 1e9));
    r.position = ts.position;
    r.orientation = ts.r_wb;
    r.velocity = ts.velocity;
    r.gyro_bias = seq.bias.gyro;
    r.accel_bias = seq.bias.accel;
    gt.push_back(r);
  }
  write_euroc_gt_csv(euroc_gt_path(dir), gt);
}

}  // namespace vinit
