#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "vinit/euroc.hpp"
#include "vinit/window.hpp"

using namespace vinit;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("vinit_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

}  // namespace

TEST_CASE("imu csv parsing") {
  TempDir tmp;
  const std::string path = tmp.file("imu.csv");
  write_file(path,
             "#timestamp [ns],w_x,w_y,w_z,a_x,a_y,a_z\n"
             "1403636579758555392,-0.1,0.2,0.3,9.8,0.0,0.1\n"
             "1403636579763555392,-0.11,0.21,0.31,9.81,0.01,0.11\n");

  const auto records = load_euroc_imu_records(path);
  REQUIRE(records.size() == 2);
  CHECK(records[0].timestamp_ns == 1403636579758555392ll);
  CHECK(records[0].angular_velocity == Vec3(-0.1, 0.2, 0.3));
  CHECK(records[0].acceleration == Vec3(9.8, 0.0, 0.1));

  const auto samples = load_euroc_imu(path);
  REQUIRE(samples.size() == 2);
  // Absolute double seconds carry ~1e-7 s quantization at epoch scale.
  CHECK(samples[0].timestamp == Catch::Approx(1403636579.758555392).margin(1e-6));
  CHECK(samples[1].timestamp > samples[0].timestamp);
}

TEST_CASE("imu csv error paths") {
  TempDir tmp;

  const std::string header_only = tmp.file("header.csv");
  write_file(header_only, "#timestamp [ns],w_x,w_y,w_z,a_x,a_y,a_z\n");
  CHECK(load_euroc_imu(header_only).empty());

  const std::string short_row = tmp.file("short.csv");
  write_file(short_row, "#h\n1000,1,2,3,4,5\n");
  try {
    load_euroc_imu(short_row);
    FAIL("expected ParseError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ParseError);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  const std::string bad_number = tmp.file("bad.csv");
  write_file(bad_number, "1000,1,2,x,4,5,6\n");
  CHECK_THROWS_AS(load_euroc_imu(bad_number), Error);

  const std::string non_monotone = tmp.file("mono.csv");
  write_file(non_monotone, "2000,1,2,3,4,5,6\n1000,1,2,3,4,5,6\n");
  try {
    load_euroc_imu(non_monotone);
    FAIL("expected InvalidInput");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidInput);
  }

  CHECK_THROWS_AS(load_euroc_imu(tmp.file("missing.csv")), Error);
}

TEST_CASE("groundtruth csv parsing") {
  TempDir tmp;
  const std::string path = tmp.file("gt.csv");
  write_file(path,
             "#ts,p,p,p,qw,qx,qy,qz,v,v,v,bw,bw,bw,ba,ba,ba\n"
             "1000000000,1.0,2.0,3.0,1.0,0.0,0.0,0.0,0.1,0.2,0.3,"
             "0.01,0.02,0.03,0.04,0.05,0.06\n");
  const auto gt = load_euroc_groundtruth(path);
  REQUIRE(gt.size() == 1);
  CHECK(gt[0].position == Vec3(1.0, 2.0, 3.0));
  CHECK(gt[0].velocity == Vec3(0.1, 0.2, 0.3));
  CHECK(gt[0].gyro_bias == Vec3(0.01, 0.02, 0.03));
  CHECK(gt[0].accel_bias == Vec3(0.04, 0.05, 0.06));

  // Quaternion with norm 2 is rejected.
  const std::string bad_q = tmp.file("badq.csv");
  write_file(bad_q,
             "1000000000,0,0,0,2.0,0,0,0,0,0,0,0,0,0,0,0,0\n");
  try {
    load_euroc_groundtruth(bad_q);
    FAIL("expected InvalidInput");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidInput);
  }

  // Slightly off-norm quaternion is accepted and renormalized.
  const std::string near_q = tmp.file("nearq.csv");
  write_file(near_q,
             "1000000000,0,0,0,1.0001,0,0,0,0,0,0,0,0,0,0,0,0\n");
  const auto near = load_euroc_groundtruth(near_q);
  CHECK(near[0].orientation.quaternion().norm() ==
        Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("csv roundtrip reproduces numeric fields exactly") {
  TempDir tmp;
  auto rng = testutil::make_rng(111);

  std::vector<EurocImuRecord> imu;
  int64_t t = 1403636579758555392ll;
  for (int i = 0; i < 20; ++i) {
    EurocImuRecord r;
    r.timestamp_ns = t;
    t += 5000000 + (i % 3);
    r.angular_velocity = testutil::random_vec3(rng, 0.3);
    r.acceleration = testutil::random_vec3(rng, 5.0);
    imu.push_back(r);
  }
  const std::string path = tmp.file("imu_rt.csv");
  write_euroc_imu_csv(path, imu);
  const auto parsed = load_euroc_imu_records(path);
  REQUIRE(parsed.size() == imu.size());
  for (size_t i = 0; i < imu.size(); ++i) {
    CHECK(parsed[i].timestamp_ns == imu[i].timestamp_ns);
    CHECK(parsed[i].angular_velocity == imu[i].angular_velocity);
    CHECK(parsed[i].acceleration == imu[i].acceleration);
  }

  std::vector<EurocGtRecord> gt;
  t = 1403636579758555392ll;
  for (int i = 0; i < 10; ++i) {
    EurocGtRecord r;
    r.timestamp_ns = t;
    t += 50000000;
    r.position = testutil::random_vec3(rng, 3.0);
    r.orientation = testutil::random_rotation(rng);
    r.velocity = testutil::random_vec3(rng, 1.0);
    r.gyro_bias = testutil::random_vec3(rng, 0.01);
    r.accel_bias = testutil::random_vec3(rng, 0.05);
    gt.push_back(r);
  }
  const std::string gt_path = tmp.file("gt_rt.csv");
  write_euroc_gt_csv(gt_path, gt);
  const auto gt_parsed = load_euroc_groundtruth(gt_path);
  REQUIRE(gt_parsed.size() == gt.size());
  for (size_t i = 0; i < gt.size(); ++i) {
    CHECK(gt_parsed[i].timestamp_ns == gt[i].timestamp_ns);
    CHECK(gt_parsed[i].position == gt[i].position);
    CHECK(gt_parsed[i].velocity == gt[i].velocity);
    CHECK(gt_parsed[i].gyro_bias == gt[i].gyro_bias);
    CHECK(gt_parsed[i].accel_bias == gt[i].accel_bias);
    CHECK(geodesic_angle(gt_parsed[i].orientation, gt[i].orientation) < 1e-15);
  }
}

TEST_CASE("calibration roundtrip") {
  TempDir tmp;
  CalibrationConfig calib;
  calib.rig.fx = 458.654;
  calib.rig.fy = 457.296;
  calib.rig.cx = 367.215;
  calib.rig.cy = 248.375;
  calib.rig.baseline = 0.110074;
  calib.extrinsics.left = RigidTransform(
      Rotation::exp(Vec3(0.01, -0.02, 1.5)), Vec3(-0.021, -0.064, 0.009));
  calib.extrinsics.right =
      calib.extrinsics.left *
      RigidTransform(Rotation(), Vec3(calib.rig.baseline, 0.0, 0.0));
  calib.noise.gyro_noise_density = 1.6968e-4;
  calib.noise.accel_noise_density = 2.0e-3;

  const std::string path = tmp.file("calib.txt");
  save_calibration(path, calib);
  const CalibrationConfig loaded = load_calibration(path);
  CHECK(loaded.rig.fx == calib.rig.fx);
  CHECK(loaded.rig.baseline == calib.rig.baseline);
  CHECK(geodesic_angle(loaded.extrinsics.left.rotation,
                       calib.extrinsics.left.rotation) < 1e-15);
  CHECK((loaded.extrinsics.right.translation -
         calib.extrinsics.right.translation)
            .norm() < 1e-15);
  CHECK(loaded.noise.gyro_noise_density == calib.noise.gyro_noise_density);

  const std::string bad = tmp.file("bad_calib.txt");
  write_file(bad, "fx 458\nnot_a_key 1\n");
  CHECK_THROWS_AS(load_calibration(bad), Error);
}

TEST_CASE("euroc fixture end-to-end initialization") {
  TempDir tmp;
  SyntheticSpec spec;
  spec.kind = TrajectoryKind::SinusoidalRotation;
  spec.duration = 6.0;
  spec.imu_rate = 200.0;
  spec.bias.gyro = Vec3(0.003, -0.002, 0.004);
  spec.bias.accel = Vec3(0.02, -0.01, 0.015);
  spec.imu_noise_scale = 1.0;  // realistic sensor noise
  spec.seed = 12;
  const SyntheticSequence seq = generate_synthetic(spec);
  write_euroc_fixture(tmp.path.string(), seq);

  CalibrationConfig calib;
  calib.rig = seq.rig;
  calib.extrinsics = seq.extrinsics;
  calib.noise = spec.noise;
  const std::string calib_path = tmp.file("calib.txt");
  save_calibration(calib_path, calib);

  const EurocSequence loaded =
      load_euroc_sequence(tmp.path.string(), calib_path);
  CHECK(loaded.imu.size() == seq.imu.size());
  REQUIRE(loaded.gt.size() >= 2);

  EurocWindowOptions opt;
  opt.visual.pixel_sigma = 1.0;
  opt.visual.bearing_sigma = 1.0 / calib.rig.fx;
  opt.seed = 5;
  const WindowedDataset ds = make_euroc_dataset(loaded, opt);
  REQUIRE(static_cast<int>(ds.keyframe_times.size()) >= 10);

  InitConfig cfg;
  cfg.noise = calib.noise;
  cfg.ebar_threshold = 5e-3;  // pixel-noise regime
  const InitWindow window = ds.make_window(0, 10);
  const InitResult res = run_initialization(window, cfg);
  CHECK(res.success);
  CHECK((res.bias.gyro - spec.bias.gyro).norm() < 0.02);

  // Ground-truth accessors line up with the generator.
  const auto gt_poses = ds.ground_truth_poses(0, 10);
  REQUIRE(gt_poses.size() == 10);
  for (size_t k = 0; k < gt_poses.size(); ++k) {
    CHECK((gt_poses[k].translation -
           seq.keyframes[k].pose_wb.translation)
              .norm() < 5e-4);
  }
  CHECK((ds.ground_truth_gyro_bias(0, 10) - spec.bias.gyro).norm() < 1e-12);
  CHECK(ds.mean_angular_rate_deg(0, 10) > 0.0);
}

TEST_CASE("missing dataset files") {
  TempDir tmp;
  CHECK_THROWS_AS(load_euroc_sequence(tmp.path.string(), tmp.file("c.txt")),
                  Error);
}
