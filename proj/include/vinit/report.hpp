#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "vinit/metrics.hpp"
#include "vinit/pipeline.hpp"

namespace vinit {

using Json = nlohmann::ordered_json;

inline constexpr int kReportSchemaVersion = 1;

// One row per initialization segment. Metrics against ground truth are
// NaN when no ground truth is available; the W/ columns are NaN when
// VI-BA did not run.
struct SegmentReport {
  int index = 0;
  double start_time = 0.0;
  bool completed = false;
  bool success = false;
  bool viba_ran = false;
  std::string error;

  double e_bar = std::nan("");
  Vec3 bias_gyro = Vec3::Zero();
  double bias_gyro_error = std::nan("");
  double gravity_error_rad = std::nan("");
  double ate_wo_viba = std::nan("");
  double rre_wo_viba = std::nan("");
  double ate_w_viba = std::nan("");
  double rre_w_viba = std::nan("");
  double mean_rate_deg = std::nan("");
  std::string bucket = "unknown";
};

struct RunReport {
  std::string command;  // "synth" or "euroc"
  std::string name;     // row label in merged tables
  uint64_t seed = 0;
  Json config;          // echo of the effective configuration
  std::vector<SegmentReport> segments;
};

namespace detail {

inline Json to_json(const SegmentReport& s) {
  Json j;
  j["type"] = "segment";
  j["index"] = s.index;
  j["start_time"] = s.start_time;
  j["completed"] = s.completed;
  j["success"] = s.success;
  j["viba_ran"] = s.viba_ran;
  j["error"] = s.error;
  j["e_bar"] = s.e_bar;
  j["bias_gyro"] = {s.bias_gyro.x(), s.bias_gyro.y(), s.bias_gyro.z()};
  j["bias_gyro_error"] = s.bias_gyro_error;
  j["gravity_error_rad"] = s.gravity_error_rad;
  j["ate_wo_viba"] = s.ate_wo_viba;
  j["rre_wo_viba"] = s.rre_wo_viba;
  j["ate_w_viba"] = s.ate_w_viba;
  j["rre_w_viba"] = s.rre_w_viba;
  j["mean_rate_deg"] = s.mean_rate_deg;
  j["bucket"] = s.bucket;
  return j;
}

inline double num_or_nan(const Json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nan("");
  return j[key].get<double>();
}

inline SegmentReport segment_from_json(const Json& j) {
  SegmentReport s;
  s.index = j.at("index").get<int>();
  s.start_time = j.at("start_time").get<double>();
  s.completed = j.at("completed").get<bool>();
  s.success = j.at("success").get<bool>();
  s.viba_ran = j.at("viba_ran").get<bool>();
  s.error = j.at("error").get<std::string>();
  s.e_bar = num_or_nan(j, "e_bar");
  const auto& b = j.at("bias_gyro");
  s.bias_gyro = Vec3(b[0].get<double>(), b[1].get<double>(), b[2].get<double>());
  s.bias_gyro_error = num_or_nan(j, "bias_gyro_error");
  s.gravity_error_rad = num_or_nan(j, "gravity_error_rad");
  s.ate_wo_viba = num_or_nan(j, "ate_wo_viba");
  s.rre_wo_viba = num_or_nan(j, "rre_wo_viba");
  s.ate_w_viba = num_or_nan(j, "ate_w_viba");
  s.rre_w_viba = num_or_nan(j, "rre_w_viba");
  s.mean_rate_deg = num_or_nan(j, "mean_rate_deg");
  s.bucket = j.at("bucket").get<std::string>();
  return s;
}

}  // namespace detail

// Aggregate means recomputable from the segment rows (see
// compute_aggregates); per-bucket rows mirror the robustness study split.
struct AggregateRow {
  std::string label;
  int segments = 0;
  int successes = 0;
  double mean_ate_wo = std::nan("");
  double mean_rre_wo = std::nan("");
  double mean_ate_w = std::nan("");
  double mean_rre_w = std::nan("");
};

inline AggregateRow aggregate_rows(const std::string& label,
                                   const std::vector<const SegmentReport*>& rows) {
  AggregateRow agg;
  agg.label = label;
  double sa = 0, sr = 0, sa2 = 0, sr2 = 0;
  int n_wo = 0, n_w = 0;
  for (const SegmentReport* s : rows) {
    ++agg.segments;
    if (s->success) ++agg.successes;
    if (std::isfinite(s->ate_wo_viba) && std::isfinite(s->rre_wo_viba)) {
      sa += s->ate_wo_viba;
      sr += s->rre_wo_viba;
      ++n_wo;
    }
    if (std::isfinite(s->ate_w_viba) && std::isfinite(s->rre_w_viba)) {
      sa2 += s->ate_w_viba;
      sr2 += s->rre_w_viba;
      ++n_w;
    }
  }
  if (n_wo > 0) {
    agg.mean_ate_wo = sa / n_wo;
    agg.mean_rre_wo = sr / n_wo;
  }
  if (n_w > 0) {
    agg.mean_ate_w = sa2 / n_w;
    agg.mean_rre_w = sr2 / n_w;
  }
  return agg;
}

inline std::vector<AggregateRow> compute_aggregates(
    const std::vector<SegmentReport>& segments) {
  std::vector<const SegmentReport*> all;
  std::map<std::string, std::vector<const SegmentReport*>> buckets;
  for (const SegmentReport& s : segments) {
    all.push_back(&s);
    buckets[s.bucket].push_back(&s);
  }
  std::vector<AggregateRow> rows;
  rows.push_back(aggregate_rows("all", all));
  for (const char* b : {"below-range", "low", "medium", "high"}) {
    if (buckets.count(b)) rows.push_back(aggregate_rows(b, buckets[b]));
  }
  return rows;
}

// Line-delimited JSON: a header record, one record per segment, then the
// aggregate records.
inline void write_report(const std::string& path, const RunReport& report) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::ParseError, "cannot write " + path);
  Json header;
  header["type"] = "header";
  header["schema"] = kReportSchemaVersion;
  header["command"] = report.command;
  header["name"] = report.name;
  header["seed"] = report.seed;
  header["config"] = report.config;
  out << header.dump() << '\n';
  for (const SegmentReport& s : report.segments) {
    out << detail::to_json(s).dump() << '\n';
  }
  for (const AggregateRow& agg : compute_aggregates(report.segments)) {
    Json j;
    j["type"] = "aggregate";
    j["label"] = agg.label;
    j["segments"] = agg.segments;
    j["successes"] = agg.successes;
    j["mean_ate_wo_viba"] = agg.mean_ate_wo;
    j["mean_rre_wo_viba"] = agg.mean_rre_wo;
    j["mean_ate_w_viba"] = agg.mean_ate_w;
    j["mean_rre_w_viba"] = agg.mean_rre_w;
    out << j.dump() << '\n';
  }
}

inline RunReport read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open " + path);
  RunReport report;
  std::string line;
  bool have_header = false;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const std::exception& e) {
      throw Error(ErrorCode::ParseError,
                  path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
    const std::string type = j.value("type", "");
    if (type == "header") {
      if (j.value("schema", -1) != kReportSchemaVersion) {
        throw Error(ErrorCode::InvalidInput,
                    path + ": unsupported report schema");
      }
      report.command = j.value("command", "");
      report.name = j.value("name", "");
      report.seed = j.value("seed", 0ull);
      report.config = j.value("config", Json::object());
      have_header = true;
    } else if (type == "segment") {
      report.segments.push_back(detail::segment_from_json(j));
    } else if (type == "aggregate") {
      // Recomputed on demand; the stored rows are for human inspection.
    } else {
      throw Error(ErrorCode::ParseError,
                  path + ": line " + std::to_string(line_no) +
                      ": unknown record type '" + type + "'");
    }
  }
  if (!have_header) {
    throw Error(ErrorCode::InvalidInput, path + ": missing header record");
  }
  return report;
}

// Builds the per-segment report rows for a finished sweep, computing
// ATE/RRE against the dataset's ground truth when available.
inline std::vector<SegmentReport> summarize_sweep(
    const std::vector<SegmentResult>& segments, const WindowedDataset& dataset,
    const InitConfig& cfg) {
  std::vector<SegmentReport> rows;
  int kf_index = 0;
  // Recover each segment's first-keyframe index from its start time.
  auto first_index = [&](double start_time) {
    while (kf_index + 1 < static_cast<int>(dataset.keyframe_times.size()) &&
           dataset.keyframe_times[kf_index] < start_time - 1e-9) {
      ++kf_index;
    }
    return kf_index;
  };

  for (const SegmentResult& seg : segments) {
    SegmentReport row;
    row.index = seg.segment_index;
    row.start_time = seg.start_time;
    row.completed = seg.completed;
    row.error = seg.error;
    const int first = first_index(seg.start_time);

    if (dataset.mean_angular_rate_deg) {
      row.mean_rate_deg = dataset.mean_angular_rate_deg(first, cfg.window_size);
      row.bucket = to_string(angular_velocity_bucket(row.mean_rate_deg));
    }
    if (!seg.completed) {
      rows.push_back(row);
      continue;
    }

    const InitResult& res = seg.result;
    row.success = res.success;
    row.viba_ran = res.viba_ran;
    row.e_bar = res.nec_report.e_bar;
    row.bias_gyro = res.bias.gyro;

    // Both world conventions here are z-up with gravity along -z.
    const Vec3 g_ref(0.0, 0.0, -cfg.gravity_magnitude);
    row.gravity_error_rad = std::acos(std::clamp(
        res.gravity.g_world().normalized().dot(g_ref.normalized()), -1.0, 1.0));

    if (dataset.ground_truth_gyro_bias) {
      row.bias_gyro_error =
          (res.bias.gyro - dataset.ground_truth_gyro_bias(first, cfg.window_size))
              .norm();
    }
    if (dataset.ground_truth_poses) {
      TrajectoryPair pair;
      pair.ground_truth = dataset.ground_truth_poses(first, cfg.window_size);
      for (const KeyframeState& kf : res.step3_keyframes) {
        pair.estimated.push_back(kf.pose_wb);
      }
      if (pair.estimated.size() == pair.ground_truth.size()) {
        row.ate_wo_viba = ate_rmse(pair);
        row.rre_wo_viba = rre_rmse(pair);
      }
      if (res.viba_ran) {
        pair.estimated.clear();
        for (const KeyframeState& kf : res.keyframes) {
          pair.estimated.push_back(kf.pose_wb);
        }
        row.ate_w_viba = ate_rmse(pair);
        row.rre_w_viba = rre_rmse(pair);
      }
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace vinit
