#pragma once

// Box metrics and summary tables.
//
// AWD (absolute wall distance) is the mean over the six axis-aligned faces of
// the absolute difference between corresponding face coordinates, in mm:
//   awd(a, b) = (1/6) * sum_axis (|a.min - b.min| + |a.max - b.max|)
// It is defined only in awd() so an alternative definition swaps in here.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rprloc/volgrid.hpp"

namespace rprloc {

// Continuous-coordinate IoU. Two zero-volume boxes score 1 when equal and 0
// otherwise.
double iou3d(const BBox3D& a, const BBox3D& b);
double awd(const BBox3D& a, const BBox3D& b);

// Tight box of a mask through its diagonal corners, world mm.
BBox3D mask_bbox(const Mask& mask, const Vec3& spacing);

struct Prediction {
  std::string method;
  std::string organ;
  std::string case_id;
  std::optional<BBox3D> box;  // empty when the method failed on this case
  double time_s = 0.0;
  std::string error;
};

struct EvalRecord {
  std::string method;
  std::string organ;
  std::string case_id;
  double iou = 0.0;
  double awd = 0.0;
  double time_s = 0.0;
  std::string config_hash;
};

struct SummaryRow {
  std::string method;
  std::string organ;  // "mean" for the across-organ row
  std::size_t n = 0;
  std::size_t missing = 0;
  double mean_iou = 0.0;
  double mean_awd = 0.0;
  double mean_time_s = 0.0;
};

struct EvalReport {
  std::vector<EvalRecord> records;
  std::vector<SummaryRow> summary;   // method order of first appearance, organs sorted, then "mean"
  std::vector<std::string> flags;    // one line per absent or failed prediction
};

using GroundTruthBoxes = std::map<std::string, std::map<std::string, BBox3D>>;  // case -> organ -> box

// Every (method, organ) seen in the predictions is scored against every
// ground-truth case; absent or failed predictions are flagged and excluded.
EvalReport evaluate_run(const std::vector<Prediction>& predictions, const GroundTruthBoxes& truth,
                        const std::string& config_hash = "");

// Long-format summary: method,organ,n,missing,iou,awd,time_s.
void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows);
void write_records_csv(const std::filesystem::path& path, const std::vector<EvalRecord>& records);

// Aligned text: one row per method, "IoU% / AWD" per organ and the mean,
// plus a time column when with_time is set.
std::string render_table(const std::string& title, const std::vector<SummaryRow>& rows, bool with_time);

}  // namespace rprloc
