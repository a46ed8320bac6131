#include "rprloc/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "rprloc/errors.hpp"
#include "rprloc/locator.hpp"

namespace rprloc {

namespace {

std::string fmt(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

}  // namespace

double iou3d(const BBox3D& a, const BBox3D& b) {
  double inter = 1.0;
  for (int ax = 0; ax < 3; ++ax) {
    const double lo = std::max(a.min_corner[ax], b.min_corner[ax]);
    const double hi = std::min(a.max_corner[ax], b.max_corner[ax]);
    inter *= std::max(0.0, hi - lo);
  }
  const double uni = a.volume() + b.volume() - inter;
  if (uni <= 0.0) return a == b ? 1.0 : 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double awd(const BBox3D& a, const BBox3D& b) {
  double sum = 0.0;
  for (int ax = 0; ax < 3; ++ax) {
    sum += std::fabs(a.min_corner[ax] - b.min_corner[ax]);
    sum += std::fabs(a.max_corner[ax] - b.max_corner[ax]);
  }
  return sum / 6.0;
}

BBox3D mask_bbox(const Mask& mask, const Vec3& spacing) { return assemble_bbox(extract_diagonal_points(mask, spacing)); }

EvalReport evaluate_run(const std::vector<Prediction>& predictions, const GroundTruthBoxes& truth,
                        const std::string& config_hash) {
  EvalReport report;
  std::vector<std::string> methods;
  std::set<std::string> organs;
  std::map<std::tuple<std::string, std::string, std::string>, const Prediction*> index;
  for (const Prediction& p : predictions) {
    if (std::find(methods.begin(), methods.end(), p.method) == methods.end()) methods.push_back(p.method);
    organs.insert(p.organ);
    index[{p.method, p.organ, p.case_id}] = &p;
  }
  for (const auto& [case_id, boxes] : truth)
    for (const auto& [organ, box] : boxes) organs.insert(organ);

  for (const std::string& method : methods) {
    SummaryRow overall{method, "mean"};
    double overall_iou = 0.0;
    double overall_awd = 0.0;
    double overall_time = 0.0;
    for (const std::string& organ : organs) {
      SummaryRow row{method, organ};
      for (const auto& [case_id, boxes] : truth) {
        const auto gt = boxes.find(organ);
        if (gt == boxes.end()) continue;
        const auto it = index.find({method, organ, case_id});
        if (it == index.end() || !it->second->box) {
          ++row.missing;
          std::string why = it == index.end() ? "absent" : "failed";
          if (it != index.end() && !it->second->error.empty()) why += ": " + it->second->error;
          report.flags.push_back(method + " " + organ + " " + case_id + " " + why);
          continue;
        }
        const Prediction& p = *it->second;
        EvalRecord rec{method, organ, case_id, iou3d(*p.box, gt->second), awd(*p.box, gt->second), p.time_s, config_hash};
        row.mean_iou += rec.iou;
        row.mean_awd += rec.awd;
        row.mean_time_s += rec.time_s;
        ++row.n;
        report.records.push_back(rec);
      }
      overall_iou += row.mean_iou;
      overall_awd += row.mean_awd;
      overall_time += row.mean_time_s;
      overall.n += row.n;
      overall.missing += row.missing;
      if (row.n > 0) {
        row.mean_iou /= static_cast<double>(row.n);
        row.mean_awd /= static_cast<double>(row.n);
        row.mean_time_s /= static_cast<double>(row.n);
      }
      report.summary.push_back(row);
    }
    if (overall.n > 0) {
      overall.mean_iou = overall_iou / static_cast<double>(overall.n);
      overall.mean_awd = overall_awd / static_cast<double>(overall.n);
      overall.mean_time_s = overall_time / static_cast<double>(overall.n);
    }
    report.summary.push_back(overall);
  }
  return report;
}

void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << "method,organ,n,missing,iou,awd_mm,time_s\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.organ << ',' << r.n << ',' << r.missing << ',' << fmt(r.mean_iou) << ','
        << fmt(r.mean_awd) << ',' << fmt(r.mean_time_s) << '\n';
  }
}

void write_records_csv(const std::filesystem::path& path, const std::vector<EvalRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << "method,organ,case,iou,awd_mm,time_s,config_hash\n";
  for (const auto& r : records) {
    out << r.method << ',' << r.organ << ',' << r.case_id << ',' << fmt(r.iou) << ',' << fmt(r.awd) << ','
        << fmt(r.time_s) << ',' << r.config_hash << '\n';
  }
}

std::string render_table(const std::string& title, const std::vector<SummaryRow>& rows, bool with_time) {
  std::vector<std::string> methods;
  std::vector<std::string> organs;
  for (const auto& r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    if (std::find(organs.begin(), organs.end(), r.organ) == organs.end()) organs.push_back(r.organ);
  }
  // "mean" goes last.
  std::stable_partition(organs.begin(), organs.end(), [](const std::string& o) { return o != "mean"; });

  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"method"};
  for (const auto& o : organs) header.push_back(o + " IoU%/AWD");
  if (with_time) header.push_back("time_s");
  cells.push_back(header);
  for (const auto& m : methods) {
    std::vector<std::string> line{m};
    double time = 0.0;
    for (const auto& o : organs) {
      const auto it = std::find_if(rows.begin(), rows.end(), [&](const SummaryRow& r) { return r.method == m && r.organ == o; });
      if (it == rows.end() || it->n == 0) {
        line.push_back("-");
        continue;
      }
      line.push_back(fmt(100.0 * it->mean_iou, 1) + " / " + fmt(it->mean_awd, 2));
      if (o == "mean") time = it->mean_time_s;
    }
    if (with_time) line.push_back(fmt(time, 3));
    cells.push_back(line);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells)
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  std::ostringstream os;
  os << title << '\n';
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t c = 0; c < cells[i].size(); ++c) {
      os << (c == 0 ? "" : "  ") << cells[i][c] << std::string(width[c] - cells[i][c].size(), ' ');
    }
    os << '\n';
    if (i == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      os << std::string(total - 2, '-') << '\n';
    }
  }
  return os.str();
}

}  // namespace rprloc
