#include <cmath>
#include <fstream>

#include "doctest.h"
#include "rprloc/evalkit.hpp"
#include "test_support.hpp"

using namespace rprloc;
using rprloc::testing::TempDir;

namespace {

BBox3D box(double z0, double y0, double x0, double z1, double y1, double x1) {
  return BBox3D::from_corners({z0, y0, x0}, {z1, y1, x1});
}

}  // namespace

TEST_CASE("iou3d examples") {
  const BBox3D a = box(0, 0, 0, 10, 10, 10);
  CHECK(iou3d(a, a) == 1.0);
  CHECK(iou3d(a, box(11, 0, 0, 12, 10, 10)) == 0.0);
  CHECK(iou3d(a, box(10, 0, 0, 12, 10, 10)) == 0.0);
  // Overlap 5^3 = 125 over union 2000 - 125 = 1875.
  CHECK(iou3d(a, box(5, 5, 5, 15, 15, 15)) == doctest::Approx(125.0 / 1875.0).epsilon(1e-12));
  CHECK(iou3d(a, box(5, 5, 5, 15, 15, 15)) == doctest::Approx(0.0667).epsilon(1e-3));
  const BBox3D flat = box(1, 1, 1, 1, 2, 3);
  CHECK(iou3d(flat, flat) == 1.0);
  CHECK(iou3d(flat, box(1, 1, 1, 1, 2, 4)) == 0.0);
}

TEST_CASE("awd examples") {
  const BBox3D a = box(0, 0, 0, 10, 10, 10);
  CHECK(awd(a, a) == 0.0);
  // Faces offset by 1..6 mm.
  CHECK(awd(a, box(1, 3, 5, 12, 14, 16)) == 3.5);
}

TEST_CASE("awd is symmetric and translation invariant") {
  Rng rng(3);
  std::uniform_real_distribution<double> u(-50, 50);
  std::uniform_real_distribution<double> ext(0, 30);
  auto rand_box = [&] {
    const Vec3 lo{u(rng), u(rng), u(rng)};
    return BBox3D::from_corners(lo, lo + Vec3{ext(rng), ext(rng), ext(rng)});
  };
  for (int i = 0; i < 1000; ++i) {
    const BBox3D a = rand_box();
    const BBox3D b = rand_box();
    const Vec3 t{u(rng), u(rng), u(rng)};
    CHECK(awd(a, b) == doctest::Approx(awd(b, a)).epsilon(1e-12));
    const BBox3D at{a.min_corner + t, a.max_corner + t};
    const BBox3D bt{b.min_corner + t, b.max_corner + t};
    CHECK(awd(at, bt) == doctest::Approx(awd(a, b)).epsilon(1e-9));
  }
}

TEST_CASE("mask_bbox is the tight box in mm") {
  Mask m({6, 6, 6});
  m.set(1, 2, 3);
  m.set(4, 5, 0);
  CHECK(mask_bbox(m, {2, 1, 0.5}) == box(2, 2, 0, 8, 5, 1.5));
}

TEST_CASE("evaluate_run scores, flags and averages") {
  GroundTruthBoxes truth;
  std::vector<Prediction> perfect;
  for (int c = 0; c < 8; ++c) {
    const std::string id = "case_" + std::to_string(c);
    truth[id]["liver"] = box(c, 0, 0, c + 10, 10, 10);
    perfect.push_back({"ours", "liver", id, truth[id]["liver"], 0.5, ""});
  }
  const EvalReport ok = evaluate_run(perfect, truth);
  for (const auto& r : ok.records) {
    CHECK(r.iou == 1.0);
    CHECK(r.awd == 0.0);
  }
  CHECK(ok.flags.empty());

  std::vector<Prediction> partial;
  for (int c = 0; c < 8; ++c) {
    const std::string id = "case_" + std::to_string(c);
    if (c == 3) continue;
    const BBox3D t = truth[id]["liver"];
    partial.push_back({"ours", "liver", id, BBox3D{t.min_corner, t.max_corner + Vec3{c * 1.0, 0, 0}}, 0.1 * c, ""});
  }
  const EvalReport rep = evaluate_run(partial, truth, "abc");
  CHECK(rep.flags.size() == 1);
  CHECK(rep.records.size() == 7);
  double iou = 0.0;
  double dist = 0.0;
  for (const auto& r : rep.records) {
    iou += r.iou;
    dist += r.awd;
    CHECK(r.config_hash == "abc");
  }
  REQUIRE(rep.summary.size() == 2);
  const SummaryRow& row = rep.summary[0];
  CHECK(row.organ == "liver");
  CHECK(row.n == 7);
  CHECK(row.missing == 1);
  CHECK(row.mean_iou == doctest::Approx(iou / 7).epsilon(1e-12));
  CHECK(row.mean_awd == doctest::Approx(dist / 7).epsilon(1e-12));
  CHECK(rep.summary[1].organ == "mean");
  CHECK(rep.summary[1].mean_iou == doctest::Approx(iou / 7).epsilon(1e-12));
}

TEST_CASE("failed predictions are flagged with their error") {
  GroundTruthBoxes truth;
  truth["a"]["kidney"] = box(0, 0, 0, 1, 1, 1);
  const EvalReport rep = evaluate_run({{"fm_mse", "kidney", "a", std::nullopt, 0.0, "no autoencoder"}}, truth);
  REQUIRE(rep.flags.size() == 1);
  CHECK(rep.flags[0].find("no autoencoder") != std::string::npos);
  CHECK(rep.summary[0].n == 0);
}

TEST_CASE("summary csv and table rendering") {
  TempDir dir("eval");
  const std::vector<SummaryRow> rows{{"ours", "liver", 2, 0, 0.5, 1.25, 0.1}, {"ours", "mean", 2, 0, 0.5, 1.25, 0.1}};
  write_summary_csv(dir.path() / "s.csv", rows);
  std::ifstream in(dir.path() / "s.csv");
  std::string header;
  std::string line;
  std::getline(in, header);
  std::getline(in, line);
  CHECK(header == "method,organ,n,missing,iou,awd_mm,time_s");
  CHECK(line == "ours,liver,2,0,0.500000,1.250000,0.100000");
  const std::string text = render_table("T", rows, true);
  CHECK(text.find("50.0 / 1.25") != std::string::npos);
  CHECK(text.find("time_s") != std::string::npos);
}
