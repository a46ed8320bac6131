#include <cmath>

#include "doctest.h"
#include "rprloc/errors.hpp"
#include "rprloc/evalkit.hpp"
#include "rprloc/locator.hpp"
#include "rprloc/phantom.hpp"
#include "test_support.hpp"

using namespace rprloc;
using rprloc::testing::brute_force_bbox;
using rprloc::testing::brute_force_box;
using rprloc::testing::PerfectProjection;
using rprloc::testing::random_volume;

namespace {

Mask cube_mask(Shape3 s, int lo, int hi) {
  Mask m(s);
  for (int z = lo; z <= hi; ++z)
    for (int y = lo; y <= hi; ++y)
      for (int x = lo; x <= hi; ++x) m.set(z, y, x);
  return m;
}

PnetArchitecture micro_arch() {
  PnetArchitecture a;
  a.channels = {4, 8};
  a.convs_per_block = 1;
  a.fc_hidden = 8;
  return a;
}

// Volume with one bright voxel as a landmark; the stub only needs geometry.
struct StubScene {
  Volume test = random_volume({20, 24, 28}, 1, {2, 2, 2});
  Volume support = random_volume({20, 24, 28}, 2, {2, 2, 2});
  Mask test_mask = cube_mask({20, 24, 28}, 6, 12);
  Mask support_mask = cube_mask({20, 24, 28}, 4, 9);
  PerfectProjection coarse{Stage::kCoarse, {4, 4, 4}, test, test_mask, support, support_mask};
  PerfectProjection fine{Stage::kFine, {4, 4, 4}, test, test_mask, support, support_mask};
};

}  // namespace

TEST_CASE("extreme points of a cube") {
  const Mask m = cube_mask({8, 8, 8}, 2, 4);
  const ExtremePointSet p = extract_extreme_points(m, {1, 1, 1});
  CHECK(p.z_min().z == 2);
  CHECK(p.z_max().z == 4);
  CHECK(p.x_min().x == 2);
  CHECK(p.x_max().x == 4);
  CHECK(p.y_min().y == 2);
  CHECK(p.y_max().y == 4);
  // The centroid projection (3, 3) is on every face, so it wins the tie.
  CHECK(p.z_min() == Vec3{2, 3, 3});
  const BBox3D box = assemble_bbox(p);
  CHECK(box == BBox3D::from_corners({2, 2, 2}, {4, 4, 4}));
}

TEST_CASE("single-voxel mask") {
  Mask m({5, 6, 7});
  m.set(1, 2, 3);
  const Vec3 e{2, 3, 0.5};
  const ExtremePointSet p = extract_extreme_points(m, e);
  for (const Vec3& q : p.points) CHECK(q == Vec3{2, 6, 1.5});
  const DiagonalPair d = extract_diagonal_points(m, e);
  CHECK(d.d_min == d.d_max);
  const BBox3D box = assemble_bbox(p);
  CHECK(box.volume() == 0.0);
  CHECK(box.min_corner == box.max_corner);
}

TEST_CASE("sphere extreme points sit on the tangent points") {
  const Shape3 s{21, 21, 21};
  Mask m(s);
  const double r = 7.3;
  for (int z = 0; z < 21; ++z)
    for (int y = 0; y < 21; ++y)
      for (int x = 0; x < 21; ++x)
        if ((z - 10) * (z - 10) + (y - 10) * (y - 10) + (x - 10) * (x - 10) <= r * r) m.set(z, y, x);
  const ExtremePointSet p = extract_extreme_points(m, {1, 1, 1});
  const std::array<Vec3, 6> tangent{Vec3{10 - r, 10, 10}, Vec3{10 + r, 10, 10}, Vec3{10, 10, 10 - r},
                                    Vec3{10, 10, 10 + r}, Vec3{10, 10 - r, 10}, Vec3{10, 10 + r, 10}};
  for (int i = 0; i < 6; ++i)
    for (int a = 0; a < 3; ++a) CHECK(std::fabs(p.points[i][a] - tangent[i][a]) <= 1.0);
}

TEST_CASE("diagonal points of an L-shaped mask lie off the mask") {
  Mask m({6, 6, 6});
  for (int x = 0; x < 5; ++x) m.set(1, 1, x);
  for (int y = 1; y < 5; ++y) m.set(1, y, 0);
  m.set(3, 1, 0);
  const DiagonalPair d = extract_diagonal_points(m, {1, 1, 1});
  CHECK(d.d_min == Vec3{1, 1, 0});
  CHECK(d.d_max == Vec3{3, 4, 4});
  CHECK_FALSE(m.at(3, 4, 4));
  CHECK(assemble_bbox(d) == brute_force_bbox(m, {1, 1, 1}));
}

TEST_CASE("extreme points reproduce the tight box of random masks") {
  Rng rng(11);
  std::uniform_int_distribution<int> dim(1, 9);
  std::bernoulli_distribution on(0.15);
  std::uniform_real_distribution<double> sp(0.5, 3.0);
  for (int t = 0; t < 100; ++t) {
    Mask m({dim(rng), dim(rng), dim(rng)});
    for (auto& v : m.data) v = on(rng);
    if (m.empty()) m.data[0] = 1;
    const Vec3 e{sp(rng), sp(rng), sp(rng)};
    CHECK(assemble_bbox(extract_extreme_points(m, e)) == brute_force_bbox(m, e));
    CHECK(assemble_bbox(extract_diagonal_points(m, e)) == brute_force_bbox(m, e));
  }
}

TEST_CASE("empty masks and inconsistent point sets are rejected") {
  CHECK_THROWS_AS(extract_extreme_points(Mask({3, 3, 3}), {1, 1, 1}), Error);
  ExtremePointSet bad;
  bad.points[0] = {5, 0, 0};
  bad.points[1] = {1, 0, 0};
  CHECK_THROWS_AS(assemble_bbox(bad), Error);
}

TEST_CASE("a support patch equal to the query patch leaves the agent in place") {
  const ProjectionModel m(Stage::kCoarse, 100.0, {8, 8, 8}, {}, micro_arch(), 4);
  const Volume v = random_volume({16, 20, 24}, 5, {2, 2, 2});
  const VoxelPoint here{{7, 9, 11}};
  CHECK(locate_step(m, v, here, crop_patch(v, here, {8, 8, 8})) == here);
}

TEST_CASE("a step moves less than the radius per axis") {
  const ProjectionModel m(Stage::kFine, 10.0, {8, 8, 8}, {}, micro_arch(), 6);
  const Volume v = random_volume({40, 40, 40}, 7, {1, 1, 1});
  Rng rng(8);
  for (int i = 0; i < 20; ++i) {
    const VoxelPoint start = sample_init_position(v, rng);
    const Patch support = crop_patch(v, sample_init_position(v, rng), {8, 8, 8});
    const VoxelPoint next = locate_step(m, v, start, support);
    for (int a = 0; a < 3; ++a) CHECK(std::fabs(next.index[a] - start.index[a]) < 10.0);
  }
}

TEST_CASE("perfect projection lands on the landmark in one step") {
  StubScene s;
  // Support voxel (4, 9, 6) maps to (6, 6 + 5/5*6, 6 + 2/5*6) = (6, 12, 8.4).
  const Patch support = crop_patch(s.support, {{4, 9, 6}}, {4, 4, 4});
  const VoxelPoint next = locate_step(s.coarse, s.test, {{0, 23, 0}}, support);
  CHECK(next.index.z == doctest::Approx(6.0));
  CHECK(next.index.y == doctest::Approx(12.0));
  CHECK(next.index.x == doctest::Approx(8.4));
}

TEST_CASE("trajectory lengths follow the stage pipeline") {
  StubScene s;
  SupportAnnotation ann{&s.support, {{"lm", {{4, 9, 6}}}}};
  Rng rng(3);
  const LocalizationResult coarse_only = locate_landmark(s.coarse, nullptr, s.test, ann, "lm", {}, rng);
  CHECK(coarse_only.trajectory().size() == 2);
  CHECK(coarse_only.fine_fingerprint.empty());
  const LocalizationResult both = locate_landmark(s.coarse, &s.fine, s.test, ann, "lm", {}, rng);
  CHECK(both.trajectory().size() == 3);
  LocateOptions three;
  three.steps_coarse = 3;
  CHECK(locate_landmark(s.coarse, nullptr, s.test, ann, "lm", three, rng).trajectory().size() == 4);
}

TEST_CASE("perfect projection finds the landmark from any start") {
  StubScene s;
  SupportAnnotation ann{&s.support, {{"lm", {{4, 9, 6}}}}};
  const LandmarkQuery q = prepare_landmark(s.coarse, &s.fine, ann, "lm");
  Rng rng(5);
  for (int i = 0; i < 30; ++i) {
    const VoxelPoint init = sample_init_position(s.test, rng);
    const RunTrace t = run_agent(s.coarse, &s.fine, s.test, q, init, {});
    CHECK(t.final_world.z == doctest::Approx(12.0));
    CHECK(t.final_world.y == doctest::Approx(24.0));
    CHECK(t.final_world.x == doctest::Approx(16.8));
  }
}

TEST_CASE("ensemble K=1 is its single run and K is honored") {
  const ProjectionModel mc(Stage::kCoarse, 100.0, {8, 8, 8}, {}, micro_arch(), 1);
  const ProjectionModel mf(Stage::kFine, 20.0, {8, 8, 8}, {}, micro_arch(), 2);
  const Volume test = random_volume({16, 20, 24}, 9, {2, 2, 2});
  const Volume support = random_volume({16, 20, 24}, 10, {2, 2, 2});
  SupportAnnotation ann{&support, {{"lm", {{5, 6, 7}}}}};
  const LocalizationResult one = locate_ensemble(mc, &mf, test, ann, "lm", {}, 1, 42);
  REQUIRE(one.runs.size() == 1);
  CHECK(one.final_world == one.runs[0].final_world);
  const LandmarkQuery q = prepare_landmark(mc, &mf, ann, "lm");
  CHECK(run_agent(mc, &mf, test, q, one.runs[0].init, {}).final_world == one.final_world);

  const LocalizationResult many = locate_ensemble(mc, &mf, test, ann, "lm", {}, 5, 42);
  REQUIRE(many.runs.size() == 5);
  CHECK(many.runs[0].final_world == one.final_world);
  Vec3 mean;
  for (const auto& r : many.runs) mean += r.final_world;
  mean = mean / 5.0;
  for (int a = 0; a < 3; ++a) CHECK(many.final_world[a] == doctest::Approx(mean[a]).epsilon(1e-12));

  // Identical forced starts make every run, and so the mean, equal.
  std::vector<RunTrace> same;
  for (int i = 0; i < 4; ++i) same.push_back(run_agent(mc, &mf, test, q, {{8, 10, 12}}, {}));
  for (const auto& r : same) CHECK(r.final_world == same[0].final_world);
}

TEST_CASE("stage-mismatched models are refused") {
  const ProjectionModel coarse(Stage::kCoarse, 100.0, {8, 8, 8}, {}, micro_arch(), 1);
  const ProjectionModel fine(Stage::kFine, 20.0, {8, 8, 8}, {}, micro_arch(), 2);
  const Volume v = random_volume({16, 16, 16}, 3, {2, 2, 2});
  SupportAnnotation ann{&v, {{"lm", {{5, 6, 7}}}}};
  try {
    locate_ensemble(fine, &coarse, v, ann, "lm", {}, 1, 0);
    FAIL("expected a stage mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kStageMismatch);
  }
}

TEST_CASE("unknown landmarks and out-of-volume annotations are errors") {
  const Volume v = random_volume({8, 8, 8}, 3);
  SupportAnnotation ann{&v, {{"lm", {{50, 0, 0}}}}};
  CHECK_THROWS_AS(ann.validate(), Error);
  StubScene s;
  SupportAnnotation ok{&s.support, {{"lm", {{4, 9, 6}}}}};
  CHECK_THROWS_AS(prepare_landmark(s.coarse, nullptr, ok, "missing"), Error);
}

TEST_CASE("detect_organ with the stub returns the tight box for both strategies") {
  StubScene s;
  const std::map<std::string, Mask> masks{{"cube", s.support_mask}};
  for (BoxStrategy strategy : {BoxStrategy::kExtreme, BoxStrategy::kDiagonal}) {
    const OrganDetection d = detect_organ(s.coarse, &s.fine, s.test, s.support, masks, "cube", strategy, 3, {}, 7);
    CHECK(d.box == brute_force_bbox(s.test_mask, s.test.spacing()));
    CHECK(d.points.size() == (strategy == BoxStrategy::kExtreme ? 6u : 2u));
    for (const auto& p : d.points) CHECK(p.runs.size() == 3);
    CHECK(d.reordered_axes == 0);
  }
  CHECK_THROWS_AS(detect_organ(s.coarse, &s.fine, s.test, s.support, masks, "liver", BoxStrategy::kExtreme, 1, {}, 7),
                  Error);
}

TEST_CASE("swapped located points are reordered") {
  StubScene s;
  // Stub that maps the support box onto a mirrored test box: min lands on max.
  std::array<int, 6> tb = brute_force_box(s.test_mask);
  std::array<int, 6> mirrored{tb[3], tb[1], tb[2], tb[0], tb[4], tb[5]};
  PerfectProjection flip(Stage::kCoarse, {4, 4, 4}, s.test.spacing(), s.support.spacing(),
                         brute_force_box(s.support_mask), mirrored);
  const std::map<std::string, Mask> masks{{"cube", s.support_mask}};
  const OrganDetection d = detect_organ(flip, nullptr, s.test, s.support, masks, "cube", BoxStrategy::kExtreme, 1, {}, 1);
  CHECK(d.reordered_axes == 1);
  CHECK(d.box == brute_force_bbox(s.test_mask, s.test.spacing()));
}

TEST_CASE("detection json carries the box and every run") {
  StubScene s;
  const std::map<std::string, Mask> masks{{"cube", s.support_mask}};
  const OrganDetection d = detect_organ(s.coarse, &s.fine, s.test, s.support, masks, "cube", BoxStrategy::kExtreme, 2, {}, 7);
  const nlohmann::json j = to_json(d);
  CHECK(bbox_from_json(j.at("box")) == d.box);
  CHECK(j.at("points").size() == 6);
  CHECK(j.at("points")[0].at("runs").size() == 2);
}
