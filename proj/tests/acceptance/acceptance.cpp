#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gradcheck.hpp"
#include "rprloc/baselines.hpp"
#include "rprloc/errors.hpp"
#include "rprloc/evalkit.hpp"
#include "rprloc/locator.hpp"
#include "rprloc/pairsampler.hpp"
#include "rprloc/pipeline.hpp"
#include "rprloc/pnet.hpp"
#include "test_support.hpp"

using namespace rprloc;
using rprloc::testing::brute_force_bbox;
using rprloc::testing::PerfectProjection;
using rprloc::testing::random_volume;
using rprloc::testing::source_dir;
using rprloc::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Header-keyed rows of a comma-separated file without quoting.
struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t col(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) fail(ErrorKind::kIo, "missing column " + name);
    return static_cast<std::size_t>(it - header.begin());
  }
  const std::vector<std::string>& row(const std::string& method, const std::string& organ) const {
    const std::size_t m = col("method");
    const std::size_t o = col("organ");
    for (const auto& r : rows)
      if (r[m] == method && r[o] == organ) return r;
    fail(ErrorKind::kLookup, "no row " + method + "/" + organ);
  }
  double value(const std::string& method, const std::string& organ, const std::string& column) const {
    return std::stod(row(method, organ)[col(column)]);
  }
};

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

Csv read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string() + "; run the desk fixture first");
  Csv csv;
  std::string line;
  std::getline(in, line);
  csv.header = split(line);
  while (std::getline(in, line))
    if (!line.empty()) csv.rows.push_back(split(line));
  return csv;
}

fs::path desk_run() { return fs::path(RPRLOC_DESK_RUN); }

// 1: offset, bounded-offset and loss oracles.
Outcome criterion_1() {
  Rng rng(1);
  std::uniform_real_distribution<double> pos(-200.0, 400.0);
  std::uniform_real_distribution<double> sp(0.3, 5.0);
  double worst = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const VoxelPoint q{{pos(rng), pos(rng), pos(rng)}};
    const VoxelPoint s{{pos(rng), pos(rng), pos(rng)}};
    const Vec3 e{sp(rng), sp(rng), sp(rng)};
    const WorldOffset o = ground_truth_offset(q, s, e);
    for (int a = 0; a < 3; ++a) {
      const long double ref = static_cast<long double>(s.index[a]) * e[a] - static_cast<long double>(q.index[a]) * e[a];
      worst = std::max(worst, static_cast<double>(std::fabs(static_cast<long double>(o.delta[a]) - ref)));
    }
  }

  PnetArchitecture arch;
  arch.channels = {4, 8};
  arch.convs_per_block = 1;
  arch.fc_hidden = 8;
  const Shape3 shape{8, 8, 8};
  std::uniform_real_distribution<double> radius(1.0, 300.0);
  std::size_t draws = 0;
  double closest = 0.0;
  bool bounded = true;
  for (int m = 0; m < 100; ++m) {
    const double r = radius(rng);
    const ProjectionModel model(Stage::kCoarse, r, shape, {}, arch, 1000 + m);
    std::vector<Vec3> latents;
    for (int p = 0; p < 101; ++p) {
      const Volume v = random_volume({12, 12, 12}, 7919 * m + p);
      latents.push_back(model.project(crop_patch(v, {{6, 6, 6}}, shape)));
    }
    for (int p = 0; p < 100; ++p) {
      const WorldOffset o = model.offset(latents[p], latents[p + 1]);
      for (int a = 0; a < 3; ++a) {
        bounded = bounded && std::fabs(o.delta[a]) < r;
        closest = std::max(closest, std::fabs(o.delta[a]) / r);
      }
      ++draws;
    }
  }

  const WorldOffset a{{1.0, 2.0, 3.0}};
  const WorldOffset b{{0.5, -1.0, 3.0}};
  const WorldOffset c{{-4.0, 0.5, 2.25}};
  const WorldOffset d{{1.0, 1.5, -0.75}};
  const std::vector<WorldOffset> pred{a, c};
  const std::vector<WorldOffset> target{b, d};
  const double p[3] = {0.25, -0.5, 1.0};
  double gq[3];
  double gs[3];
  const bool losses = offset_loss(a, b) == 9.25 && offset_loss(c, d) == 35.0 && offset_loss(a, a) == 0.0 &&
                      batch_offset_loss(pred, target) == 22.125 &&
                      pair_loss_and_grad<double>(p, p, {3.0, 4.0, 12.0}, 50.0, gq, gs) == 169.0;

  const bool pass = worst <= 1e-9 && bounded && draws == 10000 && losses;
  return {pass, "offset max error " + fmt(worst) + " mm over 1e5 triples; " + std::to_string(draws) +
                    " bounded offsets, max |o|/r " + fmt(closest, 6) + (bounded ? " < 1" : " reached 1") +
                    "; loss hand values " + (losses ? "exact" : "differ")};
}

// 2: gradient of the pair loss through a 2-block Pnet.
Outcome criterion_2() {
  PnetArchitecture arch;
  arch.channels = {4, 8};
  arch.convs_per_block = 2;
  arch.fc_hidden = 8;
  Rng rng(2);
  nn::Sequential<double> net = build_pnet<double>(arch, rng);
  const Shape3 shape{8, 8, 8};
  nn::Tensor<double> x(4, 1, shape.d, shape.h, shape.w);
  x.data = rprloc::testing::random_vector(x.size(), 3);
  // Small radius keeps the loss O(1) so central differences stay above
  // rounding noise on parameters whose true gradient is zero.
  const double radius = 5.0;
  const std::vector<Vec3> targets{{1.5, -3.0, 0.5}, {-0.8, 2.0, 4.1}};

  // Samples 0..1 are queries, 2..3 their supports; loss is the batch mean.
  auto run = [&](nn::Tensor<double>* grad) {
    const nn::Tensor<double> out = net.forward(x);
    if (grad) *grad = nn::Tensor<double>(out.n, out.c, out.d, out.h, out.w);
    double loss = 0.0;
    for (int i = 0; i < 2; ++i) {
      double gq[kLatentDim];
      double gs[kLatentDim];
      loss += pair_loss_and_grad<double>(out.sample(i), out.sample(2 + i), targets[i], radius, gq, gs) / 2.0;
      if (grad) {
        for (int a = 0; a < kLatentDim; ++a) {
          grad->sample(i)[a] = gq[a] / 2.0;
          grad->sample(2 + i)[a] = gs[a] / 2.0;
        }
      }
    }
    return loss;
  };
  std::vector<nn::Buffer<double>*> values;
  for (nn::Param<double>* p : net.params()) values.push_back(&p->value);
  const auto r = rprloc::testing::check_gradients(
      values, [&] { return run(nullptr); },
      [&] {
        nn::Tensor<double> g;
        run(&g);
        net.zero_grad();
        net.backward(g);
        std::vector<nn::Buffer<double>> out;
        for (nn::Param<double>* p : net.params()) out.push_back(p->grad);
        return out;
      },
      40, 4);
  const bool pass = r.checked > 0 && r.max_rel_error <= 1e-3;
  return {pass, std::to_string(r.checked) + " parameters checked, max relative error " + fmt(r.max_rel_error) +
                    ", norm relative error " + fmt(r.norm_rel_error)};
}

// 3: perfect-projection stubs recover every tight box on the test split.
Outcome criterion_3() {
  TempDir dir("acc3");
  CommandContext ctx;
  ctx.config = load_run_config(source_dir() / "configs" / "desk.json");
  ctx.config.output_dir = dir.path();
  ctx.config.validate();
  ctx.config.resolve();
  cmd_generate(ctx);
  const EvalData data = load_eval_data(ctx.config);
  const DatasetManifest manifest = load_dataset(ctx.config.output_dir / "dataset");
  const Shape3 patch = ctx.config.coarse.patch_shape;
  int checked = 0;
  int exact = 0;
  double worst_iou = 1.0;
  double worst_awd = 0.0;
  for (std::size_t i = 0; i < data.test_ids.size(); ++i) {
    const Volume& test = data.test_volumes[i];
    const auto masks = manifest.load_masks(manifest.find(data.test_ids[i]));
    for (const auto& [organ, support_mask] : data.support_masks) {
      const Mask& test_mask = masks.at(organ);
      const PerfectProjection mc(Stage::kCoarse, patch, test, test_mask, data.support_volume, support_mask);
      const PerfectProjection mf(Stage::kFine, patch, test, test_mask, data.support_volume, support_mask);
      const OrganDetection det =
          detect_organ(mc, &mf, test, data.support_volume, data.support_masks, organ, BoxStrategy::kExtreme, 1, {}, 0);
      const BBox3D& truth = data.truth.at(data.test_ids[i]).at(organ);
      const double iou = iou3d(det.box, truth);
      const double dist = awd(det.box, truth);
      worst_iou = std::min(worst_iou, iou);
      worst_awd = std::max(worst_awd, dist);
      exact += iou == 1.0 && dist == 0.0;
      ++checked;
    }
  }
  const bool pass = data.test_ids.size() == 8 && checked == 8 * static_cast<int>(data.support_masks.size()) &&
                    exact == checked;
  return {pass, std::to_string(exact) + "/" + std::to_string(checked) + " organ boxes exact on " +
                    std::to_string(data.test_ids.size()) + " test cases; min IoU " + fmt(worst_iou, 6) +
                    ", max AWD " + fmt(worst_awd) + " mm"};
}

// 4: extreme points give the brute-force tight box.
Outcome criterion_4() {
  Rng rng(4);
  std::uniform_int_distribution<int> dim(1, 12);
  std::uniform_real_distribution<double> density(0.02, 0.6);
  std::uniform_real_distribution<double> sp(0.3, 4.0);
  int exact = 0;
  for (int t = 0; t < 500; ++t) {
    Mask m({dim(rng), dim(rng), dim(rng)});
    std::bernoulli_distribution on(density(rng));
    for (auto& v : m.data) v = on(rng);
    if (m.empty()) m.data[std::uniform_int_distribution<std::size_t>(0, m.data.size() - 1)(rng)] = 1;
    const Vec3 e{sp(rng), sp(rng), sp(rng)};
    exact += assemble_bbox(extract_extreme_points(m, e)) == brute_force_bbox(m, e);
  }
  return {exact == 500, std::to_string(exact) + "/500 random masks match the brute-force box exactly"};
}

// 5: iou against a voxelized count, awd metric properties.
Outcome criterion_5() {
  Rng rng(5);
  constexpr double kCell = 0.1;
  constexpr int kCells = 40;
  std::uniform_int_distribution<int> corner(0, kCells);
  auto lattice_box = [&] {
    int lo[3];
    int hi[3];
    for (int a = 0; a < 3; ++a) {
      int u = corner(rng);
      int v = corner(rng);
      while (u == v) v = corner(rng);
      lo[a] = std::min(u, v);
      hi[a] = std::max(u, v);
    }
    return BBox3D::from_corners({lo[0] * kCell, lo[1] * kCell, lo[2] * kCell},
                                {hi[0] * kCell, hi[1] * kCell, hi[2] * kCell});
  };
  auto inside = [](const BBox3D& b, const Vec3& p) {
    for (int a = 0; a < 3; ++a)
      if (p[a] < b.min_corner[a] || p[a] > b.max_corner[a]) return false;
    return true;
  };
  double worst_iou = 0.0;
  for (int t = 0; t < 200; ++t) {
    const BBox3D a = lattice_box();
    const BBox3D b = lattice_box();
    std::size_t inter = 0;
    std::size_t uni = 0;
    for (int z = 0; z < kCells; ++z)
      for (int y = 0; y < kCells; ++y)
        for (int x = 0; x < kCells; ++x) {
          const Vec3 c{(z + 0.5) * kCell, (y + 0.5) * kCell, (x + 0.5) * kCell};
          const bool ia = inside(a, c);
          const bool ib = inside(b, c);
          inter += ia && ib;
          uni += ia || ib;
        }
    const double ref = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
    worst_iou = std::max(worst_iou, std::fabs(iou3d(a, b) - ref));
  }

  std::uniform_real_distribution<double> u(-100.0, 100.0);
  std::uniform_real_distribution<double> ext(0.0, 60.0);
  auto rand_box = [&] {
    const Vec3 lo{u(rng), u(rng), u(rng)};
    return BBox3D::from_corners(lo, lo + Vec3{ext(rng), ext(rng), ext(rng)});
  };
  int symmetric = 0;
  int invariant = 0;
  int triangle = 0;
  for (int t = 0; t < 1000; ++t) {
    const BBox3D a = rand_box();
    const BBox3D b = rand_box();
    const BBox3D c = rand_box();
    const Vec3 shift{u(rng), u(rng), u(rng)};
    const BBox3D as{a.min_corner + shift, a.max_corner + shift};
    const BBox3D bs{b.min_corner + shift, b.max_corner + shift};
    symmetric += awd(a, b) == awd(b, a);
    invariant += std::fabs(awd(as, bs) - awd(a, b)) <= 1e-9;
    triangle += awd(a, c) <= awd(a, b) + awd(b, c) + 1e-12;
  }
  const bool pass = worst_iou <= 1e-3 && symmetric == 1000 && invariant == 1000 && triangle == 1000;
  return {pass, "iou max deviation " + fmt(worst_iou) + " on 200 pairs; awd symmetric " + std::to_string(symmetric) +
                    ", translation invariant " + std::to_string(invariant) + ", triangle " +
                    std::to_string(triangle) + " of 1000"};
}

// 6: loss drop and training time of the desk run.
Outcome criterion_6() {
  const fs::path models = desk_run() / "models";
  bool pass = true;
  double total = 0.0;
  std::string detail;
  for (const char* stage : {"coarse", "fine"}) {
    const auto log = read_loss_csv(models / (std::string(stage) + "_loss.csv"));
    if (log.empty()) fail(ErrorKind::kIo, std::string("empty loss log for ") + stage);
    const double ratio = log.back().mean_loss / log.front().mean_loss;
    for (const auto& e : log) total += e.wall_time_s;
    pass = pass && log.size() == 30 && ratio <= 0.2;
    detail += std::string(stage) + " " + std::to_string(log.size()) + " epochs, final/first loss " + fmt(ratio) + "; ";
  }
  pass = pass && total < 3.0 * 3600.0;
  return {pass, detail + "training time " + fmt(total / 60.0) + " min"};
}

// 7: box strategy and ensemble trends of table 1.
Outcome criterion_7() {
  const Csv t1 = read_csv(desk_run() / "tables" / "table1.csv");
  std::string ens;
  for (const auto& r : t1.rows)
    if (r[t1.col("method")].rfind("extreme+MRE", 0) == 0) ens = r[t1.col("method")];
  if (ens.empty()) fail(ErrorKind::kLookup, "no extreme ensemble row in table1.csv");
  const double diag = t1.value("diagonal", "mean", "iou");
  const double ext1 = t1.value("extreme", "mean", "iou");
  const double extk = t1.value(ens, "mean", "iou");
  const double sd1 = t1.value("extreme", "mean", "iou_seed_std");
  const double sdk = t1.value(ens, "mean", "iou_seed_std");
  const int seeds = static_cast<int>(t1.value(ens, "mean", "seeds"));
  const bool pass = ext1 >= diag && extk >= ext1 - 0.01 && sdk < sd1 && seeds == 3;
  return {pass, "IoU diagonal " + fmt(diag) + ", extreme " + fmt(ext1) + ", " + ens + " " + fmt(extk) +
                    "; seed std K=1 " + fmt(sd1) + " vs ensemble " + fmt(sdk) + " over " + std::to_string(seeds) +
                    " seeds"};
}

// 8: coarse + fine against one coarse step.
Outcome criterion_8() {
  const Csv t2 = read_csv(desk_run() / "tables" / "table2.csv");
  const double iou1 = t2.value("Mc(1 step)", "mean", "iou");
  const double awd1 = t2.value("Mc(1 step)", "mean", "awd_mm");
  const double iouf = t2.value("Mc+Mf", "mean", "iou");
  const double awdf = t2.value("Mc+Mf", "mean", "awd_mm");
  const bool pass = iouf >= iou1 && awdf <= awd1 + 0.5;
  return {pass, "Mc(1 step) IoU " + fmt(iou1) + " AWD " + fmt(awd1) + " mm; Mc+Mf IoU " + fmt(iouf) + " AWD " +
                    fmt(awdf) + " mm"};
}

// 9: speed against every sliding-window baseline, plus the planted search.
Outcome criterion_9() {
  const Csv t3 = read_csv(desk_run() / "tables" / "table3.csv");
  const double ours = t3.value("ours", "mean", "time_s");
  bool fast = ours > 0.0;
  std::string detail = "ours " + fmt(ours) + " s/organ;";
  std::set<std::string> seen;
  for (const auto& r : t3.rows) {
    const std::string& m = r[t3.col("method")];
    if (m == "ours" || r[t3.col("organ")] != "mean" || !seen.insert(m).second) continue;
    const double t = std::stod(r[t3.col("time_s")]);
    fast = fast && t >= 100.0 * ours;
    detail += " " + m + " " + fmt(t) + " s (" + fmt(t / ours, 3) + "x)";
  }
  const std::set<std::string> expected{"gs_mse", "gs_cosine", "gs_ncc", "fm_mse", "fm_cosine"};
  fast = fast && seen == expected;

  const Volume v = random_volume({64, 96, 96}, 9);
  const VoxelPoint planted{{30, 48, 52}};
  const Patch support = crop_patch(v, planted, {16, 32, 32});
  const MatchResult hit = sliding_window_search(v, support, SimilarityKind::kGsMse, 2);
  const bool found = hit.best_center == planted && hit.best_score == 0.0;
  detail += std::string("; planted copy ") + (found ? "found with mse 0" : "missed");
  return {fast && found, detail};
}

// 10: two repro-tables runs with one config give identical CSVs apart from
// time columns. The second run overwrites the first in place.
Outcome criterion_10() {
  TempDir run("acc10");
  TempDir first("acc10first");
  CommandContext ctx;
  ctx.config = load_run_config(source_dir() / "configs" / "small.json");
  ctx.config.output_dir = run.path();
  ctx.config.validate();
  ctx.config.resolve();
  auto csvs = [](const fs::path& root) {
    std::set<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
      if (e.is_regular_file() && e.path().extension() == ".csv") out.insert(fs::relative(e.path(), root));
    return out;
  };
  cmd_repro_tables(ctx);
  const auto files = csvs(run.path());
  for (const fs::path& f : files) {
    fs::create_directories((first.path() / f).parent_path());
    fs::copy_file(run.path() / f, first.path() / f);
  }
  ctx.overwrite = true;
  cmd_repro_tables(ctx);
  if (files != csvs(run.path())) return {false, "the two runs wrote different sets of CSV files"};
  for (const fs::path& f : files) {
    const std::string diff = compare_csv_ignoring_time(first.path() / f, run.path() / f);
    if (!diff.empty()) return {false, f.string() + ": " + diff};
  }
  return {!files.empty(), std::to_string(files.size()) + " CSV files identical apart from time columns"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  int criterion = 0;
  app.add_option("--criterion", criterion, "Criterion number")->required()->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  const std::map<int, std::function<Outcome()>> checks{
      {1, criterion_1}, {2, criterion_2}, {3, criterion_3}, {4, criterion_4},  {5, criterion_5},
      {6, criterion_6}, {7, criterion_7}, {8, criterion_8}, {9, criterion_9}, {10, criterion_10}};
  const auto t0 = std::chrono::steady_clock::now();
  Outcome out;
  try {
    out = checks.at(criterion)();
  } catch (const std::exception& e) {
    out = {false, std::string("error: ") + e.what()};
  }
  std::printf("%s criterion %d: %s [%.1f s]\n", out.pass ? "PASS" : "FAIL", criterion, out.detail.c_str(),
              seconds_since(t0));
  return out.pass ? 0 : 1;
}
