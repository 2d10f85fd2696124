#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <deque>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "tobias/localizer.hpp"

using namespace tobias;
using namespace tobias::loc;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / "tobias_localizer_test") {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

// Independent component labeling: BFS with column-major scanning order.
// Returns every component as a set of flat indices.
std::vector<std::vector<int64_t>> components_oracle(const MaskGrid& mask) {
  const int64_t h = mask.dim(0), w = mask.dim(1);
  std::vector<char> seen(static_cast<size_t>(h * w), 0);
  std::vector<std::vector<int64_t>> comps;
  for (int64_t x = 0; x < w; ++x)
    for (int64_t y = 0; y < h; ++y) {
      const int64_t at = y * w + x;
      if (!mask[at] || seen[static_cast<size_t>(at)]) continue;
      std::vector<int64_t> comp;
      std::deque<int64_t> queue{at};
      seen[static_cast<size_t>(at)] = 1;
      while (!queue.empty()) {
        const int64_t cur = queue.front();
        queue.pop_front();
        comp.push_back(cur);
        const int64_t cy = cur / w, cx = cur % w;
        const int64_t cand[4][2] = {{cy - 1, cx}, {cy + 1, cx}, {cy, cx - 1}, {cy, cx + 1}};
        for (auto& [ny, nx] : cand) {
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const int64_t nb = ny * w + nx;
          if (mask[nb] && !seen[static_cast<size_t>(nb)]) {
            seen[static_cast<size_t>(nb)] = 1;
            queue.push_back(nb);
          }
        }
      }
      std::sort(comp.begin(), comp.end());
      comps.push_back(std::move(comp));
    }
  return comps;
}

MaskGrid mask_from(const std::vector<std::vector<int>>& rows) {
  MaskGrid m({static_cast<int64_t>(rows.size()), static_cast<int64_t>(rows[0].size())});
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < rows[i].size(); ++j)
      m[static_cast<int64_t>(i * rows[i].size() + j)] = static_cast<uint8_t>(rows[i][j]);
  return m;
}

bool same_mask(const MaskGrid& a, const MaskGrid& b) {
  if (a.dims() != b.dims()) return false;
  for (int64_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("channel aggregation sums across channels in double") {
  Tensor f({2, 2, 2}, std::vector<float>{1, 2, 3, 4, 10, 20, 30, 40});
  Tensor a = aggregate_channels(f);
  CHECK(a.dims() == std::vector<int64_t>{2, 2});
  CHECK(a[0] == 11.0f);
  CHECK(a[1] == 22.0f);
  CHECK(a[2] == 33.0f);
  CHECK(a[3] == 44.0f);

  // Batch form matches per-image aggregation.
  RngState rng(4);
  Tensor batch({3, 5, 4, 4});
  for (int64_t i = 0; i < batch.size(); ++i) batch[i] = static_cast<float>(rng.uniform(-2, 2));
  Tensor all = aggregate_channels_batch(batch);
  for (int64_t n = 0; n < 3; ++n) {
    Tensor one({5, 4, 4});
    for (int64_t i = 0; i < one.size(); ++i) one[i] = batch[n * one.size() + i];
    Tensor single = aggregate_channels(one);
    for (int64_t s = 0; s < 16; ++s) REQUIRE(all[n * 16 + s] == single[s]);
  }
  CHECK_THROWS_AS(aggregate_channels(Tensor({2, 2})), DimensionError);
  CHECK_THROWS_AS(aggregate_channels_batch(Tensor({2, 2, 2})), DimensionError);
}

TEST_CASE("mean mask keeps only cells strictly above the mean") {
  Tensor amap({2, 2}, std::vector<float>{0, 1, 2, 3});  // mean 1.5
  MaskGrid m = mean_mask(amap);
  CHECK(m[0] == 0);
  CHECK(m[1] == 0);
  CHECK(m[2] == 1);
  CHECK(m[3] == 1);

  // A constant map has no cell strictly above the mean.
  Tensor flat({3, 3}, 7.0f);
  MaskGrid fm = mean_mask(flat);
  for (int64_t i = 0; i < fm.size(); ++i) REQUIRE(fm[i] == 0);

  // A cell exactly at the mean stays background.
  Tensor edge({1, 3}, std::vector<float>{0, 1, 2});  // mean exactly 1
  MaskGrid em = mean_mask(edge);
  CHECK(em[0] == 0);
  CHECK(em[1] == 0);
  CHECK(em[2] == 1);
}

TEST_CASE("median mask sets exactly half the cells, ties resolve row-major") {
  // Distinct values: the 8 largest of 16.
  Tensor amap({4, 4});
  for (int64_t i = 0; i < 16; ++i) amap[i] = static_cast<float>((i * 7) % 16);
  MaskGrid m = median_mask(amap);
  int64_t pop = 0;
  for (int64_t i = 0; i < 16; ++i) pop += m[i];
  CHECK(pop == 8);
  for (int64_t i = 0; i < 16; ++i) CHECK(m[i] == (amap[i] >= 8.0f ? 1 : 0));

  // Constant map: the 8 earliest row-major cells win the tie.
  Tensor flat({4, 4}, 1.0f);
  MaskGrid fm = median_mask(flat);
  for (int64_t i = 0; i < 16; ++i) REQUIRE(fm[i] == (i < 8 ? 1 : 0));

  // Tie at the cut: index order decides among equals.
  Tensor ties({2, 2}, std::vector<float>{5, 5, 5, 9});
  MaskGrid tm = median_mask(ties);  // keep 2: the 9 plus the earliest 5
  CHECK(tm[0] == 1);
  CHECK(tm[1] == 0);
  CHECK(tm[2] == 0);
  CHECK(tm[3] == 1);

  // Exactly half over many random maps with heavy ties.
  RngState rng(12);
  for (int rep = 0; rep < 1000; ++rep) {
    Tensor r({4, 4});
    for (int64_t i = 0; i < 16; ++i) r[i] = static_cast<float>(rng.uniform_index(3));
    MaskGrid rm = median_mask(r);
    int64_t count = 0;
    for (int64_t i = 0; i < 16; ++i) count += rm[i];
    REQUIRE(count == 8);
  }

  CHECK_THROWS_AS(median_mask(flat, 17), InvariantError);
  MaskGrid all = median_mask(flat, 16);
  for (int64_t i = 0; i < 16; ++i) REQUIRE(all[i] == 1);
}

TEST_CASE("largest component picks the biggest 4-connected region") {
  MaskGrid m = mask_from({{1, 1, 0, 0},
                          {0, 1, 0, 1},
                          {0, 0, 0, 1},
                          {1, 0, 0, 0}});
  MaskGrid c = largest_component(m);
  CHECK(same_mask(c, mask_from({{1, 1, 0, 0},
                                {0, 1, 0, 0},
                                {0, 0, 0, 0},
                                {0, 0, 0, 0}})));
}

TEST_CASE("largest component ties choose the earlier row-major discovery") {
  MaskGrid m = mask_from({{0, 1, 0, 1},
                          {0, 1, 0, 1},
                          {0, 0, 0, 0}});
  MaskGrid c = largest_component(m);
  CHECK(same_mask(c, mask_from({{0, 1, 0, 0},
                                {0, 1, 0, 0},
                                {0, 0, 0, 0}})));
}

TEST_CASE("diagonal cells are not connected") {
  MaskGrid m = mask_from({{1, 0}, {0, 1}});
  MaskGrid c = largest_component(m);
  CHECK(same_mask(c, mask_from({{1, 0}, {0, 0}})));
}

TEST_CASE("empty masks raise EmptyForegroundError") {
  MaskGrid m({3, 3});
  CHECK_THROWS_AS(largest_component(m), EmptyForegroundError);
  CHECK_THROWS_AS(mask_to_bbox(m, 64, 64), EmptyForegroundError);
}

TEST_CASE("largest component agrees with an independent BFS labeling") {
  RngState rng(2025);
  for (int rep = 0; rep < 200; ++rep) {
    MaskGrid m({6, 7});
    bool any = false;
    for (int64_t i = 0; i < m.size(); ++i) {
      m[i] = rng.bernoulli(0.45) ? 1 : 0;
      any = any || m[i];
    }
    if (!any) continue;
    auto comps = components_oracle(m);
    // Oracle pick: max size, tie broken by smallest first (row-major) index.
    size_t best = 0;
    for (size_t k = 1; k < comps.size(); ++k) {
      if (comps[k].size() > comps[best].size() ||
          (comps[k].size() == comps[best].size() && comps[k][0] < comps[best][0]))
        best = k;
    }
    MaskGrid got = largest_component(m);
    MaskGrid want({6, 7});
    for (int64_t idx : comps[best]) want[idx] = 1;
    REQUIRE(same_mask(got, want));
  }
}

TEST_CASE("mask cells widen to pixel spans") {
  MaskGrid m({8, 8});
  for (int64_t i = 2; i <= 4; ++i)
    for (int64_t j = 3; j <= 6; ++j) m.at(i, j) = 1;
  Box b = mask_to_bbox(m, 64, 64);
  CHECK(b == Box{24, 16, 55, 39});

  // Non-divisible extents floor per cell edge.
  MaskGrid t({3, 3});
  t.at(1, 1) = 1;
  t.at(2, 1) = 1;
  Box tb = mask_to_bbox(t, 10, 10);
  CHECK(tb == Box{3, 3, 5, 9});

  MaskGrid full({7, 7}, 1);
  CHECK(mask_to_bbox(full, 224, 224) == Box{0, 0, 223, 223});
}

TEST_CASE("iou on inclusive rectangles") {
  CHECK(iou(Box{0, 0, 9, 9}, Box{5, 5, 14, 14}) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
  CHECK(iou(Box{0, 0, 9, 9}, Box{0, 0, 9, 9}) == doctest::Approx(1.0));
  CHECK(iou(Box{0, 0, 4, 4}, Box{5, 5, 9, 9}) == doctest::Approx(0.0));
  CHECK(iou(Box{0, 0, 9, 9}, Box{10, 0, 19, 9}) == doctest::Approx(0.0));  // touching edges
  CHECK(iou(Box{0, 0, 9, 9}, Box{2, 2, 7, 7}) == doctest::Approx(36.0 / 100.0));
  CHECK(iou(Box{3, 3, 3, 3}, Box{3, 3, 3, 3}) == doctest::Approx(1.0));  // single pixel
}

TEST_CASE("box scaling between resolutions") {
  CHECK(scale_box(Box{0, 0, 63, 63}, 64, 64, 224, 224) == Box{0, 0, 223, 223});
  CHECK(scale_box(Box{16, 8, 31, 47}, 64, 64, 64, 64) == Box{16, 8, 31, 47});
  Box b = scale_box(Box{16, 8, 31, 47}, 64, 64, 128, 128);
  CHECK(b == Box{32, 16, 63, 95});
  // Degenerate spans survive downscaling.
  Box tiny = scale_box(Box{5, 5, 5, 5}, 100, 100, 10, 10);
  CHECK(tiny.width() >= 1);
  CHECK(tiny.height() >= 1);
}

TEST_CASE("seed statistics") {
  SeedStats s = seed_stats({1.0, 2.0, 3.0});
  CHECK(s.mean == doctest::Approx(2.0));
  CHECK(s.stddev == doctest::Approx(1.0));
  CHECK(seed_stats({5.0}).stddev == 0.0);
  CHECK(seed_stats({}).mean == 0.0);
}

TEST_CASE("localize runs the whole pipeline on one image") {
  RngState rng(3);
  auto network = net::build_network<float>(net::preset("tinynet"), rng);

  img::SynthParams params;
  RngState srng(17);
  img::Box gt;
  int64_t label = 0;
  Tensor scene = img::synth_scene(srng, params, &gt, &label);

  LocalizeResult res = localize(network, scene);
  CHECK(res.amap.dims() == std::vector<int64_t>{8, 8});
  CHECK(res.mask.dims() == std::vector<int64_t>{8, 8});
  CHECK(res.component.dims() == std::vector<int64_t>{8, 8});
  // The component is a subset of the thresholded mask.
  for (int64_t i = 0; i < res.mask.size(); ++i)
    if (res.component[i]) REQUIRE(res.mask[i] == 1);
  CHECK(res.box.x0 >= 0);
  CHECK(res.box.y0 >= 0);
  CHECK(res.box.x1 < 64);
  CHECK(res.box.y1 < 64);
  CHECK(!res.empty_fallback);

  // Deterministic: same network, same image, same box.
  LocalizeResult res2 = localize(network, scene);
  CHECK(res.box == res2.box);

  CHECK_THROWS_AS(localize(network, Tensor({1, 8, 8})), DimensionError);
}

TEST_CASE("evaluation reports are identical for 1 and 4 workers") {
  TempDir tmp;
  img::SynthParams params;
  params.count = 12;
  params.edge = 64;
  params.seed = 9;
  const std::string dir = tmp.file("scenes");
  img::generate_synthetic_dataset(dir, params);

  RngState rng(5);
  auto network = net::build_network<float>(net::preset("tinynet"), rng);

  EvalOptions one;
  one.workers = 1;
  EvalOptions four;
  four.workers = 4;
  EvalReport ra = evaluate_localization(network, dir + "/manifest.jsonl", one);
  EvalReport rb = evaluate_localization(network, dir + "/manifest.jsonl", four);
  CHECK(ra.total == 12);
  CHECK(ra.evaluated == 12);
  CHECK(ra.failed == 0);

  const std::string fa = tmp.file("report_a.jsonl");
  const std::string fb = tmp.file("report_b.jsonl");
  write_report_jsonl(fa, ra);
  write_report_jsonl(fb, rb);
  std::ifstream ia(fa, std::ios::binary), ib(fb, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(ia)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(ib)), std::istreambuf_iterator<char>());
  REQUIRE(!sa.empty());
  CHECK(sa == sb);

  // The JSONL parses line by line and ends with the summary object.
  std::istringstream lines(sa);
  std::string line, last;
  int64_t count = 0;
  while (std::getline(lines, line)) {
    ++count;
    auto j = nlohmann::json::parse(line);
    last = line;
  }
  CHECK(count == 13);
  CHECK(nlohmann::json::parse(last).contains("summary"));

  const std::string text = report_summary(ra);
  CHECK(text.find("mean IoU") != std::string::npos);
  CHECK(text.find("whole-image") != std::string::npos);
}

TEST_CASE("evaluation collects per-record failures without aborting") {
  TempDir tmp;
  img::SynthParams params;
  params.count = 4;
  params.edge = 64;
  params.seed = 2;
  const std::string dir = tmp.file("scenes");
  auto records = img::generate_synthetic_dataset(dir, params);

  // Sabotage: one missing file, one record without a box.
  records[1].image = "does_not_exist.ppm";
  records[2].box.reset();
  img::write_manifest(dir + "/manifest.jsonl", records);

  RngState rng(5);
  auto network = net::build_network<float>(net::preset("tinynet"), rng);
  EvalReport rep = evaluate_localization(network, dir + "/manifest.jsonl");
  CHECK(rep.total == 4);
  CHECK(rep.evaluated == 2);
  CHECK(rep.failed == 2);
  CHECK(!rep.records[1].ok);
  CHECK(rep.records[1].error.find("does_not_exist") != std::string::npos);
  CHECK(!rep.records[2].ok);
  CHECK(rep.records[0].ok);
  CHECK(rep.records[3].ok);

  CHECK_THROWS_AS(evaluate_localization(network, dir + "/manifest.jsonl", EvalOptions{0, 0, 0.5}),
                  ConfigError);
  CHECK_THROWS_AS(evaluate_localization(network, tmp.file("nope.jsonl")), IoError);
}

TEST_CASE("an IoU exactly at the threshold counts as a hit") {
  TempDir tmp;
  img::SynthParams params;
  params.count = 1;
  params.edge = 64;
  params.seed = 3;
  const std::string dir = tmp.file("scenes");
  auto records = img::generate_synthetic_dataset(dir, params);

  // Ground truth covering exactly half the pixels makes the whole-image
  // baseline IoU exactly 0.5; at threshold 0.5 that is a hit, not a miss.
  records[0].box = img::Box{0, 0, 63, 31};
  img::write_manifest(dir + "/manifest.jsonl", records);

  RngState rng(5);
  auto network = net::build_network<float>(net::preset("tinynet"), rng);
  EvalReport rep = evaluate_localization(network, dir + "/manifest.jsonl");
  REQUIRE(rep.evaluated == 1);
  CHECK(rep.records[0].whole_image_iou == 0.5);
  CHECK(rep.whole_image_accuracy == 1.0);
}
