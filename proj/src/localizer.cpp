#include "tobias/localizer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "tobias/errors.hpp"

namespace tobias::loc {

Tensor aggregate_channels(const Tensor& features) {
  if (features.order() != 3)
    throw DimensionError("aggregate_channels: expected (C,h,w) features, got " +
                         features.shape_string());
  const int64_t c = features.dim(0), h = features.dim(1), w = features.dim(2);
  Tensor amap({h, w});
  const int64_t spatial = h * w;
  for (int64_t s = 0; s < spatial; ++s) {
    double acc = 0.0;
    for (int64_t ci = 0; ci < c; ++ci) acc += static_cast<double>(features[ci * spatial + s]);
    amap[s] = static_cast<float>(acc);
  }
  return amap;
}

Tensor aggregate_channels_batch(const Tensor& features) {
  if (features.order() != 4)
    throw DimensionError("aggregate_channels_batch: expected (N,C,h,w) features, got " +
                         features.shape_string());
  const int64_t n = features.dim(0), c = features.dim(1), h = features.dim(2), w = features.dim(3);
  Tensor amaps({n, h, w});
  const int64_t spatial = h * w;
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t s = 0; s < spatial; ++s) {
      double acc = 0.0;
      for (int64_t ci = 0; ci < c; ++ci)
        acc += static_cast<double>(features[(ni * c + ci) * spatial + s]);
      amaps[ni * spatial + s] = static_cast<float>(acc);
    }
  return amaps;
}

MaskGrid mean_mask(const Tensor& amap) {
  if (amap.order() != 2) throw DimensionError("mean_mask: expected an (h,w) map");
  double mean = 0.0;
  for (int64_t i = 0; i < amap.size(); ++i) mean += static_cast<double>(amap[i]);
  mean /= static_cast<double>(amap.size());
  MaskGrid mask(amap.dims());
  for (int64_t i = 0; i < amap.size(); ++i)
    mask[i] = static_cast<double>(amap[i]) > mean ? 1 : 0;  // strictly above
  return mask;
}

MaskGrid median_mask(const Tensor& amap, int64_t keep) {
  if (amap.order() != 2) throw DimensionError("median_mask: expected an (h,w) map");
  const int64_t n = amap.size();
  if (keep < 0) keep = n / 2;
  if (keep > n) throw InvariantError("median_mask: keep exceeds cell count");
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  // Highest value first; equal values keep the earlier row-major cell.
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int64_t a, int64_t b) { return amap[a] > amap[b]; });
  MaskGrid mask(amap.dims());
  for (int64_t k = 0; k < keep; ++k) mask[idx[static_cast<size_t>(k)]] = 1;
  return mask;
}

MaskGrid largest_component(const MaskGrid& mask) {
  if (mask.order() != 2) throw DimensionError("largest_component: expected an (h,w) mask");
  const int64_t h = mask.dim(0), w = mask.dim(1);
  std::vector<int32_t> label(static_cast<size_t>(mask.size()), -1);
  int32_t next = 0;
  int64_t best_size = 0;
  int32_t best_label = -1;

  std::vector<int64_t> stack;
  for (int64_t start = 0; start < mask.size(); ++start) {
    if (!mask[start] || label[static_cast<size_t>(start)] >= 0) continue;
    const int32_t cur = next++;
    int64_t size = 0;
    stack.clear();
    stack.push_back(start);
    label[static_cast<size_t>(start)] = cur;
    while (!stack.empty()) {
      const int64_t at = stack.back();
      stack.pop_back();
      ++size;
      const int64_t y = at / w, x = at % w;
      const int64_t neighbors[4] = {at - w, at + w, at - 1, at + 1};
      const bool valid[4] = {y > 0, y + 1 < h, x > 0, x + 1 < w};
      for (int k = 0; k < 4; ++k) {
        if (!valid[k]) continue;
        const int64_t nb = neighbors[k];
        if (mask[nb] && label[static_cast<size_t>(nb)] < 0) {
          label[static_cast<size_t>(nb)] = cur;
          stack.push_back(nb);
        }
      }
    }
    // Strict > keeps the component discovered earlier on ties; discovery
    // order is row-major by first cell.
    if (size > best_size) {
      best_size = size;
      best_label = cur;
    }
  }
  if (best_label < 0) throw EmptyForegroundError("largest_component: mask has no foreground");

  MaskGrid out(mask.dims());
  for (int64_t i = 0; i < mask.size(); ++i)
    out[i] = label[static_cast<size_t>(i)] == best_label ? 1 : 0;
  return out;
}

Box mask_to_bbox(const MaskGrid& mask, int64_t image_h, int64_t image_w) {
  if (mask.order() != 2) throw DimensionError("mask_to_bbox: expected an (h,w) mask");
  const int64_t h = mask.dim(0), w = mask.dim(1);
  int64_t i0 = h, i1 = -1, j0 = w, j1 = -1;
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      if (!mask.at(i, j)) continue;
      i0 = std::min(i0, i);
      i1 = std::max(i1, i);
      j0 = std::min(j0, j);
      j1 = std::max(j1, j);
    }
  if (i1 < 0) throw EmptyForegroundError("mask_to_bbox: mask has no foreground");
  return Box{j0 * image_w / w, i0 * image_h / h, (j1 + 1) * image_w / w - 1,
             (i1 + 1) * image_h / h - 1};
}

double iou(const Box& a, const Box& b) {
  const int64_t ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
  const int64_t ix1 = std::min(a.x1, b.x1), iy1 = std::min(a.y1, b.y1);
  const int64_t iw = ix1 - ix0 + 1, ih = iy1 - iy0 + 1;
  const int64_t inter = (iw > 0 && ih > 0) ? iw * ih : 0;
  const int64_t uni = a.area() + b.area() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

Box scale_box(const Box& box, int64_t from_h, int64_t from_w, int64_t to_h, int64_t to_w) {
  Box out{box.x0 * to_w / from_w, box.y0 * to_h / from_h, (box.x1 + 1) * to_w / from_w - 1,
          (box.y1 + 1) * to_h / from_h - 1};
  out.x1 = std::max(out.x1, out.x0);
  out.y1 = std::max(out.y1, out.y0);
  return out;
}

LocalizeResult localize(const net::Network& network, const Tensor& image, int64_t input_edge) {
  if (image.order() != 3 || image.dim(0) != 3)
    throw DimensionError("localize: expected a (3,H,W) image, got " + image.shape_string());
  const int64_t edge = input_edge > 0 ? input_edge : network.spec().input_size;
  const int64_t orig_h = image.dim(1), orig_w = image.dim(2);

  Tensor prepared = img::normalize(img::resize_bilinear(image, edge, edge));
  Tensor batch = img::to_batch({prepared});
  Tensor features = network.forward_features(batch);

  LocalizeResult result;
  Tensor one({features.dim(1), features.dim(2), features.dim(3)});
  for (int64_t i = 0; i < one.size(); ++i) one[i] = features[i];
  result.amap = aggregate_channels(one);
  result.mask = mean_mask(result.amap);

  Box box_in_input;
  try {
    result.component = largest_component(result.mask);
    box_in_input = mask_to_bbox(result.component, edge, edge);
  } catch (const EmptyForegroundError&) {
    result.component = result.mask;
    result.empty_fallback = true;
    box_in_input = Box{0, 0, edge - 1, edge - 1};
  }
  result.box = scale_box(box_in_input, edge, edge, orig_h, orig_w);
  return result;
}

namespace {

RecordEval eval_one(const net::Network& network, const std::filesystem::path& base,
                    const img::ManifestRecord& rec, const EvalOptions& options) {
  RecordEval out;
  out.image = rec.image;
  try {
    if (!rec.box) throw InvariantError("record has no ground-truth box");
    const std::string path =
        std::filesystem::path(rec.image).is_absolute() ? rec.image : (base / rec.image).string();
    Tensor image = img::read_image(path);
    LocalizeResult loc = localize(network, image, options.input_edge);
    out.predicted = loc.box;
    out.ground_truth = *rec.box;
    out.empty_fallback = loc.empty_fallback;
    out.iou = iou(out.predicted, out.ground_truth);
    const Box whole{0, 0, image.dim(2) - 1, image.dim(1) - 1};
    out.whole_image_iou = iou(whole, out.ground_truth);
    out.ok = true;
  } catch (const std::exception& e) {
    out.ok = false;
    out.error = e.what();
  }
  return out;
}

}  // namespace

EvalReport evaluate_localization(const net::Network& network, const std::string& manifest_path,
                                 const EvalOptions& options) {
  if (options.workers < 1) throw ConfigError("evaluate_localization: workers must be >= 1");
  const auto records = img::read_manifest(manifest_path);
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();

  EvalReport report;
  report.iou_threshold = options.iou_threshold;
  report.total = static_cast<int64_t>(records.size());
  report.records.resize(records.size());

  // Index-addressed slots: each worker claims record indices from a shared
  // counter and writes only its own slot, so the reduction below is
  // independent of scheduling and worker count.
  std::atomic<size_t> cursor{0};
  auto worker = [&]() {
    for (;;) {
      const size_t i = cursor.fetch_add(1);
      if (i >= records.size()) return;
      report.records[i] = eval_one(network, base, records[i], options);
    }
  };
  if (options.workers == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < options.workers; ++t) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }

  double iou_sum = 0.0, base_sum = 0.0;
  int64_t hits = 0, base_hits = 0;
  for (const RecordEval& r : report.records) {
    if (!r.ok) {
      ++report.failed;
      continue;
    }
    ++report.evaluated;
    iou_sum += r.iou;
    base_sum += r.whole_image_iou;
    if (r.iou >= options.iou_threshold) ++hits;
    if (r.whole_image_iou >= options.iou_threshold) ++base_hits;
  }
  if (report.evaluated > 0) {
    const double n = static_cast<double>(report.evaluated);
    report.mean_iou = iou_sum / n;
    report.accuracy = static_cast<double>(hits) / n;
    report.whole_image_mean_iou = base_sum / n;
    report.whole_image_accuracy = static_cast<double>(base_hits) / n;
  }
  return report;
}

namespace {

nlohmann::json box_json(const Box& b) { return {b.x0, b.y0, b.x1, b.y1}; }

std::string fixed6(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

void write_report_jsonl(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report " + path);
  for (const RecordEval& r : report.records) {
    nlohmann::json j;
    j["image"] = r.image;
    j["ok"] = r.ok;
    if (r.ok) {
      j["predicted"] = box_json(r.predicted);
      j["ground_truth"] = box_json(r.ground_truth);
      j["iou"] = r.iou;
      j["whole_image_iou"] = r.whole_image_iou;
      if (r.empty_fallback) j["empty_fallback"] = true;
    } else {
      j["error"] = r.error;
    }
    out << j.dump() << "\n";
  }
  nlohmann::json s;
  s["summary"] = {{"total", report.total},
                  {"evaluated", report.evaluated},
                  {"failed", report.failed},
                  {"iou_threshold", report.iou_threshold},
                  {"mean_iou", report.mean_iou},
                  {"accuracy", report.accuracy},
                  {"whole_image_mean_iou", report.whole_image_mean_iou},
                  {"whole_image_accuracy", report.whole_image_accuracy}};
  out << s.dump() << "\n";
  if (!out) throw IoError("short write to " + path);
}

std::string report_summary(const EvalReport& report) {
  std::ostringstream os;
  os << "records evaluated: " << report.evaluated << " / " << report.total;
  if (report.failed > 0) os << "  (" << report.failed << " failed)";
  os << "\n";
  os << "mean IoU:          " << fixed6(report.mean_iou) << "\n";
  os << "accuracy (IoU >= " << report.iou_threshold << "): " << fixed6(report.accuracy) << "\n";
  os << "whole-image basln: mean IoU " << fixed6(report.whole_image_mean_iou) << ", accuracy "
     << fixed6(report.whole_image_accuracy) << "\n";
  return os.str();
}

SeedStats seed_stats(const std::vector<double>& values) {
  SeedStats s;
  s.values = values;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double acc = 0.0;
    for (double v : values) acc += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(acc / static_cast<double>(values.size() - 1));
  }
  return s;
}

}  // namespace tobias::loc
