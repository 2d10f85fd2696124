#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tobias/imageio.hpp"
#include "tobias/net/network.hpp"
#include "tobias/tensor.hpp"

namespace tobias::loc {

using img::Box;

// Binary occupancy grid over feature-map cells (h,w), values 0/1.
using MaskGrid = TensorT<uint8_t>;

// Channel-sum saliency: collapses (C,h,w) features to an (h,w) activation
// map. Sums are accumulated in double regardless of the input scalar.
Tensor aggregate_channels(const Tensor& features);

// Batch variant: (N,C,h,w) -> (N,h,w).
Tensor aggregate_channels_batch(const Tensor& features);

// Foreground = cells strictly above the map's mean.
MaskGrid mean_mask(const Tensor& amap);

// Foreground = the `keep` highest cells (half the grid by default, the
// median split). Equal values resolve in favor of the earlier row-major
// index, so exactly `keep` cells are set for any input.
MaskGrid median_mask(const Tensor& amap, int64_t keep = -1);

// Largest 4-connected foreground component; among equal sizes the one
// discovered first in row-major order wins. An all-zero mask raises
// EmptyForegroundError.
MaskGrid largest_component(const MaskGrid& mask);

// Tight bounds of the foreground cells, widened to pixel coordinates:
// grid cell i along an axis of extent H covers pixels
// [i*H/h, (i+1)*H/h - 1].
Box mask_to_bbox(const MaskGrid& mask, int64_t image_h, int64_t image_w);

// Intersection-over-union of inclusive pixel rectangles.
double iou(const Box& a, const Box& b);

// Maps an inclusive box between image resolutions with the same floor
// arithmetic as mask_to_bbox.
Box scale_box(const Box& box, int64_t from_h, int64_t from_w, int64_t to_h, int64_t to_w);

struct LocalizeResult {
  Tensor amap;         // (h,w) channel-sum saliency
  MaskGrid mask;       // thresholded grid
  MaskGrid component;  // largest connected component (equals mask when empty-fallback hit)
  Box box;             // predicted box in the coordinates of the given image
  bool empty_fallback = false;  // no foreground survived; whole image used
};

// Full pipeline on one prepared (3,H,W) image in [0,1]: resize to
// input_edge, normalize, forward, aggregate, threshold, component, box.
// The returned box is in the ORIGINAL image's pixel coordinates.
LocalizeResult localize(const net::Network& network, const Tensor& image, int64_t input_edge = 0);

struct EvalOptions {
  int64_t input_edge = 0;    // 0 = network's nominal input size
  int workers = 1;
  double iou_threshold = 0.5;
};

struct RecordEval {
  std::string image;
  bool ok = false;
  std::string error;
  Box predicted{};
  Box ground_truth{};
  double iou = 0.0;
  double whole_image_iou = 0.0;
  bool empty_fallback = false;
};

struct EvalReport {
  int64_t total = 0;
  int64_t evaluated = 0;
  int64_t failed = 0;
  double mean_iou = 0.0;
  double accuracy = 0.0;              // fraction with IoU >= threshold
  double whole_image_mean_iou = 0.0;  // trivial full-frame baseline
  double whole_image_accuracy = 0.0;
  double iou_threshold = 0.5;
  std::vector<RecordEval> records;
};

// Evaluates localization over every manifest record that carries a box.
// Records are processed by `workers` threads into index-addressed slots and
// reduced in manifest order, so the report is identical for any worker
// count. Per-record failures (unreadable files, undersized images) are
// collected, not fatal.
EvalReport evaluate_localization(const net::Network& network, const std::string& manifest_path,
                                 const EvalOptions& options = {});

// Serialization of reports: one JSON object per record plus a trailing
// summary object; and a short human-readable summary block.
void write_report_jsonl(const std::string& path, const EvalReport& report);
std::string report_summary(const EvalReport& report);

// Mean and sample standard deviation of per-seed accuracies.
struct SeedStats {
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> values;
};
SeedStats seed_stats(const std::vector<double>& values);

}  // namespace tobias::loc
