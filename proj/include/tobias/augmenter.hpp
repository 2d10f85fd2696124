#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tobias/imageio.hpp"
#include "tobias/localizer.hpp"
#include "tobias/net/network.hpp"
#include "tobias/rng.hpp"
#include "tobias/tensor.hpp"

// Patch-level background swapping. A frozen random network scores a 4x4
// grid of cells per image; the top half (by summed activation) is declared
// foreground. A merged view keeps one image's foreground patches in place
// and fills its background slots with the partner's background patches in
// a random order. Baselines: a uniformly random 8-of-16 split and mixup.
namespace tobias::aug {

// Cell (i,j) of the 4x4 grid is bit (i*4 + j), LSB first.
using PatchMask = uint16_t;
constexpr int kGrid = 4;
constexpr int kCells = kGrid * kGrid;
constexpr int kForeground = kCells / 2;

int popcount16(PatchMask mask);
PatchMask pack_mask(const loc::MaskGrid& grid);  // 4x4 grid of 0/1
loc::MaskGrid unpack_mask(PatchMask mask);

// A (3,S,S) image cut into 16 patches of side r = S/4, row-major.
struct PatchGrid {
  int64_t r = 0;
  std::vector<Tensor> patches;  // 16 tensors of shape (3,r,r)
};

PatchGrid split_patches(const Tensor& image);   // side must divide by 4
Tensor reassemble(const PatchGrid& grid);       // exact inverse

// Foreground mask from a frozen random network: resize to input_edge,
// normalize, forward, reduce the feature map to 4x4 with one extra
// max-pool (kernel 2, stride 2, ceil mode), sum channels, then keep the
// top 8 cells by value (ties: earlier row-major cell wins).
// A feature map that does not pool to 4x4 is a ConfigError.
PatchMask compute_patch_mask(const net::Network& mask_net, const Tensor& image,
                             int64_t input_edge = 0);

// Masks for a whole manifest, parallel over `workers` threads. Slot order
// matches manifest order for any worker count. The first per-record error
// aborts the pass.
std::vector<PatchMask> compute_mask_table(const net::Network& mask_net,
                                          const std::string& manifest_path,
                                          int64_t input_edge = 0, int workers = 1);

// Mask cache sidecar: "TBMK", u32 version, u64 mask-net seed, u64 count,
// then count little-endian u16 masks in manifest order.
struct MaskCache {
  uint64_t seed = 0;
  std::vector<PatchMask> masks;
};

void write_mask_cache(const std::string& path, const MaskCache& cache);
MaskCache read_mask_cache(const std::string& path);

struct MergedView {
  Tensor image;
  PatchMask fg_mask = 0;          // cells that kept the foreground source
  int64_t fg_source = -1;         // pool indices, when known
  int64_t bg_source = -1;
  std::array<int, 8> sigma{};     // k-th background slot <- partner cell sigma[k]
};

// Foreground cells of m1 keep x1's patches in place; the 8 background
// slots are filled with x2's 8 background patches (cells where m2 is 0)
// in an rng-shuffled order. Both masks must have exactly 8 ones.
MergedView merge(const Tensor& x1, PatchMask m1, const Tensor& x2, PatchMask m2, RngState& rng);

// Baseline: one uniformly random 8-of-16 mask per call, applied to both
// images, then merged exactly as above.
MergedView random_merge(const Tensor& x1, const Tensor& x2, RngState& rng);

// Baseline: lam*x1 + (1-lam)*x2. Draw lam with draw_mixup_lambda (Beta(1,1),
// i.e. uniform on [0,1)).
Tensor mixup(const Tensor& x1, const Tensor& x2, double lambda);
double draw_mixup_lambda(RngState& rng);

// Photometric/geometric view pipeline. Every transform draws from its own
// named child stream of the rng handed to apply() ("crop", "flip",
// "jitter", "gray"), so disabling one transform never shifts another's
// samples. Pass a fresh per-view stream to apply(); reusing one replays
// the same draws.
struct PipelineConfig {
  int64_t out_edge = 64;
  bool crop = true;            // random resized crop
  double crop_area_min = 0.2;
  double crop_area_max = 1.0;
  bool flip = true;
  double flip_prob = 0.5;
  bool jitter = true;          // brightness, contrast, saturation
  double jitter_prob = 0.8;
  double jitter_strength = 0.4;
  bool grayscale = true;
  double grayscale_prob = 0.2;
};

class AugmentationPipeline {
 public:
  AugmentationPipeline() = default;
  explicit AugmentationPipeline(PipelineConfig config);
  const PipelineConfig& config() const { return config_; }

  // (3,H,W) in [0,1] -> (3,out_edge,out_edge) in [0,1].
  Tensor apply(const Tensor& image, RngState& rng) const;

 private:
  PipelineConfig config_{};
};

// One contrastive view of pool image k. With probability p the view is a
// merged image (partner drawn uniformly from the whole pool, self
// included unless allow_self is false), otherwise the plain image; either
// way the pipeline is applied with the "pipeline" child stream. The gate,
// partner choice, and shuffle use their own child streams, so p = 0
// reproduces the plain view draw-for-draw.
struct ViewSample {
  Tensor image;
  bool merged = false;
  int64_t partner = -1;
};

ViewSample sample_view(int64_t k, const std::vector<Tensor>& pool,
                       const std::vector<PatchMask>& masks, double p, RngState& rng,
                       const AugmentationPipeline& pipeline, bool allow_self = true);

}  // namespace tobias::aug
