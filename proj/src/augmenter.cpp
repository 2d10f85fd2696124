#include "tobias/augmenter.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <thread>

#include "tobias/errors.hpp"
#include "tobias/ops.hpp"

namespace tobias::aug {

int popcount16(PatchMask mask) {
  int n = 0;
  for (; mask; mask = static_cast<PatchMask>(mask & (mask - 1))) ++n;
  return n;
}

PatchMask pack_mask(const loc::MaskGrid& grid) {
  if (grid.order() != 2 || grid.dim(0) != kGrid || grid.dim(1) != kGrid)
    throw DimensionError("pack_mask: expected a 4x4 grid, got " + grid.shape_string());
  PatchMask mask = 0;
  for (int64_t i = 0; i < kCells; ++i)
    if (grid[i]) mask = static_cast<PatchMask>(mask | (1u << i));
  return mask;
}

loc::MaskGrid unpack_mask(PatchMask mask) {
  loc::MaskGrid grid({kGrid, kGrid});
  for (int64_t i = 0; i < kCells; ++i) grid[i] = (mask >> i) & 1u;
  return grid;
}

PatchGrid split_patches(const Tensor& image) {
  if (image.order() != 3 || image.dim(0) != 3)
    throw DimensionError("split_patches: expected a (3,S,S) image, got " + image.shape_string());
  const int64_t h = image.dim(1), w = image.dim(2);
  if (h != w) throw DimensionError("split_patches: image must be square, got " + image.shape_string());
  if (h % kGrid != 0)
    throw DimensionError("split_patches: side " + std::to_string(h) + " is not divisible by 4");
  PatchGrid grid;
  grid.r = h / kGrid;
  grid.patches.reserve(kCells);
  for (int64_t i = 0; i < kGrid; ++i)
    for (int64_t j = 0; j < kGrid; ++j) {
      Tensor patch({3, grid.r, grid.r});
      for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < grid.r; ++y)
          for (int64_t x = 0; x < grid.r; ++x)
            patch.at(c, y, x) = image.at(c, i * grid.r + y, j * grid.r + x);
      grid.patches.push_back(std::move(patch));
    }
  return grid;
}

Tensor reassemble(const PatchGrid& grid) {
  if (grid.r < 1 || grid.patches.size() != kCells)
    throw InvariantError("reassemble: grid must hold 16 patches");
  const int64_t side = grid.r * kGrid;
  Tensor image({3, side, side});
  for (int64_t i = 0; i < kGrid; ++i)
    for (int64_t j = 0; j < kGrid; ++j) {
      const Tensor& patch = grid.patches[static_cast<size_t>(i * kGrid + j)];
      if (patch.dims() != std::vector<int64_t>{3, grid.r, grid.r})
        throw InvariantError("reassemble: patch " + std::to_string(i * kGrid + j) +
                             " has shape " + patch.shape_string());
      for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < grid.r; ++y)
          for (int64_t x = 0; x < grid.r; ++x)
            image.at(c, i * grid.r + y, j * grid.r + x) = patch.at(c, y, x);
    }
  return image;
}

PatchMask compute_patch_mask(const net::Network& mask_net, const Tensor& image,
                             int64_t input_edge) {
  const int64_t edge = input_edge > 0 ? input_edge : mask_net.spec().input_size;
  Tensor prepared = img::normalize(img::resize_bilinear(image, edge, edge));
  Tensor features = mask_net.forward_features(img::to_batch({prepared}));
  Tensor pooled = maxpool2d(features, 2, 2, /*ceil_mode=*/true);
  if (pooled.dim(2) != kGrid || pooled.dim(3) != kGrid)
    throw ConfigError("compute_patch_mask: feature map " + std::to_string(features.dim(2)) + "x" +
                      std::to_string(features.dim(3)) + " pools to " +
                      std::to_string(pooled.dim(2)) + "x" + std::to_string(pooled.dim(3)) +
                      ", need 4x4; adjust the input edge or mask network");
  Tensor one({pooled.dim(1), kGrid, kGrid});
  for (int64_t i = 0; i < one.size(); ++i) one[i] = pooled[i];
  Tensor amap = loc::aggregate_channels(one);
  return pack_mask(loc::median_mask(amap, kForeground));
}

std::vector<PatchMask> compute_mask_table(const net::Network& mask_net,
                                          const std::string& manifest_path, int64_t input_edge,
                                          int workers) {
  if (workers < 1) throw ConfigError("compute_mask_table: workers must be >= 1");
  const auto records = img::read_manifest(manifest_path);
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();

  std::vector<PatchMask> masks(records.size(), 0);
  std::vector<std::string> errors(records.size());
  std::atomic<size_t> cursor{0};
  auto worker = [&]() {
    for (;;) {
      const size_t i = cursor.fetch_add(1);
      if (i >= records.size()) return;
      try {
        const std::string path = std::filesystem::path(records[i].image).is_absolute()
                                     ? records[i].image
                                     : (base / records[i].image).string();
        masks[i] = compute_patch_mask(mask_net, img::read_image(path), input_edge);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < workers; ++t) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }
  for (size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty())
      throw IoError("mask precompute failed for " + records[i].image + ": " + errors[i]);
  return masks;
}

namespace {

constexpr char kCacheMagic[4] = {'T', 'B', 'M', 'K'};
constexpr uint32_t kCacheVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw ParseError("mask cache truncated at " + what);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t get_u64(std::istream& in, const std::string& what) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw ParseError("mask cache truncated at " + what);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void write_mask_cache(const std::string& path, const MaskCache& cache) {
  for (size_t i = 0; i < cache.masks.size(); ++i)
    if (popcount16(cache.masks[i]) != kForeground)
      throw InvariantError("write_mask_cache: mask " + std::to_string(i) + " has popcount " +
                           std::to_string(popcount16(cache.masks[i])) + ", expected 8");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write mask cache " + path);
  out.write(kCacheMagic, 4);
  put_u32(out, kCacheVersion);
  put_u64(out, cache.seed);
  put_u64(out, static_cast<uint64_t>(cache.masks.size()));
  for (PatchMask m : cache.masks) {
    unsigned char b[2] = {static_cast<unsigned char>(m & 0xff),
                          static_cast<unsigned char>(m >> 8)};
    out.write(reinterpret_cast<const char*>(b), 2);
  }
  if (!out) throw IoError("short write to mask cache " + path);
}

MaskCache read_mask_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open mask cache " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCacheMagic, 4) != 0)
    throw ParseError(path + ": not a mask cache (bad magic)");
  const uint32_t version = get_u32(in, "version");
  if (version != kCacheVersion)
    throw ParseError(path + ": unsupported mask cache version " + std::to_string(version));
  MaskCache cache;
  cache.seed = get_u64(in, "seed");
  const uint64_t count = get_u64(in, "count");
  cache.masks.resize(count);
  for (uint64_t i = 0; i < count; ++i) {
    unsigned char b[2];
    if (!in.read(reinterpret_cast<char*>(b), 2))
      throw ParseError(path + ": truncated at mask " + std::to_string(i));
    const PatchMask m = static_cast<PatchMask>(b[0] | (static_cast<uint16_t>(b[1]) << 8));
    if (popcount16(m) != kForeground)
      throw ParseError(path + ": mask " + std::to_string(i) + " has popcount " +
                       std::to_string(popcount16(m)) + ", expected 8");
    cache.masks[i] = m;
  }
  return cache;
}

namespace {

// Background cells of a mask, row-major.
std::array<int, 8> background_cells(PatchMask mask) {
  std::array<int, 8> cells{};
  int n = 0;
  for (int i = 0; i < kCells; ++i)
    if (!((mask >> i) & 1u)) cells[static_cast<size_t>(n++)] = i;
  return cells;
}

MergedView merge_impl(const Tensor& x1, PatchMask m1, const Tensor& x2, PatchMask m2,
                      RngState& rng) {
  if (x1.dims() != x2.dims())
    throw DimensionError("merge: image shapes differ, " + x1.shape_string() + " vs " +
                         x2.shape_string());
  PatchGrid g1 = split_patches(x1);
  PatchGrid g2 = split_patches(x2);

  const std::array<int, 8> slots = background_cells(m1);    // where x1 lost
  const std::array<int, 8> donors = background_cells(m2);   // what x2 gives
  std::array<int, 8> perm{};
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = 7; i > 0; --i) {
    const int j = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(i) + 1));
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
  }

  MergedView view;
  view.fg_mask = m1;
  PatchGrid out = g1;  // foreground patches stay in place
  for (size_t k = 0; k < 8; ++k) {
    view.sigma[k] = donors[static_cast<size_t>(perm[k])];
    out.patches[static_cast<size_t>(slots[k])] =
        g2.patches[static_cast<size_t>(view.sigma[k])];
  }
  view.image = reassemble(out);
  return view;
}

}  // namespace

MergedView merge(const Tensor& x1, PatchMask m1, const Tensor& x2, PatchMask m2, RngState& rng) {
  if (popcount16(m1) != kForeground)
    throw InvariantError("merge: foreground mask has popcount " +
                         std::to_string(popcount16(m1)) + ", expected 8");
  if (popcount16(m2) != kForeground)
    throw InvariantError("merge: background mask has popcount " +
                         std::to_string(popcount16(m2)) + ", expected 8");
  return merge_impl(x1, m1, x2, m2, rng);
}

MergedView random_merge(const Tensor& x1, const Tensor& x2, RngState& rng) {
  std::array<int, kCells> cells{};
  std::iota(cells.begin(), cells.end(), 0);
  for (int i = 0; i < kForeground; ++i) {
    const int j = i + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(kCells - i)));
    std::swap(cells[static_cast<size_t>(i)], cells[static_cast<size_t>(j)]);
  }
  PatchMask mask = 0;
  for (int i = 0; i < kForeground; ++i) mask = static_cast<PatchMask>(mask | (1u << cells[static_cast<size_t>(i)]));
  return merge_impl(x1, mask, x2, mask, rng);
}

Tensor mixup(const Tensor& x1, const Tensor& x2, double lambda) {
  if (x1.dims() != x2.dims())
    throw DimensionError("mixup: image shapes differ, " + x1.shape_string() + " vs " +
                         x2.shape_string());
  if (lambda < 0.0 || lambda > 1.0)
    throw ConfigError("mixup: lambda must be in [0,1], got " + std::to_string(lambda));
  Tensor out(x1.dims());
  const float l = static_cast<float>(lambda);
  for (int64_t i = 0; i < out.size(); ++i) out[i] = l * x1[i] + (1.0f - l) * x2[i];
  return out;
}

double draw_mixup_lambda(RngState& rng) { return rng.uniform(); }

AugmentationPipeline::AugmentationPipeline(PipelineConfig config) : config_(config) {
  if (config_.out_edge < 1) throw ConfigError("pipeline: out_edge must be >= 1");
  if (config_.crop_area_min <= 0.0 || config_.crop_area_min > config_.crop_area_max ||
      config_.crop_area_max > 1.0)
    throw ConfigError("pipeline: need 0 < crop_area_min <= crop_area_max <= 1");
}

namespace {

float clamp01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

Tensor random_resized_crop(const Tensor& image, int64_t out_edge, double area_min,
                           double area_max, RngState& rng) {
  const int64_t h = image.dim(1), w = image.dim(2);
  int64_t ch = 0, cw = 0, cy = 0, cx = 0;
  bool found = false;
  for (int attempt = 0; attempt < 10 && !found; ++attempt) {
    const double target_area = rng.uniform(area_min, area_max) * static_cast<double>(h * w);
    const double log_ratio = rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0));
    const double ratio = std::exp(log_ratio);
    cw = static_cast<int64_t>(std::lround(std::sqrt(target_area * ratio)));
    ch = static_cast<int64_t>(std::lround(std::sqrt(target_area / ratio)));
    if (cw >= 1 && ch >= 1 && cw <= w && ch <= h) {
      cx = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(w - cw + 1)));
      cy = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(h - ch + 1)));
      found = true;
    }
  }
  if (!found) {  // center square fallback
    ch = cw = std::min(h, w);
    cy = (h - ch) / 2;
    cx = (w - cw) / 2;
  }
  Tensor crop({3, ch, cw});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < ch; ++y)
      for (int64_t x = 0; x < cw; ++x) crop.at(c, y, x) = image.at(c, cy + y, cx + x);
  return img::resize_bilinear(crop, out_edge, out_edge);
}

void mirror_horizontal(Tensor& image) {
  const int64_t h = image.dim(1), w = image.dim(2);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w / 2; ++x)
        std::swap(image.at(c, y, x), image.at(c, y, w - 1 - x));
}

float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

// Brightness, contrast, saturation, in that fixed order, each with a
// factor uniform in [max(0, 1-s), 1+s]. Values clamp to [0,1] after each.
void color_jitter(Tensor& image, double strength, RngState& rng) {
  const int64_t pixels = image.dim(1) * image.dim(2);
  const double lo = std::max(0.0, 1.0 - strength), hi = 1.0 + strength;

  const float fb = static_cast<float>(rng.uniform(lo, hi));
  for (int64_t i = 0; i < image.size(); ++i) image[i] = clamp01(image[i] * fb);

  const float fc = static_cast<float>(rng.uniform(lo, hi));
  double mean = 0.0;
  for (int64_t s = 0; s < pixels; ++s)
    mean += luma(image[s], image[pixels + s], image[2 * pixels + s]);
  const float m = static_cast<float>(mean / static_cast<double>(pixels));
  for (int64_t i = 0; i < image.size(); ++i) image[i] = clamp01((image[i] - m) * fc + m);

  const float fs = static_cast<float>(rng.uniform(lo, hi));
  for (int64_t s = 0; s < pixels; ++s) {
    const float g = luma(image[s], image[pixels + s], image[2 * pixels + s]);
    for (int64_t c = 0; c < 3; ++c) {
      float& v = image[c * pixels + s];
      v = clamp01((v - g) * fs + g);
    }
  }
}

void to_grayscale(Tensor& image) {
  const int64_t pixels = image.dim(1) * image.dim(2);
  for (int64_t s = 0; s < pixels; ++s) {
    const float g = luma(image[s], image[pixels + s], image[2 * pixels + s]);
    image[s] = image[pixels + s] = image[2 * pixels + s] = g;
  }
}

}  // namespace

Tensor AugmentationPipeline::apply(const Tensor& image, RngState& rng) const {
  if (image.order() != 3 || image.dim(0) != 3)
    throw DimensionError("pipeline: expected a (3,H,W) image, got " + image.shape_string());

  Tensor out;
  if (config_.crop) {
    RngState crop_rng = rng.stream("crop");
    out = random_resized_crop(image, config_.out_edge, config_.crop_area_min,
                              config_.crop_area_max, crop_rng);
  } else {
    out = img::resize_bilinear(image, config_.out_edge, config_.out_edge);
  }
  if (config_.flip) {
    RngState flip_rng = rng.stream("flip");
    if (flip_rng.bernoulli(config_.flip_prob)) mirror_horizontal(out);
  }
  if (config_.jitter) {
    RngState jitter_rng = rng.stream("jitter");
    if (jitter_rng.bernoulli(config_.jitter_prob))
      color_jitter(out, config_.jitter_strength, jitter_rng);
  }
  if (config_.grayscale) {
    RngState gray_rng = rng.stream("gray");
    if (gray_rng.bernoulli(config_.grayscale_prob)) to_grayscale(out);
  }
  return out;
}

ViewSample sample_view(int64_t k, const std::vector<Tensor>& pool,
                       const std::vector<PatchMask>& masks, double p, RngState& rng,
                       const AugmentationPipeline& pipeline, bool allow_self) {
  if (p < 0.0 || p > 1.0) throw ConfigError("sample_view: p must be in [0,1]");
  if (k < 0 || k >= static_cast<int64_t>(pool.size()))
    throw ConfigError("sample_view: index " + std::to_string(k) + " outside pool of " +
                      std::to_string(pool.size()));
  if (p > 0.0) {
    if (pool.empty()) throw ConfigError("sample_view: merge requested on an empty pool");
    if (!allow_self && pool.size() < 2)
      throw ConfigError("sample_view: self-merge excluded but the pool has one image");
    if (masks.size() != pool.size())
      throw ConfigError("sample_view: mask table size " + std::to_string(masks.size()) +
                        " does not match pool size " + std::to_string(pool.size()));
  }

  ViewSample sample;
  RngState gate_rng = rng.stream("gate");
  if (p > 0.0 && gate_rng.bernoulli(p)) {
    RngState partner_rng = rng.stream("partner");
    int64_t m;
    if (allow_self) {
      m = static_cast<int64_t>(partner_rng.uniform_index(pool.size()));
    } else {
      m = static_cast<int64_t>(partner_rng.uniform_index(pool.size() - 1));
      if (m >= k) ++m;
    }
    RngState sigma_rng = rng.stream("sigma");
    MergedView view = merge(pool[static_cast<size_t>(k)], masks[static_cast<size_t>(k)],
                            pool[static_cast<size_t>(m)], masks[static_cast<size_t>(m)],
                            sigma_rng);
    sample.merged = true;
    sample.partner = m;
    RngState pipe_rng = rng.stream("pipeline");
    sample.image = pipeline.apply(view.image, pipe_rng);
  } else {
    RngState pipe_rng = rng.stream("pipeline");
    sample.image = pipeline.apply(pool[static_cast<size_t>(k)], pipe_rng);
  }
  return sample;
}

}  // namespace tobias::aug
