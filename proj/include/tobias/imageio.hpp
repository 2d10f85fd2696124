#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tobias/rng.hpp"
#include "tobias/tensor.hpp"

namespace tobias::img {

// Images are Tensor of shape (3,H,W), RGB, values in [0,1] until
// normalization. Boxes are inclusive pixel rectangles.
struct Box {
  int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int64_t width() const { return x1 - x0 + 1; }
  int64_t height() const { return y1 - y0 + 1; }
  int64_t area() const { return width() * height(); }
  bool operator==(const Box&) const = default;
};

inline constexpr std::array<float, 3> kImagenetMean = {0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kImagenetStd = {0.229f, 0.224f, 0.225f};

// Binary P6 PPM, maxval 255. The write/read pair is bit-exact for any
// image that was quantized to bytes.
Tensor read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor& image);

// 8-bit PNG reader (color types 0/2/3/4/6, filters 0-4, no interlace).
// Alpha channels are dropped. Decompression and CRC checks use zlib.
Tensor read_png(const std::string& path);

// Dispatches on the file's magic bytes, not its extension.
Tensor read_image(const std::string& path);

// Bilinear resampling with half-pixel centers; identity when the size
// does not change.
Tensor resize_bilinear(const Tensor& image, int64_t out_h, int64_t out_w);

// Per-channel (x - mean) / std and its inverse.
Tensor normalize(const Tensor& image, const std::array<float, 3>& mean = kImagenetMean,
                 const std::array<float, 3>& stdev = kImagenetStd);
Tensor denormalize(const Tensor& image, const std::array<float, 3>& mean = kImagenetMean,
                   const std::array<float, 3>& stdev = kImagenetStd);

// Stacks equally sized (3,H,W) images into an (N,3,H,W) batch.
Tensor to_batch(const std::vector<Tensor>& images);

// One line of a JSONL manifest: {"image": "...", "box": [x0,y0,x1,y1],
// "label": k}. box and label are optional.
struct ManifestRecord {
  std::string image;
  std::optional<Box> box;
  std::optional<int64_t> label;
};

std::vector<ManifestRecord> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records);

// Synthetic localization scenes: a smooth gradient background (textureless
// on purpose) with one textured rectangle whose bounds are the ground-truth
// box. The texture kind is the class label.
enum class TextureKind { Checker = 0, Noise = 1, Stripes = 2 };
inline constexpr int64_t kNumTextureKinds = 3;

struct SynthParams {
  int64_t count = 200;
  int64_t edge = 64;
  int64_t min_object = 24;
  int64_t max_object = 40;
  int64_t texture_kinds = kNumTextureKinds;  // restrict labels to the first k kinds
  uint64_t seed = 0;
};

// One scene; the label and inclusive box are returned through the record.
Tensor synth_scene(RngState& rng, const SynthParams& params, Box* box, int64_t* label);

// Writes scenes as PPM files plus a manifest.jsonl into dir (created if
// missing) and returns the records.
std::vector<ManifestRecord> generate_synthetic_dataset(const std::string& dir,
                                                       const SynthParams& params);

// Min-max normalizes map (constant maps become 0.5), colors it with a jet
// ramp, resizes to the image extent, and alpha-blends at 0.5.
Tensor render_heatmap(const Tensor& image, const Tensor& map2d);

}  // namespace tobias::img
