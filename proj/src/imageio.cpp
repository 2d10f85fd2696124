#include "tobias/imageio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>
#include <zlib.h>

#include "tobias/errors.hpp"

namespace tobias::img {

namespace {

uint8_t quantize(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<uint8_t>(std::lround(c * 255.0f));
}

void check_image(const Tensor& image, const char* who) {
  if (image.order() != 3 || image.dim(0) != 3)
    throw DimensionError(std::string(who) + ": expected a (3,H,W) image, got " +
                         image.shape_string());
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw ParseError(path + ": not a binary P6 PPM (magic '" + magic + "')");

  // Header tokens may be separated by whitespace and '#' comments.
  auto next_int = [&](const char* field) -> int64_t {
    for (;;) {
      int c = in.peek();
      if (c == EOF) throw ParseError(path + ": truncated header before " + field);
      if (std::isspace(c)) {
        in.get();
        continue;
      }
      if (c == '#') {
        std::string comment;
        std::getline(in, comment);
        continue;
      }
      break;
    }
    int64_t v = 0;
    if (!(in >> v)) throw ParseError(path + ": bad " + field + " in header");
    return v;
  };
  const int64_t w = next_int("width");
  const int64_t h = next_int("height");
  const int64_t maxval = next_int("maxval");
  if (w < 1 || h < 1) throw ParseError(path + ": bad dimensions");
  if (maxval != 255) throw ParseError(path + ": only maxval 255 is supported, got " +
                                      std::to_string(maxval));
  in.get();  // single whitespace after maxval

  std::vector<uint8_t> raw(static_cast<size_t>(3 * w * h));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<size_t>(in.gcount()) != raw.size())
    throw ParseError(path + ": truncated pixel data");

  Tensor img({3, h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<float>(raw[static_cast<size_t>((y * w + x) * 3 + c)]) / 255.0f;
  return img;
}

void write_ppm(const std::string& path, const Tensor& image) {
  check_image(image, "write_ppm");
  const int64_t h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> raw(static_cast<size_t>(3 * w * h));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        raw[static_cast<size_t>((y * w + x) * 3 + c)] = quantize(image.at(c, y, x));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("short write to " + path);
}

namespace {

uint32_t be32(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

std::vector<uint8_t> zlib_inflate(const std::vector<uint8_t>& in, size_t expected,
                                  const std::string& path) {
  std::vector<uint8_t> out(expected);
  z_stream zs;
  std::memset(&zs, 0, sizeof(zs));
  if (inflateInit(&zs) != Z_OK) throw IoError(path + ": zlib init failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || zs.total_out != expected)
    throw ParseError(path + ": corrupt or truncated PNG stream (inflate rc " + std::to_string(rc) +
                     ", got " + std::to_string(zs.total_out) + " of " + std::to_string(expected) +
                     " bytes)");
  return out;
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

Tensor read_png(const std::string& path) {
  const std::vector<uint8_t> bytes = read_file(path);
  static const uint8_t kSig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSig, 8) != 0)
    throw ParseError(path + ": not a PNG file");

  int64_t width = 0, height = 0;
  int bit_depth = 0, color_type = 0, interlace = 0;
  std::vector<uint8_t> idat;
  std::vector<std::array<uint8_t, 3>> palette;
  bool saw_ihdr = false, saw_iend = false;

  size_t pos = 8;
  while (pos + 8 <= bytes.size()) {
    const uint32_t len = be32(&bytes[pos]);
    if (pos + 12 + len > bytes.size()) throw ParseError(path + ": truncated chunk");
    const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
    const uint8_t* data = &bytes[pos + 8];
    const uint32_t crc_stored = be32(&bytes[pos + 8 + len]);
    const uint32_t crc_actual = static_cast<uint32_t>(
        crc32(crc32(0L, &bytes[pos + 4], 4), data, static_cast<uInt>(len)));
    if (crc_stored != crc_actual)
      throw ParseError(path + ": CRC mismatch in " + std::string(type, 4) + " chunk");

    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw ParseError(path + ": bad IHDR length");
      width = be32(data);
      height = be32(data + 4);
      bit_depth = data[8];
      color_type = data[9];
      interlace = data[12];
      saw_ihdr = true;
      if (width < 1 || height < 1) throw ParseError(path + ": bad dimensions");
      if (bit_depth != 8)
        throw ParseError(path + ": only 8-bit PNGs are supported, got depth " +
                         std::to_string(bit_depth));
      if (color_type != 0 && color_type != 2 && color_type != 3 && color_type != 4 &&
          color_type != 6)
        throw ParseError(path + ": unsupported color type " + std::to_string(color_type));
      if (interlace != 0) throw ParseError(path + ": interlaced PNGs are not supported");
    } else if (std::memcmp(type, "PLTE", 4) == 0) {
      if (len % 3 != 0) throw ParseError(path + ": bad PLTE length");
      palette.resize(len / 3);
      for (size_t i = 0; i < palette.size(); ++i)
        palette[i] = {data[3 * i], data[3 * i + 1], data[3 * i + 2]};
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
      break;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr) throw ParseError(path + ": missing IHDR");
  if (!saw_iend) throw ParseError(path + ": missing IEND");
  if (idat.empty()) throw ParseError(path + ": no pixel data");
  if (color_type == 3 && palette.empty()) throw ParseError(path + ": palette image without PLTE");

  const int channels = color_type == 0 ? 1 : color_type == 2 ? 3 : color_type == 3 ? 1
                       : color_type == 4 ? 2 : 4;
  const size_t row_bytes = static_cast<size_t>(width) * static_cast<size_t>(channels);
  const size_t expected = (row_bytes + 1) * static_cast<size_t>(height);
  std::vector<uint8_t> raw = zlib_inflate(idat, expected, path);

  // Undo per-row filters in place (scanline layout: filter byte + samples).
  const int bpp = channels;  // bytes per pixel at depth 8
  std::vector<uint8_t> pixels(row_bytes * static_cast<size_t>(height));
  for (int64_t y = 0; y < height; ++y) {
    const uint8_t filter = raw[(row_bytes + 1) * static_cast<size_t>(y)];
    const uint8_t* src = &raw[(row_bytes + 1) * static_cast<size_t>(y) + 1];
    uint8_t* cur = &pixels[row_bytes * static_cast<size_t>(y)];
    const uint8_t* up = y > 0 ? &pixels[row_bytes * static_cast<size_t>(y - 1)] : nullptr;
    switch (filter) {
      case 0:
        std::memcpy(cur, src, row_bytes);
        break;
      case 1:
        for (size_t i = 0; i < row_bytes; ++i) {
          const int left = i >= static_cast<size_t>(bpp) ? cur[i - bpp] : 0;
          cur[i] = static_cast<uint8_t>((src[i] + left) & 0xFF);
        }
        break;
      case 2:
        for (size_t i = 0; i < row_bytes; ++i) {
          const int above = up ? up[i] : 0;
          cur[i] = static_cast<uint8_t>((src[i] + above) & 0xFF);
        }
        break;
      case 3:
        for (size_t i = 0; i < row_bytes; ++i) {
          const int left = i >= static_cast<size_t>(bpp) ? cur[i - bpp] : 0;
          const int above = up ? up[i] : 0;
          cur[i] = static_cast<uint8_t>((src[i] + (left + above) / 2) & 0xFF);
        }
        break;
      case 4:
        for (size_t i = 0; i < row_bytes; ++i) {
          const int left = i >= static_cast<size_t>(bpp) ? cur[i - bpp] : 0;
          const int above = up ? up[i] : 0;
          const int upleft = (up && i >= static_cast<size_t>(bpp)) ? up[i - bpp] : 0;
          cur[i] = static_cast<uint8_t>((src[i] + paeth(left, above, upleft)) & 0xFF);
        }
        break;
      default:
        throw ParseError(path + ": unknown filter type " + std::to_string(filter) + " in row " +
                         std::to_string(y));
    }
  }

  Tensor img({3, height, width});
  for (int64_t y = 0; y < height; ++y) {
    const uint8_t* row = &pixels[row_bytes * static_cast<size_t>(y)];
    for (int64_t x = 0; x < width; ++x) {
      uint8_t r = 0, g = 0, b = 0;
      const uint8_t* px = row + x * channels;
      switch (color_type) {
        case 0: r = g = b = px[0]; break;
        case 2: r = px[0]; g = px[1]; b = px[2]; break;
        case 3: {
          const uint8_t idx = px[0];
          if (idx >= palette.size())
            throw ParseError(path + ": palette index " + std::to_string(idx) + " out of range");
          r = palette[idx][0];
          g = palette[idx][1];
          b = palette[idx][2];
          break;
        }
        case 4: r = g = b = px[0]; break;  // alpha dropped
        case 6: r = px[0]; g = px[1]; b = px[2]; break;  // alpha dropped
      }
      img.at(0, y, x) = static_cast<float>(r) / 255.0f;
      img.at(1, y, x) = static_cast<float>(g) / 255.0f;
      img.at(2, y, x) = static_cast<float>(b) / 255.0f;
    }
  }
  return img;
}

Tensor read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char head[2] = {0, 0};
  in.read(head, 2);
  in.close();
  if (head[0] == 'P' && head[1] == '6') return read_ppm(path);
  if (static_cast<uint8_t>(head[0]) == 0x89 && head[1] == 'P') return read_png(path);
  throw ParseError(path + ": unrecognized image format (need P6 PPM or PNG)");
}

Tensor resize_bilinear(const Tensor& image, int64_t out_h, int64_t out_w) {
  check_image(image, "resize_bilinear");
  if (out_h < 1 || out_w < 1) throw DimensionError("resize_bilinear: non-positive output size");
  const int64_t h = image.dim(1), w = image.dim(2);
  if (h == out_h && w == out_w) return image;
  Tensor out({3, out_h, out_w});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (int64_t oy = 0; oy < out_h; ++oy) {
    double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
    const int64_t y0 = static_cast<int64_t>(fy);
    const int64_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (int64_t ox = 0; ox < out_w; ++ox) {
      double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
      const int64_t x0 = static_cast<int64_t>(fx);
      const int64_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (int64_t c = 0; c < 3; ++c) {
        const double top = (1.0 - wx) * image.at(c, y0, x0) + wx * image.at(c, y0, x1);
        const double bot = (1.0 - wx) * image.at(c, y1, x0) + wx * image.at(c, y1, x1);
        out.at(c, oy, ox) = static_cast<float>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

Tensor normalize(const Tensor& image, const std::array<float, 3>& mean,
                 const std::array<float, 3>& stdev) {
  check_image(image, "normalize");
  Tensor out(image.dims());
  const int64_t spatial = image.dim(1) * image.dim(2);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t s = 0; s < spatial; ++s)
      out[c * spatial + s] = (image[c * spatial + s] - mean[static_cast<size_t>(c)]) /
                             stdev[static_cast<size_t>(c)];
  return out;
}

Tensor denormalize(const Tensor& image, const std::array<float, 3>& mean,
                   const std::array<float, 3>& stdev) {
  check_image(image, "denormalize");
  Tensor out(image.dims());
  const int64_t spatial = image.dim(1) * image.dim(2);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t s = 0; s < spatial; ++s)
      out[c * spatial + s] = image[c * spatial + s] * stdev[static_cast<size_t>(c)] +
                             mean[static_cast<size_t>(c)];
  return out;
}

Tensor to_batch(const std::vector<Tensor>& images) {
  if (images.empty()) throw DimensionError("to_batch: empty image list");
  check_image(images[0], "to_batch");
  const int64_t h = images[0].dim(1), w = images[0].dim(2);
  Tensor batch({static_cast<int64_t>(images.size()), 3, h, w});
  const int64_t per = 3 * h * w;
  for (size_t i = 0; i < images.size(); ++i) {
    if (!images[i].same_shape(images[0]))
      throw DimensionError("to_batch: image " + std::to_string(i) + " has shape " +
                           images[i].shape_string() + ", expected " + images[0].shape_string());
    for (int64_t j = 0; j < per; ++j) batch[static_cast<int64_t>(i) * per + j] = images[i][j];
  }
  return batch;
}

std::vector<ManifestRecord> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  std::vector<ManifestRecord> records;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      ManifestRecord rec;
      rec.image = j.at("image").get<std::string>();
      if (j.contains("box") && !j.at("box").is_null()) {
        const auto v = j.at("box").get<std::vector<int64_t>>();
        if (v.size() != 4)
          throw ParseError(path + ":" + std::to_string(lineno) + ": box needs 4 entries");
        rec.box = Box{v[0], v[1], v[2], v[3]};
      }
      if (j.contains("label") && !j.at("label").is_null())
        rec.label = j.at("label").get<int64_t>();
      records.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path);
  for (const ManifestRecord& rec : records) {
    nlohmann::json j;
    j["image"] = rec.image;
    if (rec.box) j["box"] = {rec.box->x0, rec.box->y0, rec.box->x1, rec.box->y1};
    if (rec.label) j["label"] = *rec.label;
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("short write to " + path);
}

Tensor synth_scene(RngState& rng, const SynthParams& params, Box* box, int64_t* label) {
  const int64_t e = params.edge;
  if (e < 8 || params.min_object < 2 || params.max_object < params.min_object ||
      params.max_object > e)
    throw ConfigError("synth_scene: inconsistent scene geometry");
  if (params.texture_kinds < 1 || params.texture_kinds > kNumTextureKinds)
    throw ConfigError("synth_scene: texture_kinds must be in [1, " +
                      std::to_string(kNumTextureKinds) + "]");

  Tensor img({3, e, e});
  // Smooth two-corner gradient; textureless so a random conv stack has
  // little to respond to.
  float base[3], slope_x[3], slope_y[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = static_cast<float>(rng.uniform(0.25, 0.55));
    slope_x[c] = static_cast<float>(rng.uniform(-0.25, 0.25));
    slope_y[c] = static_cast<float>(rng.uniform(-0.25, 0.25));
  }
  for (int64_t y = 0; y < e; ++y)
    for (int64_t x = 0; x < e; ++x) {
      const float fy = static_cast<float>(y) / static_cast<float>(e - 1);
      const float fx = static_cast<float>(x) / static_cast<float>(e - 1);
      for (int64_t c = 0; c < 3; ++c)
        img.at(c, y, x) = std::clamp(base[c] + slope_x[c] * fx + slope_y[c] * fy, 0.0f, 1.0f);
    }

  const int64_t ow = params.min_object +
                     static_cast<int64_t>(rng.uniform_index(
                         static_cast<uint64_t>(params.max_object - params.min_object + 1)));
  const int64_t oh = params.min_object +
                     static_cast<int64_t>(rng.uniform_index(
                         static_cast<uint64_t>(params.max_object - params.min_object + 1)));
  const int64_t x0 = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(e - ow + 1)));
  const int64_t y0 = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(e - oh + 1)));
  const TextureKind kind = static_cast<TextureKind>(
      rng.uniform_index(static_cast<uint64_t>(params.texture_kinds)));

  // Two-color palette for checker/stripe cells. Pairs that land too close in
  // RGB leave near-invisible texture, so redraw until the summed per-channel
  // separation clears a floor and every object carries usable local contrast.
  constexpr double kMinPaletteContrast = 0.45;
  float ca[3], cb[3];
  for (;;) {
    double sep = 0.0;
    for (int c = 0; c < 3; ++c) {
      ca[c] = static_cast<float>(rng.uniform(0.0, 1.0));
      cb[c] = static_cast<float>(rng.uniform(0.0, 1.0));
      sep += std::abs(ca[c] - cb[c]);
    }
    if (sep >= kMinPaletteContrast) break;
  }

  for (int64_t y = y0; y < y0 + oh; ++y)
    for (int64_t x = x0; x < x0 + ow; ++x) {
      switch (kind) {
        case TextureKind::Checker: {
          const bool a = (((y - y0) / 2) + ((x - x0) / 2)) % 2 == 0;
          for (int64_t c = 0; c < 3; ++c) img.at(c, y, x) = a ? ca[c] : cb[c];
          break;
        }
        case TextureKind::Noise:
          for (int64_t c = 0; c < 3; ++c)
            img.at(c, y, x) = static_cast<float>(rng.uniform(0.0, 1.0));
          break;
        case TextureKind::Stripes: {
          const bool a = ((x - x0) / 2) % 2 == 0;
          for (int64_t c = 0; c < 3; ++c) img.at(c, y, x) = a ? ca[c] : cb[c];
          break;
        }
      }
    }

  if (box) *box = Box{x0, y0, x0 + ow - 1, y0 + oh - 1};
  if (label) *label = static_cast<int64_t>(kind);
  return img;
}

std::vector<ManifestRecord> generate_synthetic_dataset(const std::string& dir,
                                                       const SynthParams& params) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());

  RngState rng = RngState(params.seed).stream("synthetic");
  std::vector<ManifestRecord> records;
  records.reserve(static_cast<size_t>(params.count));
  for (int64_t i = 0; i < params.count; ++i) {
    Box box;
    int64_t label = 0;
    Tensor img = synth_scene(rng, params, &box, &label);
    std::ostringstream name;
    name << "scene_" << std::setw(5) << std::setfill('0') << i << ".ppm";
    const std::string file = (std::filesystem::path(dir) / name.str()).string();
    write_ppm(file, img);
    records.push_back(ManifestRecord{name.str(), box, label});
  }
  write_manifest((std::filesystem::path(dir) / "manifest.jsonl").string(), records);
  return records;
}

Tensor render_heatmap(const Tensor& image, const Tensor& map2d) {
  check_image(image, "render_heatmap");
  if (map2d.order() != 2) throw DimensionError("render_heatmap: map must be (h,w)");
  float lo = map2d[0], hi = map2d[0];
  for (int64_t i = 0; i < map2d.size(); ++i) {
    lo = std::min(lo, map2d[i]);
    hi = std::max(hi, map2d[i]);
  }
  const float range = hi - lo;

  // Normalized map, scaled up to the image grid.
  Tensor norm3({3, map2d.dim(0), map2d.dim(1)});
  for (int64_t i = 0; i < map2d.size(); ++i) {
    const float t = range > 0.0f ? (map2d[i] - lo) / range : 0.5f;
    norm3[i] = t;  // channel 0 carries the values; others unused
  }
  for (int64_t i = 0; i < map2d.size(); ++i) {
    norm3[map2d.size() + i] = norm3[i];
    norm3[2 * map2d.size() + i] = norm3[i];
  }
  Tensor scaled = resize_bilinear(norm3, image.dim(1), image.dim(2));

  auto ramp = [](float t, float center) {
    return std::clamp(1.5f - std::abs(4.0f * t - center), 0.0f, 1.0f);
  };
  Tensor out(image.dims());
  const int64_t spatial = image.dim(1) * image.dim(2);
  for (int64_t s = 0; s < spatial; ++s) {
    const float t = scaled[s];
    const float jet[3] = {ramp(t, 3.0f), ramp(t, 2.0f), ramp(t, 1.0f)};
    for (int64_t c = 0; c < 3; ++c)
      out[c * spatial + s] = 0.5f * image[c * spatial + s] + 0.5f * jet[c];
  }
  return out;
}

}  // namespace tobias::img
