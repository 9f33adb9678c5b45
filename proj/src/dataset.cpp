#include "pan/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "pan/errors.hpp"

namespace pan {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kMref: return "mref";
    case Variant::kMdist: return "mdist";
    case Variant::kMbg: return "mbg";
  }
  throw UsageError("unknown variant");
}

Variant variant_from_name(const std::string& name) {
  if (name == "mref") return Variant::kMref;
  if (name == "mdist") return Variant::kMdist;
  if (name == "mbg") return Variant::kMbg;
  throw DataError("unknown variant '" + name + "' (expected mref|mdist|mbg)");
}

GenConfig GenConfig::mini(Variant variant, std::uint64_t seed) {
  GenConfig cfg;
  cfg.variant = variant;
  cfg.train_count = 4000;
  cfg.val_count = 1000;
  cfg.test_count = 1000;
  cfg.digits_min = 3;
  cfg.digits_max = 5;
  cfg.scale_min = 0.5;
  cfg.scale_max = 2.0;
  cfg.seed = seed;
  return cfg;
}

void GenConfig::validate() const {
  if (train_count <= 0 || val_count <= 0 || test_count <= 0)
    throw ConfigError("split counts must be positive");
  if (digits_min < 1 || digits_max > 10 || digits_min > digits_max)
    throw ConfigError("digits per image must satisfy 1 <= min <= max <= 10");
  if (scale_min < 0.5 || scale_max > 3.0 || scale_min > scale_max)
    throw ConfigError("scale range must lie within [0.5, 3.0]");
  if (color_sigma < 0.0) throw ConfigError("color noise sigma must be >= 0");
  if (max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
  if (mdist_patches < 0) throw ConfigError("mdist_patches must be >= 0");
  if (variant == Variant::kMbg && bg_dir.empty())
    throw ConfigError("MBG generation requires a background image directory");
}

// --- IDX ---

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot open: " + path);
  auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> buf(size);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
  if (in.gcount() != static_cast<std::streamsize>(size))
    throw DataError("short read: " + path);
  return buf;
}

std::uint32_t get_u32_be(const std::vector<std::uint8_t>& buf, std::size_t offset,
                         const std::string& path) {
  if (offset + 4 > buf.size())
    throw DataError(path + ": truncated at offset " + std::to_string(offset));
  return (std::uint32_t(buf[offset]) << 24) | (std::uint32_t(buf[offset + 1]) << 16) |
         (std::uint32_t(buf[offset + 2]) << 8) | std::uint32_t(buf[offset + 3]);
}

}  // namespace

MnistData load_mnist_idx(const std::string& images_path,
                         const std::string& labels_path) {
  auto ibuf = read_file(images_path);
  if (get_u32_be(ibuf, 0, images_path) != 0x00000803)
    throw DataError(images_path + ": bad IDX image magic at offset 0");
  std::uint32_t n = get_u32_be(ibuf, 4, images_path);
  if (get_u32_be(ibuf, 8, images_path) != 28 || get_u32_be(ibuf, 12, images_path) != 28)
    throw DataError(images_path + ": expected 28×28 glyphs (offset 8)");
  if (ibuf.size() != 16 + static_cast<std::size_t>(n) * 784)
    throw DataError(images_path + ": payload truncated at offset " +
                    std::to_string(ibuf.size()));

  auto lbuf = read_file(labels_path);
  if (get_u32_be(lbuf, 0, labels_path) != 0x00000801)
    throw DataError(labels_path + ": bad IDX label magic at offset 0");
  std::uint32_t ln = get_u32_be(lbuf, 4, labels_path);
  if (ln != n)
    throw DataError(labels_path + ": label count " + std::to_string(ln) +
                    " does not match image count " + std::to_string(n));
  if (lbuf.size() != 8 + static_cast<std::size_t>(n))
    throw DataError(labels_path + ": payload truncated at offset " +
                    std::to_string(lbuf.size()));

  MnistData data;
  data.images.resize(n);
  data.labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::memcpy(data.images[i].data(), ibuf.data() + 16 + std::size_t(i) * 784, 784);
    std::uint8_t label = lbuf[8 + i];
    if (label > 9)
      throw DataError(labels_path + ": label " + std::to_string(label) +
                      " outside [0, 9] at offset " + std::to_string(8 + i));
    data.labels[i] = label;
  }
  return data;
}

GlyphPool GlyphPool::build(const MnistData& data) {
  GlyphPool pool;
  for (std::size_t i = 0; i < data.images.size(); ++i)
    pool.by_class[data.labels[i]].push_back(data.images[i]);
  for (int d = 0; d < 10; ++d)
    if (pool.by_class[static_cast<std::size_t>(d)].empty())
      throw DataError("glyph pool has no instances of digit " + std::to_string(d));
  return pool;
}

// --- generation ---

namespace {

// Bilinear resample of a 28×28 u8 glyph to gh×gw float intensities.
std::vector<float> scale_glyph(const std::array<std::uint8_t, 784>& glyph, int gh,
                               int gw) {
  std::vector<float> out(static_cast<std::size_t>(gh) * gw);
  for (int y = 0; y < gh; ++y) {
    double sy = (y + 0.5) * 28.0 / gh - 0.5;
    int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, 27);
    int y1 = std::min(y0 + 1, 27);
    double fy = std::clamp(sy - y0, 0.0, 1.0);
    for (int x = 0; x < gw; ++x) {
      double sx = (x + 0.5) * 28.0 / gw - 0.5;
      int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, 27);
      int x1 = std::min(x0 + 1, 27);
      double fx = std::clamp(sx - x0, 0.0, 1.0);
      double v = (1 - fy) * ((1 - fx) * glyph[std::size_t(y0) * 28 + x0] +
                             fx * glyph[std::size_t(y0) * 28 + x1]) +
                 fy * ((1 - fx) * glyph[std::size_t(y1) * 28 + x0] +
                       fx * glyph[std::size_t(y1) * 28 + x1]);
      out[static_cast<std::size_t>(y) * gw + x] = static_cast<float>(v);
    }
  }
  return out;
}

struct Box {
  int x, y, w, h;
  std::int64_t area() const { return std::int64_t(w) * h; }
};

// Intersection over the smaller box.
double overlap_ratio(const Box& a, const Box& b) {
  int ix = std::max(0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  int iy = std::max(0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  double inter = static_cast<double>(ix) * iy;
  return inter / static_cast<double>(std::min(a.area(), b.area()));
}

}  // namespace

std::vector<std::uint8_t> make_background(Rng& rng, const GenConfig& config,
                                          const GlyphPool& pool,
                                          const std::vector<Image>& bg_images) {
  std::vector<std::uint8_t> canvas(static_cast<std::size_t>(kCanvasPixels) * 3, 0);
  switch (config.variant) {
    case Variant::kMref:
      break;
    case Variant::kMdist: {
      // Random 5×5 grayscale crops of glyphs, dimmed below foreground level.
      for (int p = 0; p < config.mdist_patches; ++p) {
        int cls = rng.uniform_int(0, 9);
        const auto& bucket = pool.by_class[static_cast<std::size_t>(cls)];
        const auto& glyph = bucket[rng.bounded(static_cast<std::uint32_t>(bucket.size()))];
        int gx = rng.uniform_int(0, 23), gy = rng.uniform_int(0, 23);
        int cx = rng.uniform_int(0, kCanvas - 5), cy = rng.uniform_int(0, kCanvas - 5);
        for (int y = 0; y < 5; ++y)
          for (int x = 0; x < 5; ++x) {
            auto v = static_cast<std::uint8_t>(
                std::lround(glyph[std::size_t(gy + y) * 28 + gx + x] * 0.7));
            std::size_t base = (std::size_t(cy + y) * kCanvas + cx + x) * 3;
            canvas[base] = canvas[base + 1] = canvas[base + 2] = v;
          }
      }
      break;
    }
    case Variant::kMbg: {
      if (bg_images.empty()) throw DataError("MBG generation has no background images");
      const Image& src =
          bg_images[rng.bounded(static_cast<std::uint32_t>(bg_images.size()))];
      int shorter = std::min(src.width, src.height);
      int side = rng.uniform_int(std::max(1, shorter / 2), shorter);
      int x0 = rng.uniform_int(0, src.width - side);
      int y0 = rng.uniform_int(0, src.height - side);
      Image crop;
      crop.width = side;
      crop.height = side;
      crop.pixels.resize(static_cast<std::size_t>(side) * side * 3);
      for (int y = 0; y < side; ++y)
        std::memcpy(crop.pixels.data() + std::size_t(y) * side * 3,
                    src.pixels.data() + (std::size_t(y0 + y) * src.width + x0) * 3,
                    static_cast<std::size_t>(side) * 3);
      Image resized = resize_bilinear(crop, kCanvas, kCanvas);
      canvas = std::move(resized.pixels);
      break;
    }
  }
  return canvas;
}

Sample render_sample(Rng& rng, const GlyphPool& pool, const GenConfig& config,
                     const std::vector<Image>& bg_images) {
  const int k = rng.uniform_int(config.digits_min, config.digits_max);

  // k distinct digit classes (partial Fisher-Yates).
  std::array<int, 10> classes{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  for (int i = 0; i < k; ++i) {
    int j = i + static_cast<int>(rng.bounded(static_cast<std::uint32_t>(10 - i)));
    std::swap(classes[static_cast<std::size_t>(i)], classes[static_cast<std::size_t>(j)]);
  }

  // Distinct colors while the palette lasts; round-robin shuffles beyond five
  // digits (five colors cannot stay distinct for more digits).
  std::vector<int> colors(static_cast<std::size_t>(k));
  {
    std::array<int, 5> deck{0, 1, 2, 3, 4};
    for (int i = 0; i < k; ++i) {
      int slot = i % 5;
      if (slot == 0) {
        for (int j = 4; j > 0; --j) {
          int m = static_cast<int>(rng.bounded(static_cast<std::uint32_t>(j + 1)));
          std::swap(deck[static_cast<std::size_t>(j)], deck[static_cast<std::size_t>(m)]);
        }
      }
      colors[static_cast<std::size_t>(i)] = deck[static_cast<std::size_t>(slot)];
    }
  }

  const int query_slot = rng.uniform_int(0, k - 1);

  Sample sample;
  sample.image = make_background(rng, config, pool, bg_images);
  sample.mask.assign(kCanvasPixels, 0);
  sample.query = static_cast<std::uint8_t>(classes[static_cast<std::size_t>(query_slot)]);
  sample.color_label = static_cast<std::uint8_t>(colors[static_cast<std::size_t>(query_slot)]);

  std::vector<Box> placed;
  for (int d = 0; d < k; ++d) {
    const auto& bucket = pool.by_class[static_cast<std::size_t>(classes[static_cast<std::size_t>(d)])];
    const auto& glyph = bucket[rng.bounded(static_cast<std::uint32_t>(bucket.size()))];
    double scale = rng.uniform(config.scale_min, config.scale_max);

    Box box{};
    bool ok = false;
    for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
      if (attempt > 0 && attempt % 50 == 0)
        scale = rng.uniform(0.5, std::min(1.5, scale));  // shrink policy
      int side = std::max(1, static_cast<int>(std::lround(28.0 * scale)));
      box = {rng.uniform_int(0, kCanvas - side), rng.uniform_int(0, kCanvas - side),
             side, side};
      bool clash = false;
      for (const auto& prior : placed)
        if (overlap_ratio(box, prior) > 0.20) {
          clash = true;
          break;
        }
      if (!clash) {
        ok = true;
        break;
      }
    }
    if (!ok) throw GenerationError("digit placement failed after shrink policy");
    placed.push_back(box);

    auto alpha = scale_glyph(glyph, box.h, box.w);
    std::array<std::uint8_t, 3> color{};
    for (int c = 0; c < 3; ++c) {
      double v = kPalette[colors[static_cast<std::size_t>(d)]][static_cast<std::size_t>(c)] +
                 rng.normal(0.0, config.color_sigma);
      color[static_cast<std::size_t>(c)] =
          static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }

    for (int y = 0; y < box.h; ++y) {
      for (int x = 0; x < box.w; ++x) {
        float a = alpha[static_cast<std::size_t>(y) * box.w + x];
        std::size_t px = std::size_t(box.y + y) * kCanvas + (box.x + x);
        if (a > 0.0f) {
          double t = a / 255.0;
          for (int c = 0; c < 3; ++c) {
            double v = t * color[static_cast<std::size_t>(c)] +
                       (1.0 - t) * sample.image[px * 3 + static_cast<std::size_t>(c)];
            sample.image[px * 3 + static_cast<std::size_t>(c)] =
                static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
          }
        }
        // The mask tracks visible query pixels: later digits occlude.
        if (a > 127.5f) {
          if (d == query_slot)
            sample.mask[px] = 255;
          else if (d > query_slot)
            sample.mask[px] = 0;
        }
      }
    }
    if (d == query_slot) sample.scale = static_cast<float>(scale);
  }

  bool any_visible = std::any_of(sample.mask.begin(), sample.mask.end(),
                                 [](std::uint8_t m) { return m != 0; });
  if (!any_visible)
    throw GenerationError("target digit fully occluded");
  return sample;
}

GenStats generate_split(const GenConfig& config, const std::string& split_name,
                        int count, const GlyphPool& pool,
                        const std::vector<Image>& bg_images,
                        const std::string& out_path) {
  config.validate();
  if (count <= 0) throw ConfigError("split count must be positive");
  const std::uint64_t split_seed = config.seed ^ fnv1a64(split_name);

  GenStats stats;
  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    for (int retry = 0;; ++retry) {
      if (retry > 100)
        throw DataError("generation failed repeatedly for sample " + std::to_string(i) +
                        " of split '" + split_name + "'");
      std::uint64_t stream_seed =
          retry == 0 ? split_seed : split_seed ^ splitmix64(0x52455452ULL + retry);
      Rng rng = Rng::stream(stream_seed, static_cast<std::uint64_t>(i));
      try {
        samples.push_back(render_sample(rng, pool, config, bg_images));
        break;
      } catch (const GenerationError&) {
        ++stats.resampled;
      }
    }
  }
  write_archive(out_path, samples);
  return stats;
}

std::vector<Image> load_background_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("background directory not found: " + dir);
  std::vector<std::string> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".ppm") paths.push_back(entry.path().string());
  }
  std::sort(paths.begin(), paths.end());
  std::vector<Image> images;
  for (const auto& p : paths) {
    try {
      images.push_back(read_ppm(p));
    } catch (const DataError& e) {
      std::cerr << "warning: skipping unreadable background " << p << ": " << e.what()
                << '\n';
    }
  }
  if (images.empty())
    throw DataError("no readable PPM backgrounds in directory: " + dir);
  return images;
}

// --- MREF-REC v1 ---

namespace {

constexpr char kArchiveMagic[8] = {'M', 'R', 'E', 'F', '0', '0', '0', '1'};
constexpr std::size_t kRecordBytes = std::size_t(kCanvasPixels) * 3 + kCanvasPixels + 1 + 1 + 4;

void put_u32_le(std::ofstream& out, std::uint32_t v) {
  std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                       static_cast<std::uint8_t>(v >> 16),
                       static_cast<std::uint8_t>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32_le(const std::vector<std::uint8_t>& buf, std::size_t offset,
                         const std::string& path) {
  if (offset + 4 > buf.size())
    throw DataError(path + ": truncated at offset " + std::to_string(offset));
  return std::uint32_t(buf[offset]) | (std::uint32_t(buf[offset + 1]) << 8) |
         (std::uint32_t(buf[offset + 2]) << 16) | (std::uint32_t(buf[offset + 3]) << 24);
}

}  // namespace

void write_archive(const std::string& path, const std::vector<Sample>& samples) {
  if (samples.empty()) throw DataError("refusing to write an empty archive");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out.write(kArchiveMagic, 8);
  put_u32_le(out, 1);        // version
  put_u32_le(out, kCanvas);  // canvas
  put_u32_le(out, static_cast<std::uint32_t>(samples.size()));
  for (const auto& s : samples) {
    if (s.image.size() != std::size_t(kCanvasPixels) * 3 ||
        s.mask.size() != std::size_t(kCanvasPixels))
      throw DataError("sample buffers do not match the 96×96 canvas");
    out.write(reinterpret_cast<const char*>(s.image.data()),
              static_cast<std::streamsize>(s.image.size()));
    out.write(reinterpret_cast<const char*>(s.mask.data()),
              static_cast<std::streamsize>(s.mask.size()));
    out.put(static_cast<char>(s.query));
    out.put(static_cast<char>(s.color_label));
    put_u32_le(out, std::bit_cast<std::uint32_t>(s.scale));
  }
  if (!out) throw DataError("write failed: " + path);
}

std::vector<Sample> read_archive(const std::string& path) {
  auto buf = read_file(path);
  if (buf.size() < 20 || std::memcmp(buf.data(), kArchiveMagic, 8) != 0)
    throw DataError(path + ": bad archive magic at offset 0");
  if (get_u32_le(buf, 8, path) != 1)
    throw DataError(path + ": unsupported archive version (offset 8)");
  if (get_u32_le(buf, 12, path) != kCanvas)
    throw DataError(path + ": unsupported canvas size (offset 12)");
  std::uint32_t count = get_u32_le(buf, 16, path);
  if (buf.size() != 20 + static_cast<std::size_t>(count) * kRecordBytes)
    throw DataError(path + ": size " + std::to_string(buf.size()) +
                    " does not match " + std::to_string(count) + " records");

  std::vector<Sample> samples(count);
  std::size_t off = 20;
  for (std::uint32_t i = 0; i < count; ++i) {
    Sample& s = samples[i];
    s.image.assign(buf.begin() + static_cast<std::ptrdiff_t>(off),
                   buf.begin() + static_cast<std::ptrdiff_t>(off + std::size_t(kCanvasPixels) * 3));
    off += std::size_t(kCanvasPixels) * 3;
    s.mask.assign(buf.begin() + static_cast<std::ptrdiff_t>(off),
                  buf.begin() + static_cast<std::ptrdiff_t>(off + kCanvasPixels));
    off += kCanvasPixels;
    s.query = buf[off++];
    s.color_label = buf[off++];
    s.scale = std::bit_cast<float>(get_u32_le(buf, off, path));
    off += 4;
    if (s.query > 9)
      throw DataError(path + ": record " + std::to_string(i) + " has query digit " +
                      std::to_string(s.query));
    if (s.color_label > 4)
      throw DataError(path + ": record " + std::to_string(i) + " has color label " +
                      std::to_string(s.color_label));
  }
  return samples;
}

void validate_samples(const std::vector<Sample>& samples, Variant variant,
                      double color_sigma) {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    auto fail = [&](const std::string& why) {
      throw DataError("sample " + std::to_string(i) + ": " + why);
    };
    if (s.image.size() != std::size_t(kCanvasPixels) * 3) fail("bad image size");
    if (s.mask.size() != std::size_t(kCanvasPixels)) fail("bad mask size");
    if (s.query > 9) fail("query digit out of range");
    if (s.color_label > 4) fail("color label out of range");
    if (!(s.scale >= 0.5f && s.scale <= 3.0f)) fail("scale outside [0.5, 3.0]");

    std::int64_t area = 0;
    double mean[3] = {0, 0, 0};
    for (std::size_t p = 0; p < s.mask.size(); ++p) {
      if (s.mask[p] != 0 && s.mask[p] != 255) fail("mask is not binary");
      if (s.mask[p]) {
        ++area;
        for (int c = 0; c < 3; ++c) mean[c] += s.image[p * 3 + static_cast<std::size_t>(c)];
      }
    }
    if (area == 0) fail("empty target mask");

    // Color answerability (black/grayscale backgrounds only; arbitrary MBG
    // backgrounds can tint partially-covered pixels).
    if (variant != Variant::kMbg && color_sigma <= 25.0) {
      for (double& m : mean) m /= static_cast<double>(area);
      int nearest = 0;
      double best = 1e18;
      for (int c = 0; c < 5; ++c) {
        double d2 = 0;
        for (int ch = 0; ch < 3; ++ch) {
          double diff = mean[ch] - kPalette[static_cast<std::size_t>(c)][static_cast<std::size_t>(ch)];
          d2 += diff * diff;
        }
        if (d2 < best) {
          best = d2;
          nearest = c;
        }
      }
      if (nearest != s.color_label) fail("masked mean color does not decode to label");
    }
  }
}

}  // namespace pan
