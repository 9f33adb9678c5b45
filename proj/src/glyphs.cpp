#include "pan/glyphs.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "pan/errors.hpp"
#include "pan/rng.hpp"

namespace pan {

namespace {

struct Pt {
  double x, y;
};

using Path = std::vector<Pt>;  // consecutive points form segments

Path arc(double cx, double cy, double rx, double ry, double deg0, double deg1,
         int n = 12) {
  Path p;
  for (int i = 0; i <= n; ++i) {
    double a = (deg0 + (deg1 - deg0) * i / n) * M_PI / 180.0;
    // y grows downward; 0° points right, 90° points up.
    p.push_back({cx + rx * std::cos(a), cy - ry * std::sin(a)});
  }
  return p;
}

// Stroke paths per digit in a unit box (x right, y down).
std::vector<Path> digit_paths(int digit) {
  switch (digit) {
    case 0:
      return {arc(0.50, 0.50, 0.27, 0.38, 0, 360, 18)};
    case 1:
      return {{{0.34, 0.28}, {0.56, 0.10}, {0.56, 0.90}}};
    case 2: {
      Path top = arc(0.50, 0.32, 0.24, 0.22, 170, 10);
      top.push_back({0.28, 0.88});
      top.push_back({0.78, 0.88});
      return {top};
    }
    case 3:
      return {arc(0.46, 0.30, 0.23, 0.20, 150, -90),
              arc(0.46, 0.68, 0.25, 0.22, 90, -150)};
    case 4:
      return {{{0.62, 0.10}, {0.24, 0.60}, {0.82, 0.60}},
              {{0.62, 0.34}, {0.62, 0.90}}};
    case 5: {
      Path p{{0.74, 0.12}, {0.32, 0.12}, {0.29, 0.46}};
      Path bowl = arc(0.47, 0.66, 0.25, 0.22, 115, -140);
      p.insert(p.end(), bowl.begin(), bowl.end());
      return {p};
    }
    case 6: {
      Path stem{{0.66, 0.10}, {0.44, 0.42}, {0.32, 0.66}};
      return {stem, arc(0.50, 0.68, 0.20, 0.20, 0, 360, 14)};
    }
    case 7:
      return {{{0.24, 0.14}, {0.76, 0.14}, {0.44, 0.90}}};
    case 8:
      return {arc(0.50, 0.30, 0.18, 0.17, 0, 360, 14),
              arc(0.50, 0.67, 0.22, 0.20, 0, 360, 14)};
    case 9: {
      Path tail{{0.70, 0.34}, {0.66, 0.62}, {0.50, 0.90}};
      return {arc(0.52, 0.32, 0.19, 0.19, 0, 360, 14), tail};
    }
    default:
      throw UsageError("digit must be in [0, 10)");
  }
}

double dist_to_segment(Pt p, Pt a, Pt b) {
  double vx = b.x - a.x, vy = b.y - a.y;
  double wx = p.x - a.x, wy = p.y - a.y;
  double vv = vx * vx + vy * vy;
  double t = vv > 0 ? std::clamp((wx * vx + wy * vy) / vv, 0.0, 1.0) : 0.0;
  double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

Glyph render_glyph(Rng& rng, int digit) {
  auto paths = digit_paths(digit);

  // Per-glyph jitter: rotation, anisotropic scale, shear, translation.
  double rot = rng.uniform(-0.14, 0.14);
  double sx = rng.uniform(0.82, 1.10), sy = rng.uniform(0.82, 1.10);
  double shear = rng.uniform(-0.15, 0.15);
  double tx = rng.uniform(-1.6, 1.6), ty = rng.uniform(-1.6, 1.6);
  double cr = std::cos(rot), sr = std::sin(rot);
  double amp = rng.uniform(0.82, 1.0);
  double halfw = rng.uniform(1.0, 1.55);  // stroke half-width in pixels

  // Unit box -> 28x28 with a 3px margin, centered jitter around (14, 14).
  auto map = [&](Pt p) -> Pt {
    double ux = (p.x - 0.5) * 22.0, uy = (p.y - 0.5) * 22.0;
    double x1 = sx * (ux + shear * uy), y1 = sy * uy;
    return {14.0 + cr * x1 - sr * y1 + tx, 14.0 + sr * x1 + cr * y1 + ty};
  };
  for (auto& path : paths)
    for (auto& p : path) p = map(p);

  Glyph g;
  g.label = static_cast<std::uint8_t>(digit);
  for (int y = 0; y < kGlyphSide; ++y) {
    for (int x = 0; x < kGlyphSide; ++x) {
      Pt px{x + 0.5, y + 0.5};
      double d = 1e9;
      for (const auto& path : paths)
        for (std::size_t i = 0; i + 1 < path.size(); ++i)
          d = std::min(d, dist_to_segment(px, path[i], path[i + 1]));
      double cov = std::clamp(halfw + 0.6 - d, 0.0, 1.0);
      // Stroke cores saturate to 255 like scanned digits; edges stay graded.
      g.pixels[static_cast<std::size_t>(y) * kGlyphSide + x] =
          static_cast<std::uint8_t>(std::lround(std::min(255.0, 320.0 * amp * cov)));
    }
  }
  return g;
}

void put_u32_be(std::ofstream& out, std::uint32_t v) {
  std::uint8_t b[4] = {static_cast<std::uint8_t>(v >> 24),
                       static_cast<std::uint8_t>(v >> 16),
                       static_cast<std::uint8_t>(v >> 8),
                       static_cast<std::uint8_t>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

std::vector<Glyph> make_stub_glyphs(std::uint64_t seed, int per_class) {
  if (per_class < 1) throw UsageError("per_class must be >= 1");
  std::vector<Glyph> glyphs;
  glyphs.reserve(static_cast<std::size_t>(per_class) * 10);
  for (int digit = 0; digit < 10; ++digit) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(digit));
    for (int i = 0; i < per_class; ++i) glyphs.push_back(render_glyph(rng, digit));
  }
  // Interleave classes so truncated reads of the pool stay balanced.
  std::vector<Glyph> mixed;
  mixed.reserve(glyphs.size());
  for (int i = 0; i < per_class; ++i)
    for (int digit = 0; digit < 10; ++digit)
      mixed.push_back(glyphs[static_cast<std::size_t>(digit) * per_class + i]);
  return mixed;
}

void write_idx_images(const std::string& path, const std::vector<Glyph>& glyphs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  put_u32_be(out, 0x00000803);
  put_u32_be(out, static_cast<std::uint32_t>(glyphs.size()));
  put_u32_be(out, kGlyphSide);
  put_u32_be(out, kGlyphSide);
  for (const auto& g : glyphs)
    out.write(reinterpret_cast<const char*>(g.pixels.data()), kGlyphPixels);
  if (!out) throw DataError("write failed: " + path);
}

void write_idx_labels(const std::string& path, const std::vector<Glyph>& glyphs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  put_u32_be(out, 0x00000801);
  put_u32_be(out, static_cast<std::uint32_t>(glyphs.size()));
  for (const auto& g : glyphs) out.put(static_cast<char>(g.label));
  if (!out) throw DataError("write failed: " + path);
}

void write_stub_mnist_dir(const std::string& dir, std::uint64_t seed,
                          int train_per_class, int test_per_class) {
  std::filesystem::create_directories(dir);
  auto train = make_stub_glyphs(seed, train_per_class);
  auto test = make_stub_glyphs(splitmix64(seed ^ 0x7e57ULL), test_per_class);
  write_idx_images(dir + "/train-images-idx3-ubyte", train);
  write_idx_labels(dir + "/train-labels-idx1-ubyte", train);
  write_idx_images(dir + "/t10k-images-idx3-ubyte", test);
  write_idx_labels(dir + "/t10k-labels-idx1-ubyte", test);
}

}  // namespace pan
