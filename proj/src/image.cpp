#include "pan/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "pan/errors.hpp"

namespace pan {

void write_ppm(const std::string& path, const Image& image) {
  if (image.width <= 0 || image.height <= 0 ||
      static_cast<std::int64_t>(image.pixels.size()) != image.size_bytes())
    throw UsageError("write_ppm: malformed image buffer");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw DataError("write failed: " + path);
}

namespace {

// Reads one whitespace/comment-delimited token of a PPM header.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

}  // namespace

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  if (next_token(in) != "P6") throw DataError(path + ": not a P6 PPM (offset 0)");
  Image img;
  try {
    img.width = std::stoi(next_token(in));
    img.height = std::stoi(next_token(in));
    int maxval = std::stoi(next_token(in));
    if (maxval != 255) throw DataError(path + ": only 8-bit PPM supported");
  } catch (const std::logic_error&) {
    throw DataError(path + ": malformed PPM header");
  }
  if (img.width <= 0 || img.height <= 0) throw DataError(path + ": bad PPM extents");
  img.pixels.resize(static_cast<std::size_t>(img.size_bytes()));
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw DataError(path + ": truncated pixel payload");
  return img;
}

Image resize_bilinear(const Image& src, int width, int height) {
  if (src.width <= 0 || src.height <= 0) throw UsageError("resize of empty image");
  Image out;
  out.width = width;
  out.height = height;
  out.pixels.resize(static_cast<std::size_t>(out.size_bytes()));
  for (int y = 0; y < height; ++y) {
    double sy = (y + 0.5) * src.height / height - 0.5;
    int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, src.height - 1);
    int y1 = std::min(y0 + 1, src.height - 1);
    double fy = std::clamp(sy - y0, 0.0, 1.0);
    for (int x = 0; x < width; ++x) {
      double sx = (x + 0.5) * src.width / width - 0.5;
      int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, src.width - 1);
      int x1 = std::min(x0 + 1, src.width - 1);
      double fx = std::clamp(sx - x0, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        auto at = [&](int yy, int xx) {
          return static_cast<double>(
              src.pixels[(static_cast<std::size_t>(yy) * src.width + xx) * 3 + c]);
        };
        double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
                   fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
        out.pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

std::vector<float> minmax_rescale(const std::vector<float>& values) {
  if (values.empty()) return {};
  float lo = values[0], hi = values[0];
  for (float v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<float> out(values.size());
  if (hi == lo) {
    std::fill(out.begin(), out.end(), 1.0f);
    return out;
  }
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - lo) / (hi - lo);
  return out;
}

std::vector<float> upsample_nearest(const std::vector<float>& map, int h, int w,
                                    int out_h, int out_w) {
  if (static_cast<std::int64_t>(map.size()) != std::int64_t(h) * w)
    throw UsageError("upsample_nearest: map size does not match extents");
  std::vector<float> out(static_cast<std::size_t>(out_h) * out_w);
  for (int y = 0; y < out_h; ++y) {
    int sy = static_cast<int>(std::int64_t(y) * h / out_h);
    for (int x = 0; x < out_w; ++x) {
      int sx = static_cast<int>(std::int64_t(x) * w / out_w);
      out[static_cast<std::size_t>(y) * out_w + x] =
          map[static_cast<std::size_t>(sy) * w + sx];
    }
  }
  return out;
}

}  // namespace pan
