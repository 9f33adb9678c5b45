#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pan {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // RGB8, row-major

  std::int64_t size_bytes() const { return std::int64_t(width) * height * 3; }
};

// PPM P6, 8-bit, header "P6\n<w> <h>\n255\n".
void write_ppm(const std::string& path, const Image& image);
Image read_ppm(const std::string& path);

// Bilinear resize of an RGB8 image.
Image resize_bilinear(const Image& src, int width, int height);

// (x - min) / (max - min); a constant map rescales to all ones so the
// overlay multiplier degenerates to identity.
std::vector<float> minmax_rescale(const std::vector<float>& values);

// Nearest-neighbor upsample of an h×w map to out_h×out_w (each source cell
// claims its receptive tile when the extents divide evenly).
std::vector<float> upsample_nearest(const std::vector<float>& map, int h, int w,
                                    int out_h, int out_w);

}  // namespace pan
