#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace pan {

constexpr int kGlyphSide = 28;
constexpr int kGlyphPixels = kGlyphSide * kGlyphSide;

struct Glyph {
  std::array<std::uint8_t, kGlyphPixels> pixels{};
  std::uint8_t label = 0;
};

// Procedurally rendered digit glyphs (stroke paths with per-glyph affine
// jitter). Stand-in corpus for environments without the MNIST files; written
// through the same IDX format the real loader consumes.
std::vector<Glyph> make_stub_glyphs(std::uint64_t seed, int per_class);

// IDX writers (big-endian magic 0x00000803 / 0x00000801, u8 payload).
void write_idx_images(const std::string& path, const std::vector<Glyph>& glyphs);
void write_idx_labels(const std::string& path, const std::vector<Glyph>& glyphs);

// Writes train-images/labels and t10k-images/labels pairs under dir.
void write_stub_mnist_dir(const std::string& dir, std::uint64_t seed,
                          int train_per_class, int test_per_class);

}  // namespace pan
