#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pan/errors.hpp"
#include "pan/image.hpp"
#include "pan/rng.hpp"

namespace pan {

// Placement could not satisfy the overlap constraints even after the shrink
// policy; generate_split counts these and resamples.
struct GenerationError : DataError {
  using DataError::DataError;
};

constexpr int kCanvas = 96;
constexpr int kCanvasPixels = kCanvas * kCanvas;

// Reference palette; labels index this order.
constexpr std::array<std::array<std::uint8_t, 3>, 5> kPalette{{
    {0, 255, 0},      // green
    {255, 255, 0},    // yellow
    {255, 255, 255},  // white
    {255, 0, 0},      // red
    {0, 0, 255},      // blue
}};
constexpr std::array<const char*, 5> kPaletteNames{"green", "yellow", "white",
                                                   "red", "blue"};

struct Sample {
  std::vector<std::uint8_t> image;  // 96×96×3 RGB
  std::vector<std::uint8_t> mask;   // 96×96, 255 on visible target pixels
  std::uint8_t query = 0;           // digit class 0-9
  std::uint8_t color_label = 0;     // palette index 0-4
  float scale = 1.0f;               // target digit scale factor
};

enum class Variant { kMref, kMdist, kMbg };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct GenConfig {
  Variant variant = Variant::kMref;
  int train_count = 30000;
  int val_count = 10000;
  int test_count = 10000;
  int digits_min = 5;
  int digits_max = 9;
  double scale_min = 0.5;
  double scale_max = 3.0;
  double color_sigma = 15.0;
  std::uint64_t seed = 0;
  std::string bg_dir;        // MBG only
  int max_attempts = 200;    // placement attempts before resampling a sample
  int mdist_patches = 150;   // 5×5 distractor crops per canvas

  // Desk-scale preset: 4k/1k/1k, 3-5 digits, scales in [0.5, 2.0].
  static GenConfig mini(Variant variant, std::uint64_t seed);

  void validate() const;
};

// --- MNIST IDX ingestion ---

struct MnistData {
  std::vector<std::array<std::uint8_t, 784>> images;  // 28×28 glyphs
  std::vector<std::uint8_t> labels;
};

MnistData load_mnist_idx(const std::string& images_path,
                         const std::string& labels_path);

// Glyphs bucketed by digit class; every class must be populated.
struct GlyphPool {
  std::array<std::vector<std::array<std::uint8_t, 784>>, 10> by_class;

  static GlyphPool build(const MnistData& data);
};

// --- generation ---

// Background canvas for one sample: black (MREF), 5×5 MNIST crops (MDIST),
// or a random crop of a supplied natural image (MBG).
std::vector<std::uint8_t> make_background(Rng& rng, const GenConfig& config,
                                          const GlyphPool& pool,
                                          const std::vector<Image>& bg_images);

// One sample; throws GenerationError when placement fails even after the
// shrink policy (callers resample with a fresh stream).
Sample render_sample(Rng& rng, const GlyphPool& pool, const GenConfig& config,
                     const std::vector<Image>& bg_images);

struct GenStats {
  int resampled = 0;  // samples regenerated after placement failure
};

// Writes `count` samples to an MREF-REC archive; deterministic in
// (config.seed, split_name).
GenStats generate_split(const GenConfig& config, const std::string& split_name,
                        int count, const GlyphPool& pool,
                        const std::vector<Image>& bg_images,
                        const std::string& out_path);

// Loads every readable PPM in dir (sorted order); warnings to stderr.
std::vector<Image> load_background_dir(const std::string& dir);

// --- MREF-REC v1 archive ---

void write_archive(const std::string& path, const std::vector<Sample>& samples);
std::vector<Sample> read_archive(const std::string& path);

// Per-record invariant checks (mask/image consistency, ranges, color
// answerability for non-MBG variants). Throws DataError on violation.
void validate_samples(const std::vector<Sample>& samples, Variant variant,
                      double color_sigma);

}  // namespace pan
