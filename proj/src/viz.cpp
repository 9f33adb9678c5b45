#include "pan/viz.hpp"

#include <cmath>

#include "pan/errors.hpp"

namespace pan {

Image sample_to_image(const Sample& sample) {
  Image img;
  img.width = kCanvas;
  img.height = kCanvas;
  img.pixels = sample.image;
  return img;
}

Image render_attention_overlay(const Sample& sample, const ForwardResult& result,
                               int layer_index) {
  if (layer_index < 0 ||
      layer_index >= static_cast<int>(result.attention_maps.size()))
    throw UsageError("attention layer index out of range");

  std::vector<float> multiplier(static_cast<std::size_t>(kCanvasPixels), 1.0f);
  for (int l = 0; l <= layer_index; ++l) {
    const Tensor& alpha = result.attention_maps[static_cast<std::size_t>(l)];
    if (alpha.dim(0) != 1)
      throw UsageError("overlay rendering expects a single-sample forward");
    int h = alpha.dim(2), w = alpha.dim(3);
    std::vector<float> map(alpha.data().begin(), alpha.data().end());
    auto up = upsample_nearest(minmax_rescale(map), h, w, kCanvas, kCanvas);
    for (std::size_t p = 0; p < multiplier.size(); ++p) multiplier[p] *= up[p];
  }

  Image img = sample_to_image(sample);
  for (std::size_t p = 0; p < multiplier.size(); ++p)
    for (int c = 0; c < 3; ++c) {
      auto& px = img.pixels[p * 3 + static_cast<std::size_t>(c)];
      px = static_cast<std::uint8_t>(std::lround(px * multiplier[p]));
    }
  return img;
}

}  // namespace pan
