#pragma once

#include "pan/dataset.hpp"
#include "pan/image.hpp"
#include "pan/model.hpp"

namespace pan {

Image sample_to_image(const Sample& sample);

// Input image faded by the selected attention map: the map is min-max
// rescaled, nearest-neighbor upsampled to the canvas and multiplied into the
// pixels. Maps of earlier layers accumulate multiplicatively into deeper
// views. `result` must come from a single-sample forward.
Image render_attention_overlay(const Sample& sample, const ForwardResult& result,
                               int layer_index);

}  // namespace pan
