#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pan/layers.hpp"
#include "pan/tensor.hpp"

namespace pan {

enum class ModelKind { kPan, kPanCtx, kSan, kHan };

std::string model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string& name);

struct ModelConfig {
  ModelKind kind = ModelKind::kPan;
  int num_blocks = 4;
  int channels = 32;
  std::vector<int> attention_layers;  // 1-based block indices, ascending
  int delta = 0;                      // context radius of non-final heads
  int num_colors = 5;
  int query_len = 10;
  int hidden_dim = 32;
  int canvas = 96;
  int in_channels = 3;

  // Canonical architecture for each model kind: PAN/PAN-CTX attend at every
  // pooling output, SAN/HAN carry a single softmax head after the last block.
  static ModelConfig defaults(ModelKind kind);

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Parameter set; tensors are shared handles, so copies of this struct alias
// the same storage.
struct ModelParams {
  ModelConfig config;
  std::vector<ConvBlock> blocks;
  std::vector<AttentionHead> heads;  // parallel to config.attention_layers
  Tensor cls_w;                      // channels × num_colors
  Tensor cls_b;                      // num_colors

  // Canonical parameter order: per block (weight, bias), per head
  // (w1, b1, w2, b2), classifier weight, classifier bias. Checkpoints and
  // the optimizer both rely on this order.
  std::vector<Tensor> parameters() const;
  void zero_grads();
};

// He-normal weights (std = sqrt(2/fan_in)), zero biases except the +2.0
// output bias of non-final attention heads. Deterministic in the seed.
ModelParams init_model(const ModelConfig& config, std::uint64_t seed);

std::int64_t count_parameters(const ModelParams& params);

struct ForwardResult {
  Tensor logits;                      // N×num_colors
  Tensor probabilities;               // N×num_colors, rows sum to 1
  std::vector<Tensor> attention_maps; // one α per head, native resolution
  Tensor attended_feature;            // N×channels
  Tensor final_feature;               // last block output before attention
};

struct ForwardOptions {
  // Replaces non-final attention scores with a large positive sentinel so
  // every sigmoid gate becomes exactly 1 (identity-case test hook).
  bool force_nonfinal_gates_to_one = false;
};

ForwardResult pan_forward(Tape* tape, const ModelParams& params,
                          const Tensor& image, const Tensor& queries,
                          const ForwardOptions& opts = {});
ForwardResult san_forward(Tape* tape, const ModelParams& params,
                          const Tensor& image, const Tensor& queries,
                          const ForwardOptions& opts = {});
ForwardResult han_forward(Tape* tape, const ModelParams& params,
                          const Tensor& image, const Tensor& queries,
                          const ForwardOptions& opts = {});

// Dispatch on params.config.kind.
ForwardResult model_forward(Tape* tape, const ModelParams& params,
                            const Tensor& image, const Tensor& queries,
                            const ForwardOptions& opts = {});

}  // namespace pan
