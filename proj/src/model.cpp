#include "pan/model.hpp"

#include <algorithm>
#include <cmath>

#include "pan/errors.hpp"
#include "pan/rng.hpp"

namespace pan {

std::string model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::kPan: return "pan";
    case ModelKind::kPanCtx: return "pan_ctx";
    case ModelKind::kSan: return "san";
    case ModelKind::kHan: return "han";
  }
  throw UsageError("unknown model kind");
}

ModelKind model_kind_from_name(const std::string& name) {
  if (name == "pan") return ModelKind::kPan;
  if (name == "pan_ctx" || name == "pan-ctx") return ModelKind::kPanCtx;
  if (name == "san") return ModelKind::kSan;
  if (name == "han") return ModelKind::kHan;
  throw DataError("unknown model kind '" + name + "' (expected pan|pan_ctx|san|han)");
}

ModelConfig ModelConfig::defaults(ModelKind kind) {
  ModelConfig cfg;
  cfg.kind = kind;
  switch (kind) {
    case ModelKind::kPan:
      cfg.attention_layers = {1, 2, 3, 4};
      cfg.delta = 0;
      break;
    case ModelKind::kPanCtx:
      cfg.attention_layers = {1, 2, 3, 4};
      cfg.delta = 1;
      break;
    case ModelKind::kSan:
    case ModelKind::kHan:
      cfg.attention_layers = {4};
      cfg.delta = 0;
      break;
  }
  return cfg;
}

void ModelConfig::validate() const {
  if (num_blocks < 1) throw ConfigError("model needs at least one conv block");
  if (channels < 1 || in_channels < 1) throw ConfigError("channel counts must be positive");
  if (num_colors < 2) throw ConfigError("num_colors must be >= 2");
  if (query_len < 1 || hidden_dim < 1) throw ConfigError("query_len and hidden_dim must be positive");
  if (delta < 0) throw ConfigError("context radius must be >= 0");
  if (attention_layers.empty()) throw ConfigError("model needs at least one attention layer");
  if (!std::is_sorted(attention_layers.begin(), attention_layers.end()))
    throw ConfigError("attention_layers must be ascending");
  for (std::size_t i = 1; i < attention_layers.size(); ++i)
    if (attention_layers[i] == attention_layers[i - 1])
      throw ConfigError("attention_layers must be distinct");
  if (attention_layers.front() < 1 || attention_layers.back() > num_blocks)
    throw ConfigError("attention_layers outside [1, num_blocks]");
  if (attention_layers.back() != num_blocks)
    throw ConfigError("the last block must carry the final attention head");
  if ((kind == ModelKind::kSan || kind == ModelKind::kHan) && attention_layers.size() != 1)
    throw ConfigError("SAN/HAN use exactly one attention head after the last block");
  int extent = canvas;
  for (int i = 0; i < num_blocks; ++i) {
    if (extent % 2 != 0)
      throw ConfigError("canvas " + std::to_string(canvas) + " is not divisible by 2^" +
                        std::to_string(num_blocks));
    extent /= 2;
  }
}

std::vector<Tensor> ModelParams::parameters() const {
  std::vector<Tensor> out;
  for (const auto& b : blocks) {
    out.push_back(b.weight);
    out.push_back(b.bias);
  }
  for (const auto& h : heads) {
    out.push_back(h.w1);
    out.push_back(h.b1);
    out.push_back(h.w2);
    out.push_back(h.b2);
  }
  out.push_back(cls_w);
  out.push_back(cls_b);
  return out;
}

void ModelParams::zero_grads() {
  for (auto& p : parameters()) p.zero_grad();
}

namespace {

Tensor he_normal(Rng& rng, Shape shape, int fan_in) {
  const double std_dev = std::sqrt(2.0 / fan_in);
  std::vector<float> data(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : data) v = static_cast<float>(rng.normal(0.0, std_dev));
  return Tensor::from(std::move(shape), std::move(data));
}

}  // namespace

ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ModelParams params;
  params.config = config;

  int c_in = config.in_channels;
  for (int l = 1; l <= config.num_blocks; ++l) {
    ConvBlock block;
    block.weight = he_normal(rng, {config.channels, c_in, 3, 3}, c_in * 9);
    block.bias = Tensor::zeros({config.channels});
    block.act = Activation::kRelu;
    block.pool = true;
    params.blocks.push_back(block);
    c_in = config.channels;
  }

  for (std::size_t hi = 0; hi < config.attention_layers.size(); ++hi) {
    const bool final_layer = (hi + 1 == config.attention_layers.size());
    AttentionHead head;
    head.delta = final_layer ? 0 : config.delta;
    head.final_layer = final_layer;
    int side = 2 * head.delta + 1;
    int in_width = side * side * config.channels + config.query_len;
    head.w1 = he_normal(rng, {in_width, config.hidden_dim}, in_width);
    head.b1 = Tensor::zeros({config.hidden_dim});
    head.w2 = he_normal(rng, {config.hidden_dim, 1}, config.hidden_dim);
    // Non-final gates start open (sigmoid(2) ≈ 0.88) so stacked gates do not
    // suppress the signal before training picks a direction.
    head.b2 = Tensor::full({1}, final_layer ? 0.0f : 2.0f);
    params.heads.push_back(head);
  }

  params.cls_w = he_normal(rng, {config.channels, config.num_colors}, config.channels);
  params.cls_b = Tensor::zeros({config.num_colors});
  return params;
}

std::int64_t count_parameters(const ModelParams& params) {
  params.config.validate();
  std::int64_t total = 0;
  for (const auto& p : params.parameters()) total += p.numel();
  return total;
}

namespace {

// Shared trunk/attention pipeline for PAN, PAN-CTX and SAN.
ForwardResult progressive_forward(Tape* tape, const ModelParams& params,
                                  const Tensor& image, const Tensor& queries,
                                  const ForwardOptions& opts) {
  const auto& cfg = params.config;
  ForwardResult result;
  Tensor f = image;
  std::size_t head_idx = 0;
  for (int l = 1; l <= cfg.num_blocks; ++l) {
    f = conv_block_forward(tape, params.blocks[static_cast<std::size_t>(l - 1)], f);
    if (head_idx < cfg.attention_layers.size() &&
        cfg.attention_layers[head_idx] == l) {
      const auto& head = params.heads[head_idx];
      if (head.final_layer) result.final_feature = f;
      Tensor scores;
      if (!head.final_layer && opts.force_nonfinal_gates_to_one) {
        scores = Tensor::full({f.dim(0), 1, f.dim(2), f.dim(3)}, 1e30f);
      } else {
        scores = attention_scores(tape, head, f, queries);
      }
      Tensor alpha = normalize_scores(tape, scores, head.final_layer);
      result.attention_maps.push_back(alpha);
      f = attend(tape, f, alpha);
      ++head_idx;
    }
  }
  result.attended_feature = spatial_sum(tape, f);
  result.logits = fully_connected(tape, result.attended_feature, params.cls_w,
                                  params.cls_b);
  result.probabilities = softmax_rows(tape, result.logits);
  return result;
}

}  // namespace

ForwardResult pan_forward(Tape* tape, const ModelParams& params,
                          const Tensor& image, const Tensor& queries,
                          const ForwardOptions& opts) {
  if (params.config.kind != ModelKind::kPan && params.config.kind != ModelKind::kPanCtx)
    throw UsageError("pan_forward requires a PAN or PAN-CTX model");
  return progressive_forward(tape, params, image, queries, opts);
}

ForwardResult san_forward(Tape* tape, const ModelParams& params,
                          const Tensor& image, const Tensor& queries,
                          const ForwardOptions& opts) {
  if (params.config.kind != ModelKind::kSan)
    throw UsageError("san_forward requires a SAN model");
  return progressive_forward(tape, params, image, queries, opts);
}

ForwardResult han_forward(Tape* tape, const ModelParams& params,
                          const Tensor& image, const Tensor& queries,
                          const ForwardOptions& opts) {
  (void)opts;
  if (params.config.kind != ModelKind::kHan)
    throw UsageError("han_forward requires a HAN model");
  const auto& cfg = params.config;

  Tensor f = image;
  for (int l = 1; l <= cfg.num_blocks; ++l)
    f = conv_block_forward(tape, params.blocks[static_cast<std::size_t>(l - 1)], f);

  ForwardResult result;
  result.final_feature = f;
  const auto& head = params.heads.back();
  Tensor scores = attention_scores(tape, head, f, queries);
  Tensor alpha = spatial_softmax(tape, scores);
  result.attention_maps.push_back(alpha);

  // Per-location class distributions from the shared classifier, then the
  // exact marginal over the attention distribution.
  int n = f.dim(0), h = f.dim(2), w = f.dim(3);
  Tensor rows = nchw_to_rows(tape, f);                       // [N*H*W, C]
  Tensor loc_logits = fully_connected(tape, rows, params.cls_w, params.cls_b);
  Tensor loc_probs = softmax_rows(tape, loc_logits);         // [N*H*W, K]
  Tensor prob_maps = rows_to_nchw(tape, loc_probs, n, h, w); // N×K×H×W
  result.probabilities = spatial_sum(tape, attend(tape, prob_maps, alpha));
  result.logits = log_elem(tape, result.probabilities);
  result.attended_feature = spatial_sum(tape, attend(tape, f, alpha));
  return result;
}

ForwardResult model_forward(Tape* tape, const ModelParams& params,
                            const Tensor& image, const Tensor& queries,
                            const ForwardOptions& opts) {
  switch (params.config.kind) {
    case ModelKind::kPan:
    case ModelKind::kPanCtx:
      return pan_forward(tape, params, image, queries, opts);
    case ModelKind::kSan:
      return san_forward(tape, params, image, queries, opts);
    case ModelKind::kHan:
      return han_forward(tape, params, image, queries, opts);
  }
  throw UsageError("unknown model kind");
}

}  // namespace pan
