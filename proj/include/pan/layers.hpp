#pragma once

#include <vector>

#include "pan/tensor.hpp"

namespace pan {

// 3×3 convolution (stride 1, pad 1) + activation + optional 2×2 max pool.
struct ConvBlock {
  Tensor weight;  // K×C×3×3
  Tensor bias;    // K
  Activation act = Activation::kRelu;
  bool pool = true;
};

// Two-layer MLP scoring one spatial location from [context ; query].
// Non-final heads gate with a sigmoid; the unique final head normalizes with
// a spatial softmax.
struct AttentionHead {
  Tensor w1;  // in_width × hidden
  Tensor b1;  // hidden
  Tensor w2;  // hidden × 1
  Tensor b2;  // 1
  int delta = 0;
  bool final_layer = false;

  int input_width() const { return w1.dim(0); }
  int hidden_dim() const { return w1.dim(1); }
};

// One-hot query over the ten digit classes.
struct Query {
  static constexpr int kLength = 10;

  explicit Query(int digit);
  int digit() const { return digit_; }
  std::vector<float> onehot() const;

 private:
  int digit_;
};

// Builds an N×10 tensor of one-hot rows.
Tensor queries_tensor(const std::vector<Query>& queries);

Tensor conv_block_forward(Tape* tape, const ConvBlock& block, const Tensor& x);

// Zero-padded (2δ+1)² neighborhood of (i, j), spatial positions in row-major
// order with channels contiguous per position. Reference path for the
// batched gather; n selects the sample.
std::vector<float> extract_local_context(const Tensor& feature, int n, int i,
                                         int j, int delta);

// Scores every location of the feature map with shared head parameters.
Tensor attention_scores(Tape* tape, const AttentionHead& head,
                        const Tensor& feature, const Tensor& queries);

// final: softmax over the spatial grid; otherwise elementwise sigmoid.
Tensor normalize_scores(Tape* tape, const Tensor& scores, bool final_layer);

}  // namespace pan
