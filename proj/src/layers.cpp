#include "pan/layers.hpp"

#include <string>

#include "pan/errors.hpp"

namespace pan {

Query::Query(int digit) : digit_(digit) {
  if (digit < 0 || digit >= kLength)
    throw DataError("query digit " + std::to_string(digit) + " outside [0, 10)");
}

std::vector<float> Query::onehot() const {
  std::vector<float> v(kLength, 0.0f);
  v[static_cast<std::size_t>(digit_)] = 1.0f;
  return v;
}

Tensor queries_tensor(const std::vector<Query>& queries) {
  if (queries.empty()) throw UsageError("queries_tensor requires at least one query");
  std::vector<float> data;
  data.reserve(queries.size() * Query::kLength);
  for (const auto& q : queries) {
    auto row = q.onehot();
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor::from({static_cast<int>(queries.size()), Query::kLength},
                      std::move(data));
}

Tensor conv_block_forward(Tape* tape, const ConvBlock& block, const Tensor& x) {
  Tensor y = conv2d(tape, x, block.weight, block.bias, /*stride=*/1, /*pad=*/1);
  y = activation(tape, y, block.act);
  if (block.pool) y = maxpool2d(tape, y, /*window=*/2, /*stride=*/2);
  return y;
}

std::vector<float> extract_local_context(const Tensor& feature, int n, int i,
                                         int j, int delta) {
  if (feature.shape().size() != 4)
    throw ConfigError("extract_local_context expects N×C×H×W");
  if (delta < 0) throw ConfigError("context radius must be >= 0");
  int c = feature.dim(1), h = feature.dim(2), w = feature.dim(3);
  if (n < 0 || n >= feature.dim(0) || i < 0 || i >= h || j < 0 || j >= w)
    throw UsageError("extract_local_context location (" + std::to_string(i) + "," +
                     std::to_string(j) + ") outside " + shape_str(feature.shape()));
  int side = 2 * delta + 1;
  std::vector<float> out(static_cast<std::size_t>(side) * side * c, 0.0f);
  auto data = feature.data();
  const std::int64_t hw = std::int64_t(h) * w;
  int p = 0;
  for (int s = i - delta; s <= i + delta; ++s) {
    for (int t = j - delta; t <= j + delta; ++t, ++p) {
      if (s < 0 || s >= h || t < 0 || t >= w) continue;
      for (int cc = 0; cc < c; ++cc)
        out[static_cast<std::size_t>(p) * c + cc] =
            data[(std::int64_t(n) * c + cc) * hw + s * w + t];
    }
  }
  return out;
}

Tensor attention_scores(Tape* tape, const AttentionHead& head,
                        const Tensor& feature, const Tensor& queries) {
  int n = feature.dim(0), c = feature.dim(1), h = feature.dim(2), w = feature.dim(3);
  int side = 2 * head.delta + 1;
  int expected = side * side * c + queries.dim(1);
  if (head.input_width() != expected)
    throw ConfigError("attention head input width " + std::to_string(head.input_width()) +
                      " does not match (2δ+1)²·C + Q = " + std::to_string(expected));
  Tensor rows = gather_context_with_query(tape, feature, queries, head.delta);
  Tensor hidden = fully_connected(tape, rows, head.w1, head.b1);
  hidden = activation(tape, hidden, Activation::kRelu);
  Tensor s = fully_connected(tape, hidden, head.w2, head.b2);
  // [N*H*W, 1] rows are already in (n, i, j) order.
  return s.reshape({n, 1, h, w});
}

Tensor normalize_scores(Tape* tape, const Tensor& scores, bool final_layer) {
  if (final_layer) return spatial_softmax(tape, scores);
  return activation(tape, scores, Activation::kSigmoid);
}

}  // namespace pan
