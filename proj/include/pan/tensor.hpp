#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pan {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense float32 tensor. Copies are shallow (shared storage); values are
// treated as immutable after creation except for gradient accumulation and
// the sanctioned mutators (optimizer step, numeric_gradient).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, float value);
  static Tensor from(Shape shape, std::vector<float> data);
  static Tensor scalar(float value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int dim(int i) const;
  std::int64_t numel() const;

  std::span<const float> data() const;
  // Mutable access; callers own the immutability contract.
  std::span<float> raw_data();

  bool has_grad() const;
  // Allocates a zero gradient buffer on first access.
  std::span<float> grad();
  std::span<const float> grad_view() const;
  void zero_grad();

  // New shape over the same data and gradient storage.
  Tensor reshape(Shape shape) const;

  float item() const;

  bool same_storage(const Tensor& other) const;

 private:
  struct Impl {
    Shape shape;
    std::shared_ptr<std::vector<float>> data;
    std::shared_ptr<std::vector<float>> grad;  // empty vector until first use
  };
  std::shared_ptr<Impl> impl_;

  static Tensor make(Shape shape, std::vector<float> data);
};

// Reverse-mode computation record. Operations append entries in execution
// order; backward() replays them exactly once in reverse.
class Tape {
 public:
  void record(Tensor output, std::function<void()> backward_fn);
  // Seeds d(loss)/d(loss) = 1 and propagates to every reachable tensor.
  void backward(const Tensor& loss);
  void clear();
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    Tensor output;
    std::function<void()> fn;
  };
  std::vector<Entry> entries_;
};

enum class Activation { kRelu, kSigmoid };

// Worker threads for batched operators (OpenBLAS itself is pinned to one
// thread; all parallelism is over fixed partitions, so results are bitwise
// identical for any thread count).
void set_threads(int n);
int threads();

// --- Differentiable operations. `tape` may be null for inference. ---

// x: N×C×H×W, w: K×C×kh×kw, b: K. Zero padding, exact output extents.
Tensor conv2d(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b,
              int stride, int pad);

// Gradient routes to the first (row-major) argmax of each window.
Tensor maxpool2d(Tape* tape, const Tensor& x, int window, int stride);

// x: R×D, w: D×E, b: E -> R×E.
Tensor fully_connected(Tape* tape, const Tensor& x, const Tensor& w,
                       const Tensor& b);

Tensor activation(Tape* tape, const Tensor& x, Activation kind);

// Row-wise softmax of an R×K matrix, max-subtracted for stability.
Tensor softmax_rows(Tape* tape, const Tensor& x);

// Softmax over the whole H×W grid per sample; x: N×1×H×W.
Tensor spatial_softmax(Tape* tape, const Tensor& x);

// out[n,c,i,j] = alpha[n,0,i,j] * f[n,c,i,j].
Tensor attend(Tape* tape, const Tensor& f, const Tensor& alpha);

// out[n,c] = sum_{i,j} f[n,c,i,j].
Tensor spatial_sum(Tape* tape, const Tensor& f);

Tensor sum_all(Tape* tape, const Tensor& x);

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);

Tensor log_elem(Tape* tape, const Tensor& x);

// Per spatial location, concatenates the (2*delta+1)^2 neighborhood (spatial
// positions in row-major order, channels contiguous per position, zeros
// outside bounds) with the per-sample query row.
// f: N×C×H×W, q: N×Q -> [N*H*W, (2*delta+1)^2*C + Q].
Tensor gather_context_with_query(Tape* tape, const Tensor& f, const Tensor& q,
                                 int delta);

// f: N×C×H×W -> [N*H*W, C] with rows in (n, i, j) order.
Tensor nchw_to_rows(Tape* tape, const Tensor& f);

// rows: [N*H*W, C] -> N×C×H×W. Inverse of nchw_to_rows.
Tensor rows_to_nchw(Tape* tape, const Tensor& rows, int n, int h, int w);

// Mean over the batch of -log softmax(logits)[label].
Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits,
                             const std::vector<int>& labels);

// Mean of -log(prob[label] + 1e-12); rows must already be normalized.
Tensor nll_of_probability(Tape* tape, const Tensor& prob,
                          const std::vector<int>& labels);

}  // namespace pan
