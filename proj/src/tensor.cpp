#include "pan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <mutex>
#include <sstream>

#if __has_include(<cblas-openblas.h>)
#include <cblas-openblas.h>
#else
#include <cblas.h>
extern "C" void openblas_set_num_threads(int);
#endif

#ifdef _OPENMP
#include <omp.h>
#endif

#include "pan/errors.hpp"

namespace pan {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (int d : shape) {
    if (d <= 0) throw ConfigError("tensor extent must be positive, got " + shape_str(shape));
  }
}

int g_threads = 1;

void ensure_blas_single_threaded() {
  static std::once_flag flag;
  std::call_once(flag, [] { openblas_set_num_threads(1); });
}

template <class F>
void parallel_for(std::int64_t n, F&& f) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(g_threads)
  for (std::int64_t i = 0; i < n; ++i) f(i);
#else
  for (std::int64_t i = 0; i < n; ++i) f(i);
#endif
}

// Single-threaded row-major sgemm: C = alpha * op(A) * op(B) + beta * C.
void sgemm_st(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
              const float* a, int lda, const float* b, int ldb, float beta,
              float* c, int ldc) {
  ensure_blas_single_threaded();
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

// Parallel over fixed 256-row blocks of C; the K accumulation for each output
// element happens inside a single sgemm call, so the result does not depend
// on the worker count.
constexpr int kRowBlock = 256;

void sgemm_rowpar(bool trans_b, int m, int n, int k, const float* a, int lda,
                  const float* b, int ldb, float beta, float* c, int ldc) {
  std::int64_t blocks = (m + kRowBlock - 1) / kRowBlock;
  if (blocks <= 1 || g_threads <= 1) {
    sgemm_st(false, trans_b, m, n, k, 1.0f, a, lda, b, ldb, beta, c, ldc);
    return;
  }
  parallel_for(blocks, [&](std::int64_t bi) {
    int r0 = static_cast<int>(bi) * kRowBlock;
    int rows = std::min(kRowBlock, m - r0);
    sgemm_st(false, trans_b, rows, n, k, 1.0f, a + std::int64_t(r0) * lda, lda,
             b, ldb, beta, c + std::int64_t(r0) * ldc, ldc);
  });
}

thread_local std::vector<float> tl_scratch_a;
thread_local std::vector<float> tl_scratch_b;

float* scratch(std::vector<float>& buf, std::int64_t n) {
  if (static_cast<std::int64_t>(buf.size()) < n) buf.resize(n);
  return buf.data();
}

}  // namespace

void set_threads(int n) {
  if (n < 1) throw UsageError("thread count must be >= 1");
  g_threads = n;
}

int threads() { return g_threads; }

// --- Tensor ---

Tensor Tensor::make(Shape shape, std::vector<float> data) {
  check_shape(shape);
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
    throw ConfigError("data length does not match shape " + shape_str(shape));
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::make_shared<std::vector<float>>(std::move(data));
  t.impl_->grad = std::make_shared<std::vector<float>>();
  return t;
}

Tensor Tensor::zeros(Shape shape) {
  auto n = shape_numel(shape);
  return make(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), 0.0f));
}

Tensor Tensor::full(Shape shape, float value) {
  auto n = shape_numel(shape);
  return make(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), value));
}

Tensor Tensor::from(Shape shape, std::vector<float> data) {
  return make(std::move(shape), std::move(data));
}

Tensor Tensor::scalar(float value) { return from({1}, {value}); }

const Shape& Tensor::shape() const {
  if (!impl_) throw UsageError("operation on an undefined tensor");
  return impl_->shape;
}

int Tensor::dim(int i) const { return shape().at(static_cast<std::size_t>(i)); }

std::int64_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const float> Tensor::data() const {
  if (!impl_) throw UsageError("operation on an undefined tensor");
  return {impl_->data->data(), impl_->data->size()};
}

std::span<float> Tensor::raw_data() {
  if (!impl_) throw UsageError("operation on an undefined tensor");
  return {impl_->data->data(), impl_->data->size()};
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad->empty(); }

std::span<float> Tensor::grad() {
  if (!impl_) throw UsageError("operation on an undefined tensor");
  auto& g = *impl_->grad;
  if (g.empty()) g.assign(impl_->data->size(), 0.0f);
  return {g.data(), g.size()};
}

std::span<const float> Tensor::grad_view() const {
  if (!impl_) throw UsageError("operation on an undefined tensor");
  return {impl_->grad->data(), impl_->grad->size()};
}

void Tensor::zero_grad() {
  if (!impl_) return;
  std::fill(impl_->grad->begin(), impl_->grad->end(), 0.0f);
}

Tensor Tensor::reshape(Shape shape) const {
  check_shape(shape);
  if (shape_numel(shape) != numel())
    throw ConfigError("reshape " + shape_str(this->shape()) + " -> " +
                      shape_str(shape) + " changes element count");
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = impl_->data;
  t.impl_->grad = impl_->grad;
  return t;
}

float Tensor::item() const {
  if (numel() != 1) throw UsageError("item() requires a scalar tensor");
  return data()[0];
}

bool Tensor::same_storage(const Tensor& other) const {
  return impl_ && other.impl_ && impl_->data == other.impl_->data;
}

// --- Tape ---

void Tape::record(Tensor output, std::function<void()> backward_fn) {
  entries_.push_back({std::move(output), std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) throw UsageError("backward requires a scalar loss");
  Tensor seed = loss;
  seed.grad()[0] = 1.0f;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->output.has_grad()) continue;  // no gradient flow reached it
    it->fn();
  }
}

void Tape::clear() { entries_.clear(); }

// --- conv2d ---

namespace {

// col[(c*kh+u)*kw+v, oh*wout+ow] = x[c, oh*stride+u-pad, ow*stride+v-pad]
void im2col(const float* x, int c_in, int h, int w, int kh, int kw, int stride,
            int pad, int hout, int wout, float* col) {
  for (int c = 0; c < c_in; ++c) {
    const float* xc = x + std::int64_t(c) * h * w;
    for (int u = 0; u < kh; ++u) {
      for (int v = 0; v < kw; ++v) {
        float* row = col + (std::int64_t(c) * kh * kw + u * kw + v) * hout * wout;
        for (int oh = 0; oh < hout; ++oh) {
          int ih = oh * stride + u - pad;
          float* dst = row + std::int64_t(oh) * wout;
          if (ih < 0 || ih >= h) {
            std::memset(dst, 0, sizeof(float) * static_cast<std::size_t>(wout));
            continue;
          }
          const float* src = xc + std::int64_t(ih) * w;
          for (int ow = 0; ow < wout; ++ow) {
            int iw = ow * stride + v - pad;
            dst[ow] = (iw >= 0 && iw < w) ? src[iw] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, int c_in, int h, int w, int kh, int kw,
                int stride, int pad, int hout, int wout, float* dx) {
  for (int c = 0; c < c_in; ++c) {
    float* dxc = dx + std::int64_t(c) * h * w;
    for (int u = 0; u < kh; ++u) {
      for (int v = 0; v < kw; ++v) {
        const float* row = col + (std::int64_t(c) * kh * kw + u * kw + v) * hout * wout;
        for (int oh = 0; oh < hout; ++oh) {
          int ih = oh * stride + u - pad;
          if (ih < 0 || ih >= h) continue;
          float* dst = dxc + std::int64_t(ih) * w;
          const float* src = row + std::int64_t(oh) * wout;
          for (int ow = 0; ow < wout; ++ow) {
            int iw = ow * stride + v - pad;
            if (iw >= 0 && iw < w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b,
              int stride, int pad) {
  if (x.shape().size() != 4 || w.shape().size() != 4 || b.shape().size() != 1)
    throw ConfigError("conv2d expects x N×C×H×W, w K×C×kh×kw, b K");
  int n = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
  int k = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != c_in)
    throw ConfigError("conv2d channel mismatch: input has " + std::to_string(c_in) +
                      ", weight expects " + std::to_string(w.dim(1)));
  if (b.dim(0) != k) throw ConfigError("conv2d bias length must equal output channels");
  if (kh % 2 == 0 || kw % 2 == 0) throw ConfigError("conv2d kernel extents must be odd");
  if (pad < 0 || stride < 1) throw ConfigError("conv2d requires pad >= 0 and stride >= 1");
  if ((h + 2 * pad - kh) % stride != 0 || (wd + 2 * pad - kw) % stride != 0)
    throw ConfigError("conv2d output extent is not integral for input " +
                      shape_str(x.shape()));
  int hout = (h + 2 * pad - kh) / stride + 1;
  int wout = (wd + 2 * pad - kw) / stride + 1;

  Tensor out = Tensor::zeros({n, k, hout, wout});
  const std::int64_t ckk = std::int64_t(c_in) * kh * kw;
  const std::int64_t hw = std::int64_t(hout) * wout;
  const std::int64_t in_plane = std::int64_t(c_in) * h * wd;
  {
    const float* xp = x.data().data();
    const float* wp = w.data().data();
    const float* bp = b.data().data();
    float* op = out.raw_data().data();
    parallel_for(n, [&](std::int64_t i) {
      float* col = scratch(tl_scratch_a, ckk * hw);
      im2col(xp + i * in_plane, c_in, h, wd, kh, kw, stride, pad, hout, wout, col);
      float* on = op + i * k * hw;
      for (int kk = 0; kk < k; ++kk)
        std::fill(on + kk * hw, on + (kk + 1) * hw, bp[kk]);
      sgemm_st(false, false, k, static_cast<int>(hw), static_cast<int>(ckk), 1.0f,
               wp, static_cast<int>(ckk), col, static_cast<int>(hw), 1.0f, on,
               static_cast<int>(hw));
    });
  }

  if (tape) {
    Tensor xc = x, wc = w, bc = b, oc = out;
    tape->record(out, [=]() mutable {
      auto dout = oc.grad();
      auto dx = xc.grad();
      auto dw = wc.grad();
      auto db = bc.grad();
      const float* xp = xc.data().data();
      const float* wp = wc.data().data();
      // dX: dcol = W^T * dOut_n, then scatter back.
      parallel_for(n, [&](std::int64_t i) {
        float* dcol = scratch(tl_scratch_a, ckk * hw);
        sgemm_st(true, false, static_cast<int>(ckk), static_cast<int>(hw), k, 1.0f,
                 wp, static_cast<int>(ckk), dout.data() + i * k * hw,
                 static_cast<int>(hw), 0.0f, dcol, static_cast<int>(hw));
        col2im_add(dcol, c_in, h, wd, kh, kw, stride, pad, hout, wout,
                   dx.data() + i * in_plane);
      });
      // dW: per-sample partials, then a fixed-order sum over samples.
      std::vector<float> partial(static_cast<std::size_t>(n) * k * ckk);
      parallel_for(n, [&](std::int64_t i) {
        float* col = scratch(tl_scratch_a, ckk * hw);
        im2col(xp + i * in_plane, c_in, h, wd, kh, kw, stride, pad, hout, wout, col);
        sgemm_st(false, true, k, static_cast<int>(ckk), static_cast<int>(hw), 1.0f,
                 dout.data() + i * k * hw, static_cast<int>(hw), col,
                 static_cast<int>(hw), 0.0f, partial.data() + i * k * ckk,
                 static_cast<int>(ckk));
      });
      const std::int64_t wsz = std::int64_t(k) * ckk;
      for (std::int64_t j = 0; j < wsz; ++j) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < n; ++i) acc += partial[i * wsz + j];
        dw[static_cast<std::size_t>(j)] += static_cast<float>(acc);
      }
      for (int kk = 0; kk < k; ++kk) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
          const float* d = dout.data() + i * k * hw + kk * hw;
          for (std::int64_t j = 0; j < hw; ++j) acc += d[j];
        }
        db[static_cast<std::size_t>(kk)] += static_cast<float>(acc);
      }
    });
  }
  return out;
}

// --- maxpool2d ---

Tensor maxpool2d(Tape* tape, const Tensor& x, int window, int stride) {
  if (x.shape().size() != 4) throw ConfigError("maxpool2d expects N×C×H×W");
  if (window < 1 || stride < 1) throw ConfigError("maxpool2d window/stride must be >= 1");
  int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if ((h - window) % stride != 0 || (w - window) % stride != 0)
    throw ConfigError("maxpool2d extent " + std::to_string(h) + "×" + std::to_string(w) +
                      " not divisible for window " + std::to_string(window) +
                      ", stride " + std::to_string(stride));
  int hout = (h - window) / stride + 1;
  int wout = (w - window) / stride + 1;

  Tensor out = Tensor::zeros({n, c, hout, wout});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(
      static_cast<std::size_t>(out.numel()));
  {
    const float* xp = x.data().data();
    float* op = out.raw_data().data();
    std::uint32_t* am = argmax->data();
    parallel_for(std::int64_t(n) * c, [&](std::int64_t plane) {
      const float* xpl = xp + plane * h * w;
      float* opl = op + plane * hout * wout;
      std::uint32_t* apl = am + plane * hout * wout;
      for (int oh = 0; oh < hout; ++oh) {
        for (int ow = 0; ow < wout; ++ow) {
          float best = -std::numeric_limits<float>::infinity();
          int best_idx = 0;
          for (int u = 0; u < window; ++u) {
            for (int v = 0; v < window; ++v) {
              int idx = (oh * stride + u) * w + (ow * stride + v);
              if (xpl[idx] > best) {  // first row-major argmax wins ties
                best = xpl[idx];
                best_idx = idx;
              }
            }
          }
          opl[oh * wout + ow] = best;
          apl[oh * wout + ow] = static_cast<std::uint32_t>(best_idx);
        }
      }
    });
  }

  if (tape) {
    Tensor xc = x, oc = out;
    tape->record(out, [=]() mutable {
      auto dout = oc.grad();
      auto dx = xc.grad();
      const std::uint32_t* am = argmax->data();
      parallel_for(std::int64_t(n) * c, [&](std::int64_t plane) {
        const float* dpl = dout.data() + plane * hout * wout;
        const std::uint32_t* apl = am + plane * hout * wout;
        float* dxpl = dx.data() + plane * h * w;
        for (std::int64_t i = 0; i < std::int64_t(hout) * wout; ++i)
          dxpl[apl[i]] += dpl[i];
      });
    });
  }
  return out;
}

// --- fully_connected ---

Tensor fully_connected(Tape* tape, const Tensor& x, const Tensor& w,
                       const Tensor& b) {
  if (x.shape().size() != 2 || w.shape().size() != 2 || b.shape().size() != 1)
    throw ConfigError("fully_connected expects x R×D, w D×E, b E");
  int r = x.dim(0), d = x.dim(1), e = w.dim(1);
  if (w.dim(0) != d || b.dim(0) != e)
    throw ConfigError("fully_connected shape mismatch: x " + shape_str(x.shape()) +
                      ", w " + shape_str(w.shape()));

  Tensor out = Tensor::zeros({r, e});
  {
    float* op = out.raw_data().data();
    const float* bp = b.data().data();
    for (int i = 0; i < r; ++i) std::memcpy(op + std::int64_t(i) * e, bp, sizeof(float) * e);
    sgemm_rowpar(false, r, e, d, x.data().data(), d, w.data().data(), e, 1.0f, op, e);
  }

  if (tape) {
    Tensor xc = x, wc = w, bc = b, oc = out;
    tape->record(out, [=]() mutable {
      auto dout = oc.grad();
      auto dx = xc.grad();
      auto dw = wc.grad();
      auto db = bc.grad();
      // dX += dY * W^T
      sgemm_rowpar(true, r, d, e, dout.data(), e, wc.data().data(), e, 1.0f,
                   dx.data(), d);
      // dW += X^T * dY over a fixed row partition (thread-count independent).
      int blocks = static_cast<int>(std::clamp<std::int64_t>(r / 1024, 1, 16));
      std::int64_t rows_per = (r + blocks - 1) / blocks;
      std::vector<float> partial(static_cast<std::size_t>(blocks) * d * e, 0.0f);
      parallel_for(blocks, [&](std::int64_t bi) {
        std::int64_t r0 = bi * rows_per;
        int rows = static_cast<int>(std::min<std::int64_t>(rows_per, r - r0));
        if (rows <= 0) return;
        sgemm_st(true, false, d, e, rows, 1.0f, xc.data().data() + r0 * d, d,
                 dout.data() + r0 * e, e, 0.0f, partial.data() + bi * d * e, e);
      });
      const std::int64_t wsz = std::int64_t(d) * e;
      for (std::int64_t j = 0; j < wsz; ++j) {
        double acc = 0.0;
        for (int bi = 0; bi < blocks; ++bi) acc += partial[bi * wsz + j];
        dw[static_cast<std::size_t>(j)] += static_cast<float>(acc);
      }
      for (int col = 0; col < e; ++col) {
        double acc = 0.0;
        for (int i = 0; i < r; ++i) acc += dout[std::int64_t(i) * e + col];
        db[static_cast<std::size_t>(col)] += static_cast<float>(acc);
      }
    });
  }
  return out;
}

// --- activation ---

Tensor activation(Tape* tape, const Tensor& x, Activation kind) {
  Tensor out = Tensor::zeros(x.shape());
  const std::int64_t sz = x.numel();
  {
    const float* xp = x.data().data();
    float* op = out.raw_data().data();
    if (kind == Activation::kRelu) {
      parallel_for(sz, [&](std::int64_t i) { op[i] = xp[i] > 0.0f ? xp[i] : 0.0f; });
    } else {
      parallel_for(sz, [&](std::int64_t i) {
        op[i] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(xp[i]))));
      });
    }
  }
  if (tape) {
    Tensor xc = x, oc = out;
    tape->record(out, [=]() mutable {
      auto dout = oc.grad();
      auto dx = xc.grad();
      if (kind == Activation::kRelu) {
        const float* xp = xc.data().data();
        parallel_for(sz, [&](std::int64_t i) {
          if (xp[i] > 0.0f) dx[static_cast<std::size_t>(i)] += dout[static_cast<std::size_t>(i)];
        });
      } else {
        const float* yp = oc.data().data();
        parallel_for(sz, [&](std::int64_t i) {
          dx[static_cast<std::size_t>(i)] +=
              yp[i] * (1.0f - yp[i]) * dout[static_cast<std::size_t>(i)];
        });
      }
    });
  }
  return out;
}

// --- softmax ---

Tensor softmax_rows(Tape* tape, const Tensor& x) {
  if (x.shape().size() != 2) throw ConfigError("softmax_rows expects R×K");
  int r = x.dim(0), k = x.dim(1);
  Tensor out = Tensor::zeros({r, k});
  {
    const float* xp = x.data().data();
    float* op = out.raw_data().data();
    parallel_for(r, [&](std::int64_t i) {
      const float* row = xp + i * k;
      float* orow = op + i * k;
      float m = row[0];
      for (int j = 1; j < k; ++j) m = std::max(m, row[j]);
      double denom = 0.0;
      for (int j = 0; j < k; ++j)
        denom += std::exp(static_cast<double>(row[j]) - static_cast<double>(m));
      for (int j = 0; j < k; ++j)
        orow[j] = static_cast<float>(
            std::exp(static_cast<double>(row[j]) - static_cast<double>(m)) / denom);
    });
  }
  if (tape) {
    Tensor xc = x, oc = out;
    tape->record(out, [=]() mutable {
      auto dout = oc.grad();
      auto dx = xc.grad();
      const float* yp = oc.data().data();
      parallel_for(r, [&](std::int64_t i) {
        const float* y = yp + i * k;
        const float* dy = dout.data() + i * k;
        float* dxr = dx.data() + i * k;
        double dot = 0.0;
        for (int j = 0; j < k; ++j) dot += static_cast<double>(dy[j]) * y[j];
        for (int j = 0; j < k; ++j)
          dxr[j] += static_cast<float>(y[j] * (static_cast<double>(dy[j]) - dot));
      });
    });
  }
  return out;
}

Tensor spatial_softmax(Tape* tape, const Tensor& x) {
  if (x.shape().size() != 4 || x.dim(1) != 1)
    throw ConfigError("spatial_softmax expects N×1×H×W, got " + shape_str(x.shape()));
  int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  Tensor rows = x.reshape({n, h * w});
  Tensor out = softmax_rows(tape, rows);
  return out.reshape({n, 1, h, w});
}

// --- attend / reductions ---

Tensor attend(Tape* tape, const Tensor& f, const Tensor& alpha) {
  if (f.shape().size() != 4 || alpha.shape().size() != 4 || alpha.dim(1) != 1)
    throw ConfigError("attend expects f N×C×H×W and alpha N×1×H×W");
  if (f.dim(0) != alpha.dim(0) || f.dim(2) != alpha.dim(2) || f.dim(3) != alpha.dim(3))
    throw ConfigError("attend spatial shape mismatch: f " + shape_str(f.shape()) +
                      " vs alpha " + shape_str(alpha.shape()));
  int n = f.dim(0), c = f.dim(1);
  const std::int64_t hw = std::int64_t(f.dim(2)) * f.dim(3);
  Tensor out = Tensor::zeros(f.shape());
  {
    const float* fp = f.data().data();
    const float* ap = alpha.data().data();
    float* op = out.raw_data().data();
    parallel_for(n, [&](std::int64_t i) {
      const float* a = ap + i * hw;
      for (int cc = 0; cc < c; ++cc) {
        const float* fr = fp + (i * c + cc) * hw;
        float* orow = op + (i * c + cc) * hw;
        for (std::int64_t j = 0; j < hw; ++j) orow[j] = a[j] * fr[j];
      }
    });
  }
  if (tape) {
    Tensor fc = f, ac = alpha, oc = out;
    tape->record(out, [=]() mutable {
      auto dout = oc.grad();
      auto df = fc.grad();
      auto da = ac.grad();
      const float* fp = fc.data().data();
      const float* ap = ac.data().data();
      parallel_for(n, [&](std::int64_t i) {
        const float* a = ap + i * hw;
        float* dai = da.data() + i * hw;
        for (std::int64_t j = 0; j < hw; ++j) {
          double acc = 0.0;
          for (int cc = 0; cc < c; ++cc) {
            std::int64_t idx = (i * c + cc) * hw + j;
            acc += static_cast<double>(fp[idx]) * dout[static_cast<std::size_t>(idx)];
            df[static_cast<std::size_t>(idx)] += a[j] * dout[static_cast<std::size_t>(idx)];
          }
          dai[j] += static_cast<float>(acc);
        }
      });
    });
  }
  return out;
}

Tensor spatial_sum(Tape* tape, const Tensor& f) {
  if (f.shape().size() != 4) throw ConfigError("spatial_sum expects N×C×H×W");
  int n = f.dim(0), c = f.dim(1);
  const std::int64_t hw = std::int64_t(f.dim(2)) * f.dim(3);
  Tensor out = Tensor::zeros({n, c});
  {
    const float* fp = f.data().data();
    float* op = out.raw_data().data();
    parallel_for(std::int64_t(n) * c, [&](std::int64_t plane) {
      const float* fr = fp + plane * hw;
      double acc = 0.0;
      for (std::int64_t j = 0; j < hw; ++j) acc += fr[j];
      op[plane] = static_cast<float>(acc);
    });
  }
  if (tape) {
    Tensor fcap = f, oc = out;
    tape->record(out, [=]() mutable {
      auto dout = oc.grad();
      auto df = fcap.grad();
      parallel_for(std::int64_t(n) * c, [&](std::int64_t plane) {
        float g = dout[static_cast<std::size_t>(plane)];
        float* dr = df.data() + plane * hw;
        for (std::int64_t j = 0; j < hw; ++j) dr[j] += g;
      });
    });
  }
  return out;
}

Tensor sum_all(Tape* tape, const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (tape) {
    Tensor xc = x, oc = out;
    tape->record(out, [=]() mutable {
      float g = oc.grad()[0];
      auto dx = xc.grad();
      for (auto& v : dx) v += g;
    });
  }
  return out;
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ConfigError("mul shape mismatch: " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const std::int64_t sz = a.numel();
  {
    const float* ap = a.data().data();
    const float* bp = b.data().data();
    float* op = out.raw_data().data();
    parallel_for(sz, [&](std::int64_t i) { op[i] = ap[i] * bp[i]; });
  }
  if (tape) {
    Tensor ac = a, bc = b, oc = out;
    tape->record(out, [=]() mutable {
      auto dout = oc.grad();
      auto da = ac.grad();
      auto db = bc.grad();
      const float* ap = ac.data().data();
      const float* bp = bc.data().data();
      const bool same = ac.same_storage(bc);
      for (std::int64_t i = 0; i < sz; ++i) {
        auto ui = static_cast<std::size_t>(i);
        da[ui] += bp[i] * dout[ui];
        if (same)
          da[ui] += ap[i] * dout[ui];
        else
          db[ui] += ap[i] * dout[ui];
      }
    });
  }
  return out;
}

Tensor log_elem(Tape* tape, const Tensor& x) {
  // Inputs are probabilities; a floor keeps the output finite if a value
  // underflows to zero.
  constexpr double kFloor = 1e-38;
  Tensor out = Tensor::zeros(x.shape());
  const std::int64_t sz = x.numel();
  {
    const float* xp = x.data().data();
    float* op = out.raw_data().data();
    parallel_for(sz, [&](std::int64_t i) {
      op[i] = static_cast<float>(std::log(std::max(static_cast<double>(xp[i]), kFloor)));
    });
  }
  if (tape) {
    Tensor xc = x, oc = out;
    tape->record(out, [=]() mutable {
      auto dout = oc.grad();
      auto dx = xc.grad();
      const float* xp = xc.data().data();
      parallel_for(sz, [&](std::int64_t i) {
        double denom = std::max(static_cast<double>(xp[i]), kFloor);
        dx[static_cast<std::size_t>(i)] +=
            static_cast<float>(dout[static_cast<std::size_t>(i)] / denom);
      });
    });
  }
  return out;
}

// --- context gather ---

Tensor gather_context_with_query(Tape* tape, const Tensor& f, const Tensor& q,
                                 int delta) {
  if (f.shape().size() != 4 || q.shape().size() != 2)
    throw ConfigError("gather_context_with_query expects f N×C×H×W, q N×Q");
  if (f.dim(0) != q.dim(0)) throw ConfigError("gather_context_with_query batch mismatch");
  if (delta < 0) throw ConfigError("context radius must be >= 0");
  int n = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3), qlen = q.dim(1);
  int side = 2 * delta + 1;
  int ctxw = side * side * c;
  int width = ctxw + qlen;
  const std::int64_t hw = std::int64_t(h) * w;

  Tensor out = Tensor::zeros({static_cast<int>(n * hw), width});
  {
    const float* fp = f.data().data();
    const float* qp = q.data().data();
    float* op = out.raw_data().data();
    parallel_for(n, [&](std::int64_t i) {
      const float* fn = fp + i * c * hw;
      const float* qn = qp + i * qlen;
      for (int y = 0; y < h; ++y) {
        for (int x0 = 0; x0 < w; ++x0) {
          float* row = op + (i * hw + y * w + x0) * width;
          int p = 0;
          for (int s = y - delta; s <= y + delta; ++s) {
            for (int t = x0 - delta; t <= x0 + delta; ++t, ++p) {
              float* dst = row + std::int64_t(p) * c;
              if (s < 0 || s >= h || t < 0 || t >= w) {
                std::memset(dst, 0, sizeof(float) * static_cast<std::size_t>(c));
              } else {
                for (int cc = 0; cc < c; ++cc) dst[cc] = fn[cc * hw + s * w + t];
              }
            }
          }
          std::memcpy(row + ctxw, qn, sizeof(float) * static_cast<std::size_t>(qlen));
        }
      }
    });
  }

  if (tape) {
    Tensor fcap = f, qc = q, oc = out;
    tape->record(out, [=]() mutable {
      auto dout = oc.grad();
      auto df = fcap.grad();
      auto dq = qc.grad();
      parallel_for(n, [&](std::int64_t i) {
        float* dfn = df.data() + i * c * hw;
        for (int y = 0; y < h; ++y) {
          for (int x0 = 0; x0 < w; ++x0) {
            const float* row = dout.data() + (i * hw + y * w + x0) * width;
            int p = 0;
            for (int s = y - delta; s <= y + delta; ++s) {
              for (int t = x0 - delta; t <= x0 + delta; ++t, ++p) {
                if (s < 0 || s >= h || t < 0 || t >= w) continue;
                const float* src = row + std::int64_t(p) * c;
                for (int cc = 0; cc < c; ++cc) dfn[cc * hw + s * w + t] += src[cc];
              }
            }
          }
        }
        float* dqn = dq.data() + i * qlen;
        for (int e = 0; e < qlen; ++e) {
          double acc = 0.0;
          for (std::int64_t j = 0; j < hw; ++j)
            acc += dout[static_cast<std::size_t>((i * hw + j) * width + ctxw + e)];
          dqn[e] += static_cast<float>(acc);
        }
      });
    });
  }
  return out;
}

// --- layout permutes ---

Tensor nchw_to_rows(Tape* tape, const Tensor& f) {
  if (f.shape().size() != 4) throw ConfigError("nchw_to_rows expects N×C×H×W");
  int n = f.dim(0), c = f.dim(1);
  const std::int64_t hw = std::int64_t(f.dim(2)) * f.dim(3);
  Tensor out = Tensor::zeros({static_cast<int>(n * hw), c});
  {
    const float* fp = f.data().data();
    float* op = out.raw_data().data();
    parallel_for(n, [&](std::int64_t i) {
      for (std::int64_t j = 0; j < hw; ++j)
        for (int cc = 0; cc < c; ++cc)
          op[(i * hw + j) * c + cc] = fp[(i * c + cc) * hw + j];
    });
  }
  if (tape) {
    Tensor fcap = f, oc = out;
    tape->record(out, [=]() mutable {
      auto dout = oc.grad();
      auto df = fcap.grad();
      parallel_for(n, [&](std::int64_t i) {
        for (std::int64_t j = 0; j < hw; ++j)
          for (int cc = 0; cc < c; ++cc)
            df[static_cast<std::size_t>((i * c + cc) * hw + j)] +=
                dout[static_cast<std::size_t>((i * hw + j) * c + cc)];
      });
    });
  }
  return out;
}

Tensor rows_to_nchw(Tape* tape, const Tensor& rows, int n, int h, int w) {
  if (rows.shape().size() != 2) throw ConfigError("rows_to_nchw expects a 2-D input");
  const std::int64_t hw = std::int64_t(h) * w;
  if (rows.dim(0) != n * hw)
    throw ConfigError("rows_to_nchw row count mismatch: " + shape_str(rows.shape()));
  int c = rows.dim(1);
  Tensor out = Tensor::zeros({n, c, h, w});
  {
    const float* rp = rows.data().data();
    float* op = out.raw_data().data();
    parallel_for(n, [&](std::int64_t i) {
      for (std::int64_t j = 0; j < hw; ++j)
        for (int cc = 0; cc < c; ++cc)
          op[(i * c + cc) * hw + j] = rp[(i * hw + j) * c + cc];
    });
  }
  if (tape) {
    Tensor rc = rows, oc = out;
    tape->record(out, [=]() mutable {
      auto dout = oc.grad();
      auto dr = rc.grad();
      parallel_for(n, [&](std::int64_t i) {
        for (std::int64_t j = 0; j < hw; ++j)
          for (int cc = 0; cc < c; ++cc)
            dr[static_cast<std::size_t>((i * hw + j) * c + cc)] +=
                dout[static_cast<std::size_t>((i * c + cc) * hw + j)];
      });
    });
  }
  return out;
}

// --- losses ---

namespace {

void check_labels(const std::vector<int>& labels, int n, int k) {
  if (static_cast<int>(labels.size()) != n)
    throw ConfigError("label count " + std::to_string(labels.size()) +
                      " does not match batch size " + std::to_string(n));
  for (int y : labels) {
    if (y < 0 || y >= k)
      throw DataError("label " + std::to_string(y) + " outside [0, " +
                      std::to_string(k) + ")");
  }
}

}  // namespace

Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits,
                             const std::vector<int>& labels) {
  if (logits.shape().size() != 2) throw ConfigError("softmax_cross_entropy expects N×K");
  int n = logits.dim(0), k = logits.dim(1);
  check_labels(labels, n, k);

  auto probs = std::make_shared<std::vector<float>>(static_cast<std::size_t>(n) * k);
  double loss = 0.0;
  {
    const float* xp = logits.data().data();
    for (int i = 0; i < n; ++i) {
      const float* row = xp + std::int64_t(i) * k;
      float m = row[0];
      for (int j = 1; j < k; ++j) m = std::max(m, row[j]);
      double denom = 0.0;
      for (int j = 0; j < k; ++j)
        denom += std::exp(static_cast<double>(row[j]) - static_cast<double>(m));
      for (int j = 0; j < k; ++j)
        (*probs)[static_cast<std::size_t>(i) * k + j] = static_cast<float>(
            std::exp(static_cast<double>(row[j]) - static_cast<double>(m)) / denom);
      loss -= static_cast<double>(row[labels[static_cast<std::size_t>(i)]]) -
              static_cast<double>(m) - std::log(denom);
    }
    loss /= n;
  }
  Tensor out = Tensor::scalar(static_cast<float>(loss));

  if (tape) {
    Tensor lc = logits, oc = out;
    std::vector<int> lab = labels;
    tape->record(out, [=]() mutable {
      float g = oc.grad()[0];
      auto dx = lc.grad();
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < k; ++j) {
          float p = (*probs)[static_cast<std::size_t>(i) * k + j];
          float onehot = (j == lab[static_cast<std::size_t>(i)]) ? 1.0f : 0.0f;
          dx[static_cast<std::size_t>(i) * k + j] += g * (p - onehot) / static_cast<float>(n);
        }
      }
    });
  }
  return out;
}

Tensor nll_of_probability(Tape* tape, const Tensor& prob,
                          const std::vector<int>& labels) {
  if (prob.shape().size() != 2) throw ConfigError("nll_of_probability expects N×K");
  int n = prob.dim(0), k = prob.dim(1);
  check_labels(labels, n, k);
  constexpr double kEps = 1e-12;

  double loss = 0.0;
  {
    const float* pp = prob.data().data();
    for (int i = 0; i < n; ++i) {
      const float* row = pp + std::int64_t(i) * k;
      double sum = 0.0;
      for (int j = 0; j < k; ++j) {
        if (row[j] < 0.0f)
          throw NumericError("nll_of_probability: negative probability at row " +
                             std::to_string(i));
        sum += row[j];
      }
      if (std::abs(sum - 1.0) > 1e-4)
        throw NumericError("nll_of_probability: row " + std::to_string(i) +
                           " sums to " + std::to_string(sum));
      loss -= std::log(static_cast<double>(row[labels[static_cast<std::size_t>(i)]]) + kEps);
    }
    loss /= n;
  }
  Tensor out = Tensor::scalar(static_cast<float>(loss));

  if (tape) {
    Tensor pc = prob, oc = out;
    std::vector<int> lab = labels;
    tape->record(out, [=]() mutable {
      float g = oc.grad()[0];
      auto dp = pc.grad();
      const float* pp = pc.data().data();
      for (int i = 0; i < n; ++i) {
        int y = lab[static_cast<std::size_t>(i)];
        double denom = static_cast<double>(pp[std::int64_t(i) * k + y]) + kEps;
        dp[static_cast<std::size_t>(i) * k + y] +=
            static_cast<float>(-g / (denom * n));
      }
    });
  }
  return out;
}

}  // namespace pan
