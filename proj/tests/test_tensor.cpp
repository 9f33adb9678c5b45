// Tensor, tape, and per-operation contract tests against brute-force oracles.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "pan/errors.hpp"
#include "pan/gradcheck.hpp"
#include "pan/rng.hpp"
#include "pan/tensor.hpp"

using namespace pan;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, float lo = -1.0f, float hi = 1.0f) {
  std::vector<float> data(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : data) v = static_cast<float>(rng.uniform(lo, hi));
  return Tensor::from(std::move(shape), std::move(data));
}

// Naive direct convolution, accumulated in double.
std::vector<float> conv2d_oracle(const Tensor& x, const Tensor& w,
                                 const Tensor& b, int stride, int pad) {
  int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  int k = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  int hout = (h + 2 * pad - kh) / stride + 1;
  int wout = (wd + 2 * pad - kw) / stride + 1;
  std::vector<float> out(static_cast<std::size_t>(n) * k * hout * wout);
  auto xd = x.data();
  auto wdat = w.data();
  auto bd = b.data();
  std::size_t idx = 0;
  for (int i = 0; i < n; ++i)
    for (int kk = 0; kk < k; ++kk)
      for (int oh = 0; oh < hout; ++oh)
        for (int ow = 0; ow < wout; ++ow) {
          double acc = bd[kk];
          for (int cc = 0; cc < c; ++cc)
            for (int u = 0; u < kh; ++u)
              for (int v = 0; v < kw; ++v) {
                int ih = oh * stride + u - pad;
                int iw = ow * stride + v - pad;
                if (ih < 0 || ih >= h || iw < 0 || iw >= wd) continue;
                acc += static_cast<double>(xd[((std::int64_t(i) * c + cc) * h + ih) * wd + iw]) *
                       wdat[((std::int64_t(kk) * c + cc) * kh + u) * kw + v];
              }
          out[idx++] = static_cast<float>(acc);
        }
  return out;
}

std::vector<float> maxpool_oracle(const Tensor& x, int window, int stride) {
  int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  int hout = (h - window) / stride + 1;
  int wout = (w - window) / stride + 1;
  std::vector<float> out;
  auto xd = x.data();
  for (int i = 0; i < n; ++i)
    for (int cc = 0; cc < c; ++cc)
      for (int oh = 0; oh < hout; ++oh)
        for (int ow = 0; ow < wout; ++ow) {
          float best = -1e30f;
          for (int u = 0; u < window; ++u)
            for (int v = 0; v < window; ++v)
              best = std::max(best, xd[((std::int64_t(i) * c + cc) * h + oh * stride + u) * w +
                                       ow * stride + v]);
          out.push_back(best);
        }
  return out;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(),
                     a.data().size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.dim(1) == 3);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ConfigError);
  CHECK_THROWS_AS(Tensor::zeros({0, 3}), ConfigError);
  CHECK_THROWS_AS(t.item(), UsageError);

  Tensor r = t.reshape({3, 2});
  CHECK(r.same_storage(t));
  CHECK_THROWS_AS(t.reshape({4, 2}), ConfigError);
  // Gradient storage is shared across reshaped views.
  r.grad()[0] = 5.0f;
  CHECK(t.grad()[0] == 5.0f);
}

TEST_CASE("conv2d identity 1x1 kernel") {
  Rng rng(1);
  Tensor x = random_tensor(rng, {1, 3, 4, 4});
  std::vector<float> wdat(9, 0.0f);
  wdat[0] = 1.0f;  // w[0,0]
  wdat[4] = 1.0f;  // w[1,1]
  wdat[8] = 1.0f;  // w[2,2]
  Tensor w = Tensor::from({3, 3, 1, 1}, wdat);
  Tensor b = Tensor::zeros({3});
  Tensor y = conv2d(nullptr, x, w, b, 1, 0);
  CHECK(bitwise_equal(y, x));
}

TEST_CASE("conv2d all-ones 3x3") {
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(nullptr, x, w, b, 1, 1);
  auto d = y.data();
  CHECK(d[4] == 9.0f);  // center
  CHECK(d[0] == 4.0f);  // corner
  CHECK(d[1] == 6.0f);  // edge
}

TEST_CASE("conv2d matches naive oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = random_tensor(rng, {2, 3, 7, 6});
    Tensor w = random_tensor(rng, {4, 3, 3, 3});
    Tensor b = random_tensor(rng, {4});
    for (auto [stride, pad] : {std::pair{1, 1}, {1, 0}, {2, 1}}) {
      if ((7 + 2 * pad - 3) % stride != 0 || (6 + 2 * pad - 3) % stride != 0) continue;
      Tensor y = conv2d(nullptr, x, w, b, stride, pad);
      auto oracle = conv2d_oracle(x, w, b, stride, pad);
      REQUIRE(y.data().size() == oracle.size());
      for (std::size_t i = 0; i < oracle.size(); ++i)
        CHECK(y.data()[i] == doctest::Approx(oracle[i]).epsilon(1e-5));
    }
  }
}

TEST_CASE("conv2d configuration errors") {
  Tensor x = Tensor::zeros({1, 3, 5, 5});
  Tensor w = Tensor::zeros({2, 3, 3, 3});
  Tensor b = Tensor::zeros({2});
  CHECK_THROWS_AS(conv2d(nullptr, x, Tensor::zeros({2, 4, 3, 3}), b, 1, 1), ConfigError);
  Tensor x6 = Tensor::zeros({1, 3, 6, 6});
  CHECK_THROWS_AS(conv2d(nullptr, x6, w, b, 2, 1), ConfigError);  // (6+2-3)%2 != 0
  CHECK_THROWS_AS(conv2d(nullptr, x, Tensor::zeros({2, 3, 2, 2}), b, 1, 0), ConfigError);
  CHECK_THROWS_AS(conv2d(nullptr, x, w, Tensor::zeros({3}), 1, 1), ConfigError);
}

TEST_CASE("maxpool2d forced argmax and backward routing") {
  Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  Tape tape;
  Tensor y = maxpool2d(&tape, x, 2, 2);
  CHECK(y.item() == 4.0f);
  tape.backward(sum_all(&tape, y));
  auto g = x.grad();
  CHECK(g[0] == 0.0f);
  CHECK(g[1] == 0.0f);
  CHECK(g[2] == 0.0f);
  CHECK(g[3] == 1.0f);
}

TEST_CASE("maxpool2d constant input and ties") {
  Tensor x = Tensor::full({1, 2, 4, 4}, 3.25f);
  Tape tape;
  Tensor y = maxpool2d(&tape, x, 2, 2);
  for (float v : y.data()) CHECK(v == 3.25f);
  // Ties route the gradient to the first row-major window position.
  tape.backward(sum_all(&tape, y));
  auto g = x.grad();
  CHECK(g[0] == 1.0f);
  CHECK(g[1] == 0.0f);
  CHECK(g[4] == 0.0f);
}

TEST_CASE("maxpool2d matches brute-force oracle") {
  Rng rng(3);
  Tensor x = random_tensor(rng, {1, 1, 8, 8});
  Tensor y = maxpool2d(nullptr, x, 2, 2);
  auto oracle = maxpool_oracle(x, 2, 2);
  for (std::size_t i = 0; i < oracle.size(); ++i) CHECK(y.data()[i] == oracle[i]);
  CHECK_THROWS_AS(maxpool2d(nullptr, Tensor::zeros({1, 1, 25, 25}), 2, 2), ConfigError);
}

TEST_CASE("fully_connected examples") {
  Tensor x = Tensor::from({1, 2}, {1, 2});
  Tensor w = Tensor::from({2, 1}, {3, 5});
  Tensor b = Tensor::from({1}, {7});
  Tensor y = fully_connected(nullptr, x, w, b);
  CHECK(y.item() == 20.0f);  // 1*3 + 2*5 + 7

  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor y2 = fully_connected(nullptr, x, eye, Tensor::zeros({2}));
  CHECK(bitwise_equal(y2, x));

  CHECK_THROWS_AS(fully_connected(nullptr, x, Tensor::zeros({3, 1}), b), ConfigError);
}

TEST_CASE("activation values") {
  Tensor x = Tensor::from({1, 3}, {-3.0f, 0.0f, 3.0f});
  Tensor r = activation(nullptr, x, Activation::kRelu);
  CHECK(r.data()[0] == 0.0f);
  CHECK(r.data()[2] == 3.0f);
  Tensor s = activation(nullptr, x, Activation::kSigmoid);
  CHECK(s.data()[1] == 0.5f);
  CHECK(s.data()[0] == doctest::Approx(1.0 / (1.0 + std::exp(3.0))).epsilon(1e-6));
}

TEST_CASE("spatial_softmax examples and invariants") {
  Tensor flat = Tensor::full({1, 1, 4, 4}, 0.7f);
  Tensor u = spatial_softmax(nullptr, flat);
  for (float v : u.data()) CHECK(v == doctest::Approx(1.0 / 16).epsilon(1e-7));

  Tensor two = Tensor::from({1, 1, 1, 2}, {0.0f, std::log(3.0f)});
  Tensor p = spatial_softmax(nullptr, two);
  CHECK(p.data()[0] == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(p.data()[1] == doctest::Approx(0.75).epsilon(1e-6));

  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor s = random_tensor(rng, {2, 1, 5, 7}, -30.0f, 30.0f);
    Tensor a = spatial_softmax(nullptr, s);
    for (int i = 0; i < 2; ++i) {
      double sum = 0.0;
      for (int j = 0; j < 35; ++j) sum += a.data()[static_cast<std::size_t>(i * 35 + j)];
      CHECK(std::abs(sum - 1.0) < 1e-5);
    }
    // Shift invariance.
    std::vector<float> shifted(s.data().begin(), s.data().end());
    for (auto& v : shifted) v += 11.5f;
    Tensor a2 = spatial_softmax(nullptr, Tensor::from({2, 1, 5, 7}, shifted));
    for (std::size_t i = 0; i < a.data().size(); ++i)
      CHECK(a.data()[i] == doctest::Approx(a2.data()[i]).epsilon(1e-6));
  }
}

TEST_CASE("attend identity and zero") {
  Rng rng(5);
  Tensor f = random_tensor(rng, {2, 3, 4, 4});
  Tensor one = Tensor::full({2, 1, 4, 4}, 1.0f);
  CHECK(bitwise_equal(attend(nullptr, f, one), f));
  Tensor zero = Tensor::zeros({2, 1, 4, 4});
  Tensor gated = attend(nullptr, f, zero);
  for (float v : gated.data()) CHECK(v == 0.0f);
  CHECK_THROWS_AS(attend(nullptr, f, Tensor::zeros({2, 1, 3, 4})), ConfigError);
}

TEST_CASE("attend alpha-gradient closed form") {
  Rng rng(6);
  Tensor f = random_tensor(rng, {1, 4, 3, 3});
  Tensor a = random_tensor(rng, {1, 1, 3, 3}, 0.1f, 0.9f);
  Tape tape;
  Tensor out = attend(&tape, f, a);
  tape.backward(sum_all(&tape, out));
  auto ga = a.grad();
  for (int ij = 0; ij < 9; ++ij) {
    double expect = 0.0;
    for (int c = 0; c < 4; ++c) expect += f.data()[static_cast<std::size_t>(c * 9 + ij)];
    CHECK(ga[static_cast<std::size_t>(ij)] == doctest::Approx(expect).epsilon(1e-5));
  }
}

TEST_CASE("spatial_sum examples and oracle") {
  Tensor ones = Tensor::full({1, 2, 3, 3}, 1.0f);
  Tensor s = spatial_sum(nullptr, ones);
  CHECK(s.data()[0] == 9.0f);
  CHECK(s.data()[1] == 9.0f);

  // One-hot attention selects a single column of features.
  Rng rng(7);
  Tensor f = random_tensor(rng, {1, 3, 4, 4});
  std::vector<float> hot(16, 0.0f);
  hot[7] = 1.0f;  // (i*, j*) = (1, 3)
  Tensor alpha = Tensor::from({1, 1, 4, 4}, hot);
  Tensor sel = spatial_sum(nullptr, attend(nullptr, f, alpha));
  for (int c = 0; c < 3; ++c)
    CHECK(sel.data()[static_cast<std::size_t>(c)] == f.data()[static_cast<std::size_t>(c * 16 + 7)]);

  // Brute-force double-loop oracle, identical accumulation order.
  Tensor r = random_tensor(rng, {2, 3, 5, 6});
  Tensor rs = spatial_sum(nullptr, r);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (int j = 0; j < 30; ++j)
        acc += r.data()[static_cast<std::size_t>((n * 3 + c) * 30 + j)];
      CHECK(rs.data()[static_cast<std::size_t>(n * 3 + c)] == static_cast<float>(acc));
    }
}

TEST_CASE("softmax_cross_entropy examples") {
  Tensor uniform = Tensor::full({2, 5}, 1.3f);
  Tensor loss = softmax_cross_entropy(nullptr, uniform, {0, 3});
  CHECK(loss.item() == doctest::Approx(std::log(5.0)).epsilon(1e-6));

  Tensor sat = Tensor::from({1, 2}, {20.0f, -20.0f});
  CHECK(softmax_cross_entropy(nullptr, sat, {0}).item() < 1e-8);

  CHECK_THROWS_AS(softmax_cross_entropy(nullptr, uniform, {0, 5}), DataError);
  CHECK_THROWS_AS(softmax_cross_entropy(nullptr, uniform, {0}), ConfigError);
}

TEST_CASE("nll_of_probability examples") {
  Tensor onehot = Tensor::from({1, 5}, {0, 0, 1, 0, 0});
  CHECK(nll_of_probability(nullptr, onehot, {2}).item() == doctest::Approx(0.0).epsilon(1e-6));

  Tensor uniform = Tensor::full({1, 5}, 0.2f);
  CHECK(nll_of_probability(nullptr, uniform, {4}).item() ==
        doctest::Approx(std::log(5.0)).epsilon(1e-6));

  Tensor bad = Tensor::full({1, 5}, 0.3f);
  CHECK_THROWS_AS(nll_of_probability(nullptr, bad, {0}), NumericError);
  Tensor neg = Tensor::from({1, 2}, {1.5f, -0.5f});
  CHECK_THROWS_AS(nll_of_probability(nullptr, neg, {0}), NumericError);
}

TEST_CASE("backward basics") {
  Rng rng(8);
  Tensor x = random_tensor(rng, {3, 4});
  {
    Tape tape;
    Tensor loss = sum_all(&tape, x);
    tape.backward(loss);
    for (float g : x.grad()) CHECK(g == 1.0f);
  }
  x.zero_grad();
  {
    Tape tape;
    Tensor loss = sum_all(&tape, mul(&tape, x, x));
    tape.backward(loss);
    auto g = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      CHECK(g[i] == doctest::Approx(2.0f * x.data()[i]).epsilon(1e-6));
  }
  Tape tape;
  CHECK_THROWS_AS(tape.backward(x), UsageError);
}

TEST_CASE("numeric_gradient oracle self-checks") {
  Rng rng(9);
  Tensor x = random_tensor(rng, {2, 5});
  auto f_sum = [](const Tensor& t) {
    double acc = 0.0;
    for (float v : t.data()) acc += v;
    return acc;
  };
  Tensor g = numeric_gradient(f_sum, x, 1e-3);
  for (float v : g.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-6));

  Tensor zero = Tensor::zeros({3, 3});
  auto f_sig = [](const Tensor& t) {
    Tensor s = activation(nullptr, t, Activation::kSigmoid);
    double acc = 0.0;
    for (float v : s.data()) acc += v;
    return acc;
  };
  Tensor gs = numeric_gradient(f_sig, zero, 1e-2);
  for (float v : gs.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-5));

  CHECK_THROWS_AS(numeric_gradient(f_sum, x, 0.0), UsageError);
}

TEST_CASE("single-thread determinism") {
  Rng rng(10);
  Tensor x = random_tensor(rng, {2, 3, 8, 8});
  Tensor w = random_tensor(rng, {4, 3, 3, 3});
  Tensor b = random_tensor(rng, {4});
  Tensor y1 = conv2d(nullptr, x, w, b, 1, 1);
  Tensor y2 = conv2d(nullptr, x, w, b, 1, 1);
  CHECK(bitwise_equal(y1, y2));
}

TEST_CASE("gather and permute round trips") {
  Rng rng(11);
  Tensor f = random_tensor(rng, {2, 3, 4, 5});
  Tensor rows = nchw_to_rows(nullptr, f);
  CHECK(rows.dim(0) == 40);
  CHECK(rows.dim(1) == 3);
  Tensor back = rows_to_nchw(nullptr, rows, 2, 4, 5);
  CHECK(bitwise_equal(back, f));
}
