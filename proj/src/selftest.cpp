#include "pan/selftest.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <ostream>
#include <sstream>

#include "pan/gradcheck.hpp"
#include "pan/model.hpp"
#include "pan/rng.hpp"
#include "pan/tensor.hpp"

namespace pan {

namespace {

Tensor rand_t(Rng& rng, Shape shape, float lo = -1.0f, float hi = 1.0f) {
  std::vector<float> data(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : data) v = static_cast<float>(rng.uniform(lo, hi));
  return Tensor::from(std::move(shape), std::move(data));
}

Tensor rand_kink_free(Rng& rng, Shape shape, float margin) {
  std::vector<float> data(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : data) {
    float mag = static_cast<float>(rng.uniform(margin, 1.0));
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return Tensor::from(std::move(shape), std::move(data));
}

Tensor rand_separated(Rng& rng, Shape shape) {
  auto n = static_cast<std::size_t>(shape_numel(shape));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n - 1; i > 0; --i)
    std::swap(order[i], order[rng.bounded(static_cast<std::uint32_t>(i + 1))]);
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i)
    data[i] = -1.0f + 2.0f * static_cast<float>(order[i]) / static_cast<float>(n);
  return Tensor::from(std::move(shape), std::move(data));
}

double fd_err(const std::function<Tensor(Tape*)>& forward, Tensor wrt,
              const Tensor& r, double h = 1e-3) {
  wrt.zero_grad();
  Tape tape;
  Tensor out = forward(&tape);
  Tensor loss = sum_all(&tape, mul(&tape, out, r));
  tape.backward(loss);
  Tensor analytic = Tensor::from(wrt.shape(), {wrt.grad().begin(), wrt.grad().end()});
  auto f = [&](const Tensor&) {
    Tensor o = forward(nullptr);
    Tensor m = mul(nullptr, o, r);
    double acc = 0.0;
    for (float v : m.data()) acc += v;
    return acc;
  };
  return max_scaled_rel_err(analytic, numeric_gradient(f, wrt, h));
}

CheckResult make_result(const std::string& name, double worst, double tol) {
  CheckResult res;
  res.name = name;
  res.pass = worst <= tol;
  std::ostringstream os;
  os << "max rel err " << worst << " (tol " << tol << ")";
  res.detail = os.str();
  return res;
}

double ce_loss_double(const Tensor& logits, const std::vector<int>& labels) {
  int n = logits.dim(0), k = logits.dim(1);
  auto d = logits.data();
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const float* row = d.data() + static_cast<std::size_t>(i) * k;
    double m = row[0];
    for (int j = 1; j < k; ++j) m = std::max(m, static_cast<double>(row[j]));
    double denom = 0.0;
    for (int j = 0; j < k; ++j) denom += std::exp(row[j] - m);
    loss -= row[labels[static_cast<std::size_t>(i)]] - m - std::log(denom);
  }
  return loss / n;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(),
                     a.data().size() * sizeof(float)) == 0;
}

}  // namespace

std::vector<CheckResult> gradient_suite(int trials) {
  std::vector<CheckResult> results;
  Rng rng(20250);

  {
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
      Tensor x = rand_t(rng, {1, 2, 5, 4});
      Tensor w = rand_t(rng, {3, 2, 3, 3});
      Tensor b = rand_t(rng, {3});
      Tensor r = rand_t(rng, {1, 3, 5, 4});
      auto fwd = [&](Tape* tape) { return conv2d(tape, x, w, b, 1, 1); };
      worst = std::max({worst, fd_err(fwd, w, r), fd_err(fwd, x, r), fd_err(fwd, b, r)});
    }
    results.push_back(make_result("grad conv2d", worst, 1e-3));
  }
  {
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
      Tensor x = rand_separated(rng, {1, 2, 6, 6});
      Tensor r = rand_t(rng, {1, 2, 3, 3});
      auto fwd = [&](Tape* tape) { return maxpool2d(tape, x, 2, 2); };
      worst = std::max(worst, fd_err(fwd, x, r));
    }
    results.push_back(make_result("grad maxpool2d", worst, 1e-3));
  }
  {
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
      Tensor x = rand_t(rng, {3, 5});
      Tensor w = rand_t(rng, {5, 4});
      Tensor b = rand_t(rng, {4});
      Tensor r = rand_t(rng, {3, 4});
      auto fwd = [&](Tape* tape) { return fully_connected(tape, x, w, b); };
      worst = std::max({worst, fd_err(fwd, x, r), fd_err(fwd, w, r), fd_err(fwd, b, r)});
    }
    results.push_back(make_result("grad fully_connected", worst, 1e-3));
  }
  {
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
      Tensor xs = rand_t(rng, {2, 7});
      Tensor r = rand_t(rng, {2, 7});
      auto sig = [&](Tape* tape) { return activation(tape, xs, Activation::kSigmoid); };
      worst = std::max(worst, fd_err(sig, xs, r));
      Tensor xr = rand_kink_free(rng, {2, 7}, 0.05f);
      auto rel = [&](Tape* tape) { return activation(tape, xr, Activation::kRelu); };
      worst = std::max(worst, fd_err(rel, xr, r));
    }
    results.push_back(make_result("grad activation", worst, 1e-3));
  }
  {
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
      Tensor s = rand_t(rng, {2, 1, 3, 4});
      Tensor r = rand_t(rng, {2, 1, 3, 4});
      auto fwd = [&](Tape* tape) { return spatial_softmax(tape, s); };
      worst = std::max(worst, fd_err(fwd, s, r));
    }
    results.push_back(make_result("grad spatial_softmax", worst, 1e-3));
  }
  {
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
      Tensor f = rand_t(rng, {2, 3, 4, 4});
      Tensor a = rand_t(rng, {2, 1, 4, 4});
      Tensor r = rand_t(rng, {2, 3, 4, 4});
      auto fwd = [&](Tape* tape) { return attend(tape, f, a); };
      worst = std::max({worst, fd_err(fwd, f, r), fd_err(fwd, a, r)});
    }
    results.push_back(make_result("grad attend", worst, 1e-3));
  }
  {
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
      Tensor f = rand_t(rng, {2, 3, 4, 5});
      Tensor r = rand_t(rng, {2, 3});
      auto fwd = [&](Tape* tape) { return spatial_sum(tape, f); };
      worst = std::max(worst, fd_err(fwd, f, r));
    }
    results.push_back(make_result("grad spatial_sum", worst, 1e-3));
  }
  {
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
      int delta = t % 3;
      Tensor f = rand_t(rng, {1, 3, 4, 4});
      Tensor q = rand_t(rng, {1, 5});
      int side = 2 * delta + 1;
      Tensor r = rand_t(rng, {16, side * side * 3 + 5});
      auto fwd = [&](Tape* tape) {
        return gather_context_with_query(tape, f, q, delta);
      };
      worst = std::max({worst, fd_err(fwd, f, r), fd_err(fwd, q, r)});
    }
    results.push_back(make_result("grad gather_context", worst, 1e-3));
  }
  {
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
      Tensor logits = rand_t(rng, {4, 5});
      std::vector<int> labels{0, 2, 4, 1};
      Tape tape;
      Tensor loss = softmax_cross_entropy(&tape, logits, labels);
      tape.backward(loss);
      Tensor analytic = Tensor::from(logits.shape(),
                                     {logits.grad().begin(), logits.grad().end()});
      auto f = [&](const Tensor&) { return ce_loss_double(logits, labels); };
      worst = std::max(worst, max_scaled_rel_err(analytic, numeric_gradient(f, logits, 1e-3)));
    }
    results.push_back(make_result("grad softmax_cross_entropy", worst, 1e-3));
  }
  {
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
      Tensor prob = softmax_rows(nullptr, rand_t(rng, {3, 5}));
      std::vector<int> labels{1, 3, 0};
      Tape tape;
      Tensor loss = nll_of_probability(&tape, prob, labels);
      tape.backward(loss);
      Tensor analytic = Tensor::from(prob.shape(),
                                     {prob.grad().begin(), prob.grad().end()});
      auto f = [&](const Tensor&) {
        double acc = 0.0;
        auto d = prob.data();
        for (int i = 0; i < 3; ++i)
          acc -= std::log(static_cast<double>(d[static_cast<std::size_t>(i * 5 + labels[static_cast<std::size_t>(i)])]) + 1e-12);
        return acc / 3.0;
      };
      // h respects the row-normalization precondition.
      worst = std::max(worst, max_scaled_rel_err(analytic, numeric_gradient(f, prob, 1e-5)));
    }
    results.push_back(make_result("grad nll_of_probability", worst, 1e-3));
  }
  {
    // End-to-end: PAN-CTX forward + cross-entropy on a 16×16 toy input.
    ModelConfig cfg = ModelConfig::defaults(ModelKind::kPanCtx);
    cfg.canvas = 16;
    ModelParams params = init_model(cfg, 4242);
    Tensor image = rand_t(rng, {1, 3, 16, 16}, 0.0f, 1.0f);
    Tensor queries = queries_tensor({Query(6)});
    std::vector<int> labels{1};

    Tape tape;
    ForwardResult res = pan_forward(&tape, params, image, queries);
    Tensor loss = softmax_cross_entropy(&tape, res.logits, labels);
    tape.backward(loss);

    auto f = [&](const Tensor&) {
      ForwardResult r = pan_forward(nullptr, params, image, queries);
      return ce_loss_double(r.logits, labels);
    };
    double worst = 0.0;
    for (auto& block : params.blocks) {
      Tensor analytic = Tensor::from(
          block.weight.shape(), {block.weight.grad().begin(), block.weight.grad().end()});
      worst = std::max(worst,
                       max_scaled_rel_err(analytic, numeric_gradient(f, block.weight, 5e-4)));
    }
    results.push_back(make_result("grad PAN-CTX end-to-end 16x16", worst, 1e-2));
  }
  return results;
}

std::vector<CheckResult> invariant_suite() {
  std::vector<CheckResult> results;
  Rng rng(20251);

  {
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
      Tensor s = rand_t(rng, {2, 1, 6, 6}, -30.0f, 30.0f);
      Tensor a = spatial_softmax(nullptr, s);
      for (int i = 0; i < 2; ++i) {
        double sum = 0.0;
        for (int j = 0; j < 36; ++j) sum += a.data()[static_cast<std::size_t>(i * 36 + j)];
        worst = std::max(worst, std::abs(sum - 1.0));
      }
    }
    results.push_back(make_result("spatial_softmax mass = 1", worst, 1e-5));
  }
  {
    Tensor f = rand_t(rng, {2, 32, 6, 6});
    Tensor one = Tensor::full({2, 1, 6, 6}, 1.0f);
    CheckResult res;
    res.name = "attend identity bitwise";
    res.pass = bitwise_equal(attend(nullptr, f, one), f);
    res.detail = res.pass ? "exact" : "mismatch";
    results.push_back(res);
  }
  {
    // PAN restricted to one final head equals SAN exactly.
    ModelConfig pan_cfg = ModelConfig::defaults(ModelKind::kPan);
    pan_cfg.attention_layers = {4};
    pan_cfg.delta = 0;
    ModelConfig san_cfg = ModelConfig::defaults(ModelKind::kSan);
    ModelParams pan = init_model(pan_cfg, 99);
    ModelParams san = init_model(san_cfg, 99);
    Tensor image = rand_t(rng, {2, 3, 96, 96}, 0.0f, 1.0f);
    Tensor queries = queries_tensor({Query(3), Query(8)});
    ForwardResult a = pan_forward(nullptr, pan, image, queries);
    ForwardResult b = san_forward(nullptr, san, image, queries);
    CheckResult res;
    res.name = "PAN{4},delta=0 == SAN forward";
    res.pass = bitwise_equal(a.logits, b.logits) &&
               bitwise_equal(a.probabilities, b.probabilities) &&
               bitwise_equal(a.attention_maps.back(), b.attention_maps.back());
    res.detail = res.pass ? "bitwise" : "mismatch";
    results.push_back(res);
  }
  {
    ModelParams han = init_model(ModelConfig::defaults(ModelKind::kHan), 7);
    Tensor image = rand_t(rng, {3, 3, 96, 96}, 0.0f, 1.0f);
    Tensor queries = queries_tensor({Query(0), Query(5), Query(9)});
    ForwardResult res = han_forward(nullptr, han, image, queries);
    double worst = 0.0;
    for (int i = 0; i < 3; ++i) {
      double sum = 0.0;
      for (int j = 0; j < 5; ++j)
        sum += res.probabilities.data()[static_cast<std::size_t>(i * 5 + j)];
      worst = std::max(worst, std::abs(sum - 1.0));
    }
    results.push_back(make_result("HAN probability rows sum to 1", worst, 1e-5));
  }
  {
    // Determinism: identical forwards are bitwise identical.
    ModelParams params = init_model(ModelConfig::defaults(ModelKind::kPanCtx), 11);
    Tensor image = rand_t(rng, {2, 3, 96, 96}, 0.0f, 1.0f);
    Tensor queries = queries_tensor({Query(1), Query(2)});
    ForwardResult a = pan_forward(nullptr, params, image, queries);
    ForwardResult b = pan_forward(nullptr, params, image, queries);
    CheckResult res;
    res.name = "forward determinism bitwise";
    res.pass = bitwise_equal(a.logits, b.logits);
    res.detail = res.pass ? "bitwise" : "mismatch";
    results.push_back(res);
  }
  {
    // Batch forward equals concatenated per-sample forwards within 1e-5.
    ModelParams params = init_model(ModelConfig::defaults(ModelKind::kPan), 13);
    Tensor image = rand_t(rng, {3, 3, 96, 96}, 0.0f, 1.0f);
    std::vector<Query> qs{Query(2), Query(4), Query(7)};
    ForwardResult whole = pan_forward(nullptr, params, image, queries_tensor(qs));
    double worst = 0.0;
    for (int i = 0; i < 3; ++i) {
      std::vector<float> one(image.data().begin() + std::ptrdiff_t(i) * 3 * 96 * 96,
                             image.data().begin() + std::ptrdiff_t(i + 1) * 3 * 96 * 96);
      Tensor sub = Tensor::from({1, 3, 96, 96}, std::move(one));
      ForwardResult res = pan_forward(nullptr, params, sub, queries_tensor({qs[static_cast<std::size_t>(i)]}));
      for (int j = 0; j < 5; ++j)
        worst = std::max(worst,
                         std::abs(static_cast<double>(res.probabilities.data()[static_cast<std::size_t>(j)]) -
                                  whole.probabilities.data()[static_cast<std::size_t>(i * 5 + j)]));
    }
    results.push_back(make_result("batch == per-sample forwards", worst, 1e-5));
  }
  return results;
}

int run_selftest(std::ostream& out) {
  bool all = true;
  auto report = [&](const std::vector<CheckResult>& results) {
    for (const auto& r : results) {
      out << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << '\n';
      all = all && r.pass;
    }
  };
  report(gradient_suite(100));
  report(invariant_suite());
  out << (all ? "selftest: all checks passed\n" : "selftest: FAILURES\n");
  return all ? 0 : 1;
}

}  // namespace pan
