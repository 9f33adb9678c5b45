#include "pan/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>

#include "pan/errors.hpp"
#include "pan/rng.hpp"

namespace pan {

void TrainConfig::validate() const {
  model.validate();
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  // Zero is allowed so a zero-step run can serve as an identity check.
  if (learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (eps <= 0.0) throw ConfigError("Adam epsilon must be > 0");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (patience < 0) throw ConfigError("patience must be >= 0");
  if (clip_norm < 0.0) throw ConfigError("clip_norm must be >= 0");
}

void adam_step(std::vector<Tensor>& params, AdamState& state,
               const TrainConfig& hyper) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(static_cast<std::size_t>(params[i].numel()), 0.0f);
      state.v[i].assign(static_cast<std::size_t>(params[i].numel()), 0.0f);
    }
  }
  if (state.m.size() != params.size())
    throw ConfigError("Adam state does not match parameter count");
  state.t += 1;
  const double corr1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.t));
  const double corr2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].raw_data();
    auto g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double grad = g[j];
      const double mj = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * grad;
      const double vj = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * grad * grad;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      p[j] -= static_cast<float>(hyper.learning_rate * (mj / corr1) /
                                 (std::sqrt(vj / corr2) + hyper.eps));
    }
  }
}

// --- checkpoint format ---

namespace {

constexpr char kCkptMagic[8] = {'P', 'A', 'N', 'C', 'K', 'P', 'T', '1'};

struct Writer {
  std::ofstream out;
  explicit Writer(const std::string& path) : out(path, std::ios::binary) {
    if (!out) throw DataError("cannot open for writing: " + path);
  }
  void u32(std::uint32_t v) {
    std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                         static_cast<std::uint8_t>(v >> 16),
                         static_cast<std::uint8_t>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  void u64(std::uint64_t v) {
    u32(static_cast<std::uint32_t>(v));
    u32(static_cast<std::uint32_t>(v >> 32));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void floats(const std::vector<float>& v) {
    u64(v.size());
    for (float x : v) f32(x);
  }
  void str(const std::string& s) {
    u64(s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
};

struct Reader {
  std::vector<std::uint8_t> buf;
  std::size_t off = 0;
  std::string path;
  Reader(std::vector<std::uint8_t> b, std::string p) : buf(std::move(b)), path(std::move(p)) {}
  void need(std::size_t n) {
    if (off + n > buf.size())
      throw DataError(path + ": truncated at offset " + std::to_string(off));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = std::uint32_t(buf[off]) | (std::uint32_t(buf[off + 1]) << 8) |
                      (std::uint32_t(buf[off + 2]) << 16) |
                      (std::uint32_t(buf[off + 3]) << 24);
    off += 4;
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t lo = u32();
    return lo | (std::uint64_t(u32()) << 32);
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::vector<float> floats() {
    std::uint64_t n = u64();
    need(n * 4);
    std::vector<float> v(n);
    for (auto& x : v) x = f32();
    return v;
  }
  std::string str() {
    std::uint64_t n = u64();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + off), n);
    off += n;
    return s;
  }
};

std::vector<std::uint8_t> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot open: " + path);
  auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> buf(size);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
  if (in.gcount() != static_cast<std::streamsize>(size))
    throw DataError("short read: " + path);
  return buf;
}

void write_config(Writer& w, const ModelConfig& cfg) {
  w.u32(static_cast<std::uint32_t>(cfg.kind));
  w.u32(static_cast<std::uint32_t>(cfg.num_blocks));
  w.u32(static_cast<std::uint32_t>(cfg.channels));
  w.u32(static_cast<std::uint32_t>(cfg.attention_layers.size()));
  for (int l : cfg.attention_layers) w.u32(static_cast<std::uint32_t>(l));
  w.u32(static_cast<std::uint32_t>(cfg.delta));
  w.u32(static_cast<std::uint32_t>(cfg.num_colors));
  w.u32(static_cast<std::uint32_t>(cfg.query_len));
  w.u32(static_cast<std::uint32_t>(cfg.hidden_dim));
  w.u32(static_cast<std::uint32_t>(cfg.canvas));
  w.u32(static_cast<std::uint32_t>(cfg.in_channels));
}

ModelConfig read_config(Reader& r) {
  ModelConfig cfg;
  std::uint32_t kind = r.u32();
  if (kind > 3) throw DataError(r.path + ": bad model kind in checkpoint");
  cfg.kind = static_cast<ModelKind>(kind);
  cfg.num_blocks = static_cast<int>(r.u32());
  cfg.channels = static_cast<int>(r.u32());
  std::uint32_t n_att = r.u32();
  if (n_att > 64) throw DataError(r.path + ": implausible attention layer count");
  cfg.attention_layers.clear();
  for (std::uint32_t i = 0; i < n_att; ++i)
    cfg.attention_layers.push_back(static_cast<int>(r.u32()));
  cfg.delta = static_cast<int>(r.u32());
  cfg.num_colors = static_cast<int>(r.u32());
  cfg.query_len = static_cast<int>(r.u32());
  cfg.hidden_dim = static_cast<int>(r.u32());
  cfg.canvas = static_cast<int>(r.u32());
  cfg.in_channels = static_cast<int>(r.u32());
  return cfg;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  Writer w(path);
  w.out.write(kCkptMagic, 8);
  w.u32(1);  // version
  write_config(w, ckpt.config);
  w.u32(static_cast<std::uint32_t>(ckpt.epoch));
  w.u64(static_cast<std::uint64_t>(ckpt.adam.t));
  w.f32(ckpt.best_val_acc);
  w.u32(static_cast<std::uint32_t>(ckpt.best_epoch + 1));  // -1 -> 0
  w.str(ckpt.rng_state);
  w.u64(ckpt.params.size());
  for (const auto& p : ckpt.params) w.floats(p);
  w.u64(ckpt.adam.m.size());
  for (const auto& p : ckpt.adam.m) w.floats(p);
  for (const auto& p : ckpt.adam.v) w.floats(p);
  w.u64(ckpt.best_params.size());
  for (const auto& p : ckpt.best_params) w.floats(p);
  if (!w.out) throw DataError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r(slurp(path), path);
  r.need(8);
  if (std::memcmp(r.buf.data(), kCkptMagic, 8) != 0)
    throw DataError(path + ": bad checkpoint magic at offset 0");
  r.off = 8;
  if (r.u32() != 1) throw DataError(path + ": unsupported checkpoint version");
  Checkpoint ckpt;
  ckpt.config = read_config(r);
  ckpt.config.validate();
  ckpt.epoch = static_cast<int>(r.u32());
  ckpt.adam.t = static_cast<std::int64_t>(r.u64());
  ckpt.best_val_acc = r.f32();
  ckpt.best_epoch = static_cast<int>(r.u32()) - 1;
  ckpt.rng_state = r.str();
  std::uint64_t np = r.u64();
  for (std::uint64_t i = 0; i < np; ++i) ckpt.params.push_back(r.floats());
  std::uint64_t nm = r.u64();
  for (std::uint64_t i = 0; i < nm; ++i) ckpt.adam.m.push_back(r.floats());
  for (std::uint64_t i = 0; i < nm; ++i) ckpt.adam.v.push_back(r.floats());
  std::uint64_t nb = r.u64();
  for (std::uint64_t i = 0; i < nb; ++i) ckpt.best_params.push_back(r.floats());
  if (r.off != r.buf.size())
    throw DataError(path + ": trailing bytes at offset " + std::to_string(r.off));
  return ckpt;
}

namespace {

std::vector<std::vector<float>> snapshot(const std::vector<Tensor>& params) {
  std::vector<std::vector<float>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.data().begin(), p.data().end());
  return out;
}

void restore(std::vector<Tensor>& params, const std::vector<std::vector<float>>& vals,
             const std::string& what) {
  if (params.size() != vals.size())
    throw DataError(what + ": parameter tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].raw_data();
    if (dst.size() != vals[i].size())
      throw DataError(what + ": parameter " + std::to_string(i) + " size mismatch");
    std::copy(vals[i].begin(), vals[i].end(), dst.begin());
  }
}

}  // namespace

ModelParams params_from_checkpoint(const Checkpoint& ckpt, bool use_best) {
  ModelParams params = init_model(ckpt.config, 0);
  auto tensors = params.parameters();
  const auto& source =
      (use_best && !ckpt.best_params.empty()) ? ckpt.best_params : ckpt.params;
  restore(tensors, source, "checkpoint");
  return params;
}

Batch make_batch(const std::vector<Sample>& samples, const std::vector<int>& indices,
                 std::size_t begin, std::size_t end) {
  const int n = static_cast<int>(end - begin);
  std::vector<float> images(static_cast<std::size_t>(n) * 3 * kCanvasPixels);
  std::vector<float> queries(static_cast<std::size_t>(n) * Query::kLength, 0.0f);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int b = 0; b < n; ++b) {
    const Sample& s = samples[static_cast<std::size_t>(indices[begin + static_cast<std::size_t>(b)])];
    // HWC bytes -> CHW floats in [0, 1].
    for (int c = 0; c < 3; ++c) {
      float* dst = images.data() + (std::size_t(b) * 3 + static_cast<std::size_t>(c)) * kCanvasPixels;
      for (int p = 0; p < kCanvasPixels; ++p)
        dst[p] = s.image[std::size_t(p) * 3 + static_cast<std::size_t>(c)] * (1.0f / 255.0f);
    }
    queries[std::size_t(b) * Query::kLength + s.query] = 1.0f;
    labels[static_cast<std::size_t>(b)] = s.color_label;
  }
  Batch batch;
  batch.images = Tensor::from({n, 3, kCanvas, kCanvas}, std::move(images));
  batch.queries = Tensor::from({n, Query::kLength}, std::move(queries));
  batch.labels = std::move(labels);
  return batch;
}

double dataset_accuracy(const ModelParams& params,
                        const std::vector<Sample>& samples, int batch_size) {
  if (samples.empty()) throw UsageError("accuracy over an empty sample list");
  std::vector<int> indices(samples.size());
  std::iota(indices.begin(), indices.end(), 0);
  std::int64_t correct = 0;
  for (std::size_t begin = 0; begin < samples.size();
       begin += static_cast<std::size_t>(batch_size)) {
    std::size_t end = std::min(samples.size(), begin + static_cast<std::size_t>(batch_size));
    Batch batch = make_batch(samples, indices, begin, end);
    ForwardResult res = model_forward(nullptr, params, batch.images, batch.queries);
    auto probs = res.probabilities.data();
    int k = res.probabilities.dim(1);
    for (std::size_t b = 0; b < end - begin; ++b) {
      int arg = 0;
      for (int j = 1; j < k; ++j)
        if (probs[b * static_cast<std::size_t>(k) + static_cast<std::size_t>(j)] >
            probs[b * static_cast<std::size_t>(k) + static_cast<std::size_t>(arg)])
          arg = j;  // strict >: ties resolve to the lower index
      if (arg == batch.labels[b]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

TrainResult train(const TrainConfig& config, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const Checkpoint* resume,
                  std::ostream* log) {
  config.validate();
  if (train_set.empty() || val_set.empty())
    throw UsageError("train requires non-empty train and validation sets");

  ModelParams params = init_model(config.model, config.seed);
  auto tensors = params.parameters();
  AdamState adam;
  Rng shuffle_rng(config.seed);
  int start_epoch = 0;
  float best_val_acc = -1.0f;
  int best_epoch = -1;
  std::vector<std::vector<float>> best_params;

  if (resume) {
    if (!(resume->config == config.model))
      throw ConfigError("checkpoint model config does not match the training config");
    restore(tensors, resume->params, "resume");
    adam = resume->adam;
    shuffle_rng.load_state(resume->rng_state);
    start_epoch = resume->epoch;
    best_val_acc = resume->best_val_acc;
    best_epoch = resume->best_epoch;
    best_params = resume->best_params;
  }

  const bool han = config.model.kind == ModelKind::kHan;
  std::vector<int> indices(train_set.size());
  std::iota(indices.begin(), indices.end(), 0);

  TrainResult result;
  int stale_evals = 0;
  for (int epoch = start_epoch + 1; epoch <= config.epochs; ++epoch) {
    if (config.shuffle) {
      // Each epoch permutes the identity ordering so the result depends only
      // on the RNG state, which keeps resumed runs bitwise identical.
      std::iota(indices.begin(), indices.end(), 0);
      for (std::size_t i = indices.size() - 1; i > 0; --i) {
        auto j = shuffle_rng.bounded(static_cast<std::uint32_t>(i + 1));
        std::swap(indices[i], indices[j]);
      }
    }

    double loss_sum = 0.0;
    int batch_index = 0;
    for (std::size_t begin = 0; begin < indices.size();
         begin += static_cast<std::size_t>(config.batch_size), ++batch_index) {
      std::size_t end =
          std::min(indices.size(), begin + static_cast<std::size_t>(config.batch_size));
      Batch batch = make_batch(train_set, indices, begin, end);

      Tape tape;
      params.zero_grads();
      ForwardResult res = model_forward(&tape, params, batch.images, batch.queries);
      Tensor loss = han ? nll_of_probability(&tape, res.probabilities, batch.labels)
                        : softmax_cross_entropy(&tape, res.logits, batch.labels);
      const float loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        tape.backward(loss);
        double max_grad = 0.0;
        for (const auto& t : tensors)
          for (float g : t.grad_view()) max_grad = std::max(max_grad, std::abs(double(g)));
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_index) +
                           ", max |grad| = " + std::to_string(max_grad));
      }
      tape.backward(loss);

      if (config.clip_norm > 0.0) {
        double norm_sq = 0.0;
        for (const auto& t : tensors)
          for (float g : t.grad_view()) norm_sq += double(g) * g;
        double norm = std::sqrt(norm_sq);
        if (norm > config.clip_norm) {
          auto scale = static_cast<float>(config.clip_norm / norm);
          for (auto& t : tensors)
            for (auto& g : t.grad()) g *= scale;
        }
      }
      adam_step(tensors, adam, config);
      loss_sum += static_cast<double>(loss_value) * static_cast<double>(end - begin);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(train_set.size());
    stats.val_acc = -1.0;

    if (epoch % config.eval_every == 0 || epoch == config.epochs) {
      stats.val_acc = dataset_accuracy(params, val_set, config.batch_size);
      if (static_cast<float>(stats.val_acc) > best_val_acc) {
        best_val_acc = static_cast<float>(stats.val_acc);
        best_epoch = epoch;
        best_params = snapshot(tensors);
        stale_evals = 0;
      } else {
        ++stale_evals;
      }
    }
    result.history.push_back(stats);
    if (log) {
      (*log) << "epoch " << epoch << " loss " << stats.train_loss;
      if (stats.val_acc >= 0.0) (*log) << " val_acc " << stats.val_acc;
      (*log) << '\n';
    }

    if (config.stop_at_train_acc >= 0.0 &&
        dataset_accuracy(params, train_set, config.batch_size) >=
            config.stop_at_train_acc)
      break;
    if (config.patience > 0 && stale_evals >= config.patience) break;
  }

  result.checkpoint.config = config.model;
  result.checkpoint.params = snapshot(tensors);
  result.checkpoint.best_params =
      best_params.empty() ? result.checkpoint.params : best_params;
  result.checkpoint.adam = adam;
  result.checkpoint.epoch =
      result.history.empty() ? start_epoch : result.history.back().epoch;
  result.checkpoint.best_val_acc = best_val_acc;
  result.checkpoint.best_epoch = best_epoch;
  result.checkpoint.rng_state = shuffle_rng.save_state();
  return result;
}

void write_history_csv(const std::string& path,
                       const std::vector<EpochStats>& history) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << "epoch,train_loss,val_acc\n";
  char line[128];
  for (const auto& s : history) {
    if (s.val_acc >= 0.0)
      std::snprintf(line, sizeof(line), "%d,%.9g,%.9g\n", s.epoch, s.train_loss,
                    s.val_acc);
    else
      std::snprintf(line, sizeof(line), "%d,%.9g,\n", s.epoch, s.train_loss);
    out << line;
  }
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace pan
