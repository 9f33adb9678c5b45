// Adam, checkpoint format, and the training loop contracts.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "pan/config.hpp"
#include "pan/errors.hpp"
#include "pan/glyphs.hpp"
#include "pan/rng.hpp"
#include "pan/train.hpp"

using namespace pan;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("pan_train_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& name) const { return (path / name).string(); }
};

std::vector<std::uint8_t> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  REQUIRE(in.good());
  auto n = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> buf(n);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
  return buf;
}

// Small deterministic archive for loop tests.
std::vector<Sample> tiny_dataset(int count, std::uint64_t seed) {
  auto glyphs = make_stub_glyphs(seed, 8);
  MnistData data;
  for (const auto& g : glyphs) {
    data.images.push_back(g.pixels);
    data.labels.push_back(g.label);
  }
  GlyphPool pool = GlyphPool::build(data);
  GenConfig cfg = GenConfig::mini(Variant::kMref, seed);
  std::vector<Sample> out;
  for (int i = 0; i < count; ++i) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
    out.push_back(render_sample(rng, pool, cfg, {}));
  }
  return out;
}

TrainConfig small_config(ModelKind kind, int epochs) {
  TrainConfig cfg;
  cfg.model = ModelConfig::defaults(kind);
  cfg.model.channels = 8;
  cfg.model.hidden_dim = 8;
  cfg.epochs = epochs;
  cfg.batch_size = 8;
  cfg.seed = 123;
  return cfg;
}

}  // namespace

TEST_CASE("adam zero gradient leaves parameters unchanged") {
  std::vector<Tensor> params{Tensor::from({2, 2}, {1, -2, 3, -4})};
  params[0].grad();  // allocate zeros
  AdamState state;
  TrainConfig hyper;
  hyper.model = ModelConfig::defaults(ModelKind::kSan);
  adam_step(params, state, hyper);
  CHECK(params[0].data()[0] == 1.0f);
  CHECK(params[0].data()[3] == -4.0f);
}

TEST_CASE("adam first step and constant-gradient fixed point") {
  TrainConfig hyper;
  hyper.model = ModelConfig::defaults(ModelKind::kSan);
  hyper.learning_rate = 1e-3;

  SUBCASE("one step from zero moments: lr * g / (|g| + eps)") {
    std::vector<Tensor> params{Tensor::from({3}, {0.0f, 0.0f, 0.0f})};
    auto g = params[0].grad();
    g[0] = 0.7f;
    g[1] = -0.02f;
    g[2] = 4.0f;
    AdamState state;
    adam_step(params, state, hyper);
    for (int i = 0; i < 3; ++i) {
      double grad = (i == 0) ? 0.7 : (i == 1 ? -0.02 : 4.0);
      double expect = -1e-3 * grad / (std::abs(grad) + 1e-8);
      CHECK(params[0].data()[static_cast<std::size_t>(i)] ==
            doctest::Approx(expect).epsilon(1e-6));
    }
  }
  SUBCASE("constant gradient: |update| approaches lr * sign(g)") {
    std::vector<Tensor> params{Tensor::from({1}, {5.0f})};
    AdamState state;
    float prev = 5.0f;
    float update = 0.0f;
    for (int t = 0; t < 500; ++t) {
      params[0].zero_grad();
      params[0].grad()[0] = -0.3f;  // constant gradient, ascending parameter
      adam_step(params, state, hyper);
      update = params[0].data()[0] - prev;
      prev = params[0].data()[0];
    }
    CHECK(std::abs(update) == doctest::Approx(1e-3).epsilon(0.01));
    CHECK(update > 0.0f);
  }
}

TEST_CASE("checkpoint round trip is bitwise") {
  TempDir tmp;
  Checkpoint ckpt;
  ckpt.config = ModelConfig::defaults(ModelKind::kPanCtx);
  ckpt.params = {{1.5f, -2.5f}, {0.25f}};
  ckpt.best_params = ckpt.params;
  ckpt.adam.m = {{0.1f, 0.2f}, {0.3f}};
  ckpt.adam.v = {{0.4f, 0.5f}, {0.6f}};
  ckpt.adam.t = 77;
  ckpt.epoch = 9;
  ckpt.best_val_acc = 0.75f;
  ckpt.best_epoch = 6;
  ckpt.rng_state = Rng(5).save_state();

  save_checkpoint(tmp.str("a.pan"), ckpt);
  Checkpoint back = load_checkpoint(tmp.str("a.pan"));
  save_checkpoint(tmp.str("b.pan"), back);
  CHECK(slurp(tmp.str("a.pan")) == slurp(tmp.str("b.pan")));
  CHECK(back.config == ckpt.config);
  CHECK(back.adam.t == 77);
  CHECK(back.best_epoch == 6);
  CHECK(back.rng_state == ckpt.rng_state);

  SUBCASE("corrupted magic rejected") {
    auto bytes = slurp(tmp.str("a.pan"));
    bytes[0] ^= 0xFF;
    std::ofstream out(tmp.str("bad.pan"), std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.close();
    CHECK_THROWS_AS(load_checkpoint(tmp.str("bad.pan")), DataError);
  }
}

TEST_CASE("training smoke: determinism, zero learning rate, histories") {
  auto train_set = tiny_dataset(24, 31);
  auto val_set = tiny_dataset(8, 32);

  SUBCASE("same seed twice gives identical loss curves and parameters") {
    TrainConfig cfg = small_config(ModelKind::kSan, 2);
    TrainResult a = train(cfg, train_set, val_set);
    TrainResult b = train(cfg, train_set, val_set);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
      CHECK(a.history[i].train_loss == b.history[i].train_loss);
      CHECK(a.history[i].val_acc == b.history[i].val_acc);
    }
    CHECK(a.checkpoint.params == b.checkpoint.params);
  }
  SUBCASE("zero learning rate leaves parameters bitwise unchanged") {
    TrainConfig cfg = small_config(ModelKind::kSan, 1);
    cfg.learning_rate = 0.0;
    ModelParams init = init_model(cfg.model, cfg.seed);
    auto before = init.parameters();
    TrainResult result = train(cfg, train_set, val_set);
    auto after = result.checkpoint.params;
    REQUIRE(after.size() == before.size());
    for (std::size_t i = 0; i < after.size(); ++i) {
      auto src = before[i].data();
      REQUIRE(after[i].size() == src.size());
      for (std::size_t j = 0; j < src.size(); ++j) CHECK(after[i][j] == src[j]);
    }
  }
  SUBCASE("every model kind runs one epoch") {
    for (ModelKind kind : {ModelKind::kPan, ModelKind::kPanCtx, ModelKind::kSan,
                           ModelKind::kHan}) {
      TrainConfig cfg = small_config(kind, 1);
      TrainResult result = train(cfg, train_set, val_set);
      CHECK(result.history.size() == 1);
      CHECK(std::isfinite(result.history[0].train_loss));
      CHECK(result.history[0].val_acc >= 0.0);
    }
  }
}

TEST_CASE("resume reproduces an uninterrupted run bitwise") {
  TempDir tmp;
  auto train_set = tiny_dataset(24, 41);
  auto val_set = tiny_dataset(8, 42);
  TrainConfig cfg3 = small_config(ModelKind::kPan, 3);

  TrainResult full = train(cfg3, train_set, val_set);
  save_checkpoint(tmp.str("full.pan"), full.checkpoint);

  TrainConfig cfg2 = cfg3;
  cfg2.epochs = 2;
  TrainResult part = train(cfg2, train_set, val_set);
  save_checkpoint(tmp.str("part.pan"), part.checkpoint);
  Checkpoint mid = load_checkpoint(tmp.str("part.pan"));
  TrainResult resumed = train(cfg3, train_set, val_set, &mid);
  save_checkpoint(tmp.str("resumed.pan"), resumed.checkpoint);

  CHECK(slurp(tmp.str("full.pan")) == slurp(tmp.str("resumed.pan")));
}

TEST_CASE("resume config mismatch is rejected") {
  auto train_set = tiny_dataset(16, 51);
  auto val_set = tiny_dataset(8, 52);
  TrainConfig san_cfg = small_config(ModelKind::kSan, 1);
  TrainResult san = train(san_cfg, train_set, val_set);

  TrainConfig pan_cfg = small_config(ModelKind::kPan, 1);
  CHECK_THROWS_AS(train(pan_cfg, train_set, val_set, &san.checkpoint), ConfigError);
}

TEST_CASE("history csv is stable") {
  TempDir tmp;
  std::vector<EpochStats> history{{1, 0.5, 0.25}, {2, 0.25, -1.0}};
  write_history_csv(tmp.str("h.csv"), history);
  std::ifstream in(tmp.str("h.csv"));
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,train_loss,val_acc");
  std::getline(in, line);
  CHECK(line == "1,0.5,0.25");
  std::getline(in, line);
  CHECK(line == "2,0.25,");  // unevaluated epochs leave the field empty
}

TEST_CASE("train config file parsing with unknown-key rejection") {
  TempDir tmp;
  {
    std::ofstream out(tmp.str("t.cfg"));
    out << "# training config\n";
    out << "model = pan_ctx\n";
    out << "epochs = 5\n";
    out << "learning_rate = 0.002\n";
  }
  TrainConfig cfg = train_config_from_file(tmp.str("t.cfg"));
  CHECK(cfg.model.kind == ModelKind::kPanCtx);
  CHECK(cfg.epochs == 5);
  CHECK(cfg.learning_rate == 0.002);
  CHECK(cfg.batch_size == 32);  // default

  {
    std::ofstream out(tmp.str("bad.cfg"));
    out << "model = pan\n";
    out << "epochz = 5\n";  // typo
  }
  CHECK_THROWS_AS(train_config_from_file(tmp.str("bad.cfg")), DataError);
}
