// pan_lab: dataset generation, training, evaluation, visualization and
// self-test for the progressive attention models.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "pan/config.hpp"
#include "pan/dataset.hpp"
#include "pan/errors.hpp"
#include "pan/metrics.hpp"
#include "pan/selftest.hpp"
#include "pan/tensor.hpp"
#include "pan/train.hpp"
#include "pan/viz.hpp"

namespace {

constexpr const char* kToolVersion = "1.0.0";

using Clock = std::chrono::steady_clock;

struct ManifestWriter {
  nlohmann::ordered_json j;
  Clock::time_point start = Clock::now();

  ManifestWriter(const std::string& subcommand, std::uint64_t seed) {
    j["tool"] = "pan_lab";
    j["version"] = kToolVersion;
    j["subcommand"] = subcommand;
    j["seed"] = seed;
    j["config"] = nlohmann::ordered_json::object();
    j["inputs"] = nlohmann::ordered_json::array();
    j["outputs"] = nlohmann::ordered_json::array();
  }
  void config(const std::string& key, const nlohmann::ordered_json& value) {
    j["config"][key] = value;
  }
  void input(const std::string& path) { j["inputs"].push_back(path); }
  void output(const std::string& path) { j["outputs"].push_back(path); }
  // The manifest carries wall-clock duration, so it is diagnostic metadata
  // rather than a reproducible primary output.
  void write(const std::string& dir) {
    j["duration_seconds"] =
        std::chrono::duration<double>(Clock::now() - start).count();
    std::ofstream out(dir + "/manifest.json", std::ios::binary);
    if (!out) throw pan::DataError("cannot write manifest in " + dir);
    out << j.dump(2) << '\n';
  }
};

int resolve_threads(int flag_threads, bool deterministic) {
  if (deterministic) return 1;
  if (flag_threads > 0) return flag_threads;
  if (const char* env = std::getenv("PAN_LAB_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

int cmd_gen(const std::string& config_path, const std::string& mnist_dir,
            const std::string& out_dir, std::uint64_t seed_override,
            bool has_seed_override) {
  pan::GenConfig cfg = pan::gen_config_from_file(config_path);
  if (has_seed_override) cfg.seed = seed_override;
  std::filesystem::create_directories(out_dir);
  ManifestWriter manifest("gen", cfg.seed);
  manifest.input(config_path);
  manifest.input(mnist_dir);
  manifest.config("variant", pan::variant_name(cfg.variant));
  manifest.config("train_count", cfg.train_count);
  manifest.config("val_count", cfg.val_count);
  manifest.config("test_count", cfg.test_count);
  manifest.config("digits_min", cfg.digits_min);
  manifest.config("digits_max", cfg.digits_max);
  manifest.config("scale_min", cfg.scale_min);
  manifest.config("scale_max", cfg.scale_max);
  manifest.config("color_sigma", cfg.color_sigma);

  pan::MnistData train_data = pan::load_mnist_idx(
      mnist_dir + "/train-images-idx3-ubyte", mnist_dir + "/train-labels-idx1-ubyte");
  pan::GlyphPool train_pool = pan::GlyphPool::build(train_data);
  pan::MnistData test_data = pan::load_mnist_idx(
      mnist_dir + "/t10k-images-idx3-ubyte", mnist_dir + "/t10k-labels-idx1-ubyte");
  pan::GlyphPool test_pool = pan::GlyphPool::build(test_data);

  std::vector<pan::Image> bgs;
  if (cfg.variant == pan::Variant::kMbg) bgs = pan::load_background_dir(cfg.bg_dir);

  struct SplitPlan {
    const char* name;
    int count;
    const pan::GlyphPool* pool;
  };
  const SplitPlan plans[] = {{"train", cfg.train_count, &train_pool},
                             {"val", cfg.val_count, &test_pool},
                             {"test", cfg.test_count, &test_pool}};
  for (const auto& plan : plans) {
    std::string path = out_dir + "/" + plan.name + ".mref";
    pan::GenStats stats =
        pan::generate_split(cfg, plan.name, plan.count, *plan.pool, bgs, path);
    auto samples = pan::read_archive(path);
    pan::validate_samples(samples, cfg.variant, cfg.color_sigma);
    std::cout << "wrote " << path << " (" << plan.count << " samples, "
              << stats.resampled << " resampled)\n";
    manifest.output(path);
  }
  manifest.write(out_dir);
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& resume_path) {
  pan::TrainConfig cfg = pan::train_config_from_file(config_path);
  std::filesystem::create_directories(out_dir);
  ManifestWriter manifest("train", cfg.seed);
  manifest.input(config_path);
  manifest.input(data_dir + "/train.mref");
  manifest.input(data_dir + "/val.mref");
  manifest.config("model", pan::model_kind_name(cfg.model.kind));
  manifest.config("epochs", cfg.epochs);
  manifest.config("batch_size", cfg.batch_size);
  manifest.config("learning_rate", cfg.learning_rate);

  auto train_set = pan::read_archive(data_dir + "/train.mref");
  auto val_set = pan::read_archive(data_dir + "/val.mref");

  pan::Checkpoint resume;
  const pan::Checkpoint* resume_ptr = nullptr;
  if (!resume_path.empty()) {
    resume = pan::load_checkpoint(resume_path);
    resume_ptr = &resume;
    manifest.input(resume_path);
  }

  pan::TrainResult result = pan::train(cfg, train_set, val_set, resume_ptr, &std::cout);
  std::string ckpt_path = out_dir + "/model.pan";
  std::string history_path = out_dir + "/history.csv";
  pan::save_checkpoint(ckpt_path, result.checkpoint);
  pan::write_history_csv(history_path, result.history);
  std::cout << "best val acc " << result.checkpoint.best_val_acc << " at epoch "
            << result.checkpoint.best_epoch << '\n';
  manifest.output(ckpt_path);
  manifest.output(history_path);
  manifest.write(out_dir);
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& archive_path,
             const std::string& out_dir, bool use_last) {
  pan::Checkpoint ckpt = pan::load_checkpoint(ckpt_path);
  pan::ModelParams params = pan::params_from_checkpoint(ckpt, !use_last);
  auto samples = pan::read_archive(archive_path);
  std::filesystem::create_directories(out_dir);
  ManifestWriter manifest("eval", 0);
  manifest.input(ckpt_path);
  manifest.input(archive_path);
  manifest.config("model", pan::model_kind_name(ckpt.config.kind));
  manifest.config("use_best", !use_last);

  pan::MetricsReport report =
      pan::evaluate(params, samples, 64, pan::model_kind_name(ckpt.config.kind),
                    std::filesystem::path(archive_path).filename().string());
  pan::write_metrics_files(out_dir, report);
  std::cout << "accuracy " << report.accuracy << ", tpr " << report.tpr_mean
            << " (uniform " << report.uniform_tpr << ")\n";
  manifest.output(out_dir + "/metrics.json");
  manifest.output(out_dir + "/buckets.csv");
  manifest.output(out_dir + "/pr.csv");
  manifest.write(out_dir);
  return 0;
}

int cmd_viz(const std::string& ckpt_path, const std::string& archive_path,
            const std::string& indices_csv, const std::string& out_dir,
            bool use_last) {
  pan::Checkpoint ckpt = pan::load_checkpoint(ckpt_path);
  pan::ModelParams params = pan::params_from_checkpoint(ckpt, !use_last);
  auto samples = pan::read_archive(archive_path);
  std::filesystem::create_directories(out_dir);
  ManifestWriter manifest("viz", 0);
  manifest.input(ckpt_path);
  manifest.input(archive_path);
  manifest.config("indices", indices_csv);

  std::vector<int> indices;
  {
    std::istringstream ss(indices_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        indices.push_back(std::stoi(tok));
      } catch (const std::logic_error&) {
        throw pan::UsageError("bad sample index '" + tok + "'");
      }
    }
  }
  if (indices.empty()) throw pan::UsageError("no sample indices given");

  for (int idx : indices) {
    if (idx < 0 || idx >= static_cast<int>(samples.size()))
      throw pan::UsageError("sample index " + std::to_string(idx) +
                            " outside archive of " + std::to_string(samples.size()));
    const pan::Sample& sample = samples[static_cast<std::size_t>(idx)];
    std::vector<int> one{idx};
    std::vector<int> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    pan::Batch batch = pan::make_batch(samples, one, 0, 1);
    pan::ForwardResult res =
        pan::model_forward(nullptr, params, batch.images, batch.queries);

    std::string base = out_dir + "/sample" + std::to_string(idx);
    pan::write_ppm(base + "_input.ppm", pan::sample_to_image(sample));
    manifest.output(base + "_input.ppm");
    for (std::size_t l = 0; l < res.attention_maps.size(); ++l) {
      pan::Image overlay =
          pan::render_attention_overlay(sample, res, static_cast<int>(l));
      std::string path = base + "_att" + std::to_string(l + 1) + ".ppm";
      pan::write_ppm(path, overlay);
      manifest.output(path);
    }
  }
  manifest.write(out_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"progressive attention network lab"};
  app.require_subcommand(1);

  int threads = 0;
  bool deterministic = false;
  app.add_option("--threads", threads, "worker threads (default: PAN_LAB_THREADS or all cores)");
  app.add_flag("--deterministic", deterministic, "single-threaded, bit-reproducible mode");

  auto* gen = app.add_subcommand("gen", "generate dataset archives");
  std::string gen_config, mnist_dir, gen_out;
  std::uint64_t gen_seed = 0;
  bool gen_has_seed = false;
  gen->add_option("--config", gen_config, "generation config file")->required();
  gen->add_option("--mnist-dir", mnist_dir, "directory with MNIST IDX files")->required();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "override the config seed")
      ->each([&](const std::string&) { gen_has_seed = true; });

  auto* train = app.add_subcommand("train", "train a model");
  std::string train_config, train_data, train_out, resume_path;
  train->add_option("--config", train_config, "training config file")->required();
  train->add_option("--data", train_data, "directory with train.mref and val.mref")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--resume", resume_path, "checkpoint to resume from");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_data, eval_out;
  bool eval_last = false;
  eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "archive to evaluate")->required();
  eval->add_option("--out", eval_out, "output directory")->required();
  eval->add_flag("--use-last", eval_last, "evaluate final rather than best parameters");

  auto* viz = app.add_subcommand("viz", "render attention overlays");
  std::string viz_ckpt, viz_data, viz_indices, viz_out;
  bool viz_last = false;
  viz->add_option("--ckpt", viz_ckpt, "checkpoint file")->required();
  viz->add_option("--data", viz_data, "archive with samples")->required();
  viz->add_option("--indices", viz_indices, "comma-separated sample indices")->required();
  viz->add_option("--out", viz_out, "output directory")->required();
  viz->add_flag("--use-last", viz_last, "render final rather than best parameters");

  auto* selftest = app.add_subcommand("selftest", "gradient and invariant checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);  // CLI11 prints usage; exits 0 for --help
  }

  try {
    pan::set_threads(resolve_threads(threads, deterministic));
    if (gen->parsed()) return cmd_gen(gen_config, mnist_dir, gen_out, gen_seed, gen_has_seed);
    if (train->parsed()) return cmd_train(train_config, train_data, train_out, resume_path);
    if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_out, eval_last);
    if (viz->parsed()) return cmd_viz(viz_ckpt, viz_data, viz_indices, viz_out, viz_last);
    if (selftest->parsed()) return pan::run_selftest(std::cout);
  } catch (const pan::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
