#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pan/dataset.hpp"
#include "pan/model.hpp"

namespace pan {

struct TrainConfig {
  ModelConfig model;
  int epochs = 30;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  bool shuffle = true;
  int eval_every = 1;          // epochs between validation passes
  int patience = 0;            // early stop after this many stale evals; 0 = off
  double clip_norm = 0.0;      // global gradient-norm clip; 0 = off
  double stop_at_train_acc = -1.0;  // stop once train accuracy reaches this; <0 = off

  void validate() const;
};

struct AdamState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::int64_t t = 0;
};

// Bias-corrected Adam over the canonical parameter order; gradients are read
// from each tensor's grad buffer.
void adam_step(std::vector<Tensor>& params, AdamState& state,
               const TrainConfig& hyper);

struct Checkpoint {
  ModelConfig config;
  std::vector<std::vector<float>> params;       // current values
  std::vector<std::vector<float>> best_params;  // best validation accuracy
  AdamState adam;
  int epoch = 0;
  float best_val_acc = -1.0f;
  int best_epoch = -1;
  std::string rng_state;  // shuffle stream, for bitwise resume
};

// `PANCKPT1` file format; bit-exact round trip.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Materializes model parameters from a checkpoint (best or current values).
ModelParams params_from_checkpoint(const Checkpoint& ckpt, bool use_best);

struct EpochStats {
  int epoch;
  double train_loss;
  double val_acc;  // negative when the epoch was not evaluated
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochStats> history;
};

// Argmax color accuracy (ties toward the lower index) of a parameter set
// over a sample list.
double dataset_accuracy(const ModelParams& params,
                        const std::vector<Sample>& samples, int batch_size);

// Minibatch training with Adam; returns the final checkpoint (carrying both
// current and best-validation parameters) plus the per-epoch history.
// `resume` continues a previous run bitwise when configs match.
TrainResult train(const TrainConfig& config, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set,
                  const Checkpoint* resume = nullptr, std::ostream* log = nullptr);

void write_history_csv(const std::string& path,
                       const std::vector<EpochStats>& history);

// Batch assembly shared by training and evaluation: images scaled to [0, 1],
// one-hot queries, color labels.
struct Batch {
  Tensor images;
  Tensor queries;
  std::vector<int> labels;
};
Batch make_batch(const std::vector<Sample>& samples, const std::vector<int>& indices,
                 std::size_t begin, std::size_t end);

}  // namespace pan
