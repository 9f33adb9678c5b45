#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "pan/dataset.hpp"
#include "pan/model.hpp"

namespace pan {

struct PrPoint {
  double tau;
  double precision;
  double recall;
};

struct MetricsReport {
  std::string model_id;
  std::string dataset_id;
  std::int64_t sample_count = 0;
  double accuracy = 0.0;
  // Scale buckets [0.5,1.0) [1.0,1.5) [1.5,2.0) [2.0,2.5) [2.5,3.0]; empty
  // buckets are absent rather than zero.
  std::array<std::optional<double>, 5> bucket_accuracy;
  std::array<std::int64_t, 5> bucket_counts{};
  double tpr_mean = 0.0;
  double uniform_tpr = 0.0;  // TPR of the uniform map = mean pooled-mask fraction
  std::vector<PrPoint> pr;
};

// Fraction of rows whose argmax probability matches the label (ties toward
// the lower index).
double accuracy(const Tensor& probabilities, const std::vector<int>& labels);

int scale_bucket(float scale);

std::array<std::optional<double>, 5> scale_bucket_accuracy(
    const Tensor& probabilities, const std::vector<int>& labels,
    const std::vector<float>& scales);

// Average-pools a 96×96 byte mask to h×w in-mask fractions.
std::vector<float> pool_mask(const std::vector<std::uint8_t>& mask, int h, int w);

// Attention mass inside the target region: sum(alpha * pooled_mask) /
// sum(alpha). alpha must sum to 1 within 1e-4.
double tpr(const std::vector<float>& alpha, int h, int w,
           const std::vector<std::uint8_t>& mask);

// Micro-averaged precision/recall at relative thresholds: a pixel is
// predicted positive when its nearest-neighbor-upsampled attention exceeds
// tau * max(alpha) for that sample.
std::vector<PrPoint> pr_curve(const std::vector<std::vector<float>>& alphas,
                              int h, int w,
                              const std::vector<const std::vector<std::uint8_t>*>& masks,
                              const std::vector<double>& thresholds);

std::vector<double> default_pr_thresholds();  // 0.05, 0.10, ..., 0.95

// Full forward evaluation of a parameter set over an archive.
MetricsReport evaluate(const ModelParams& params, const std::vector<Sample>& samples,
                       int batch_size, const std::string& model_id,
                       const std::string& dataset_id);

std::string metrics_to_json(const MetricsReport& report);
void write_metrics_files(const std::string& dir, const MetricsReport& report);

}  // namespace pan
