#include "pan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "pan/errors.hpp"
#include "pan/image.hpp"
#include "pan/train.hpp"

namespace pan {

double accuracy(const Tensor& probabilities, const std::vector<int>& labels) {
  if (probabilities.shape().size() != 2 ||
      probabilities.dim(0) != static_cast<int>(labels.size()))
    throw ConfigError("accuracy: probabilities and labels disagree");
  int n = probabilities.dim(0), k = probabilities.dim(1);
  auto p = probabilities.data();
  std::int64_t correct = 0;
  for (int i = 0; i < n; ++i) {
    int arg = 0;
    for (int j = 1; j < k; ++j)
      if (p[std::size_t(i) * k + j] > p[std::size_t(i) * k + arg]) arg = j;
    if (arg == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / n;
}

int scale_bucket(float scale) {
  // Half-open buckets of width 0.5 starting at 0.5; the last bucket closes
  // at 3.0 so the full range is covered.
  if (scale >= 3.0f) return 4;
  int b = static_cast<int>((scale - 0.5f) / 0.5f);
  return std::clamp(b, 0, 4);
}

std::array<std::optional<double>, 5> scale_bucket_accuracy(
    const Tensor& probabilities, const std::vector<int>& labels,
    const std::vector<float>& scales) {
  if (labels.size() != scales.size())
    throw ConfigError("scale_bucket_accuracy: labels and scales disagree");
  int n = probabilities.dim(0), k = probabilities.dim(1);
  auto p = probabilities.data();
  std::array<std::int64_t, 5> hits{};
  std::array<std::int64_t, 5> counts{};
  for (int i = 0; i < n; ++i) {
    int b = scale_bucket(scales[static_cast<std::size_t>(i)]);
    ++counts[static_cast<std::size_t>(b)];
    int arg = 0;
    for (int j = 1; j < k; ++j)
      if (p[std::size_t(i) * k + j] > p[std::size_t(i) * k + arg]) arg = j;
    if (arg == labels[static_cast<std::size_t>(i)]) ++hits[static_cast<std::size_t>(b)];
  }
  std::array<std::optional<double>, 5> out;
  for (int b = 0; b < 5; ++b)
    if (counts[static_cast<std::size_t>(b)] > 0)
      out[static_cast<std::size_t>(b)] =
          static_cast<double>(hits[static_cast<std::size_t>(b)]) /
          static_cast<double>(counts[static_cast<std::size_t>(b)]);
  return out;
}

std::vector<float> pool_mask(const std::vector<std::uint8_t>& mask, int h, int w) {
  if (mask.size() != static_cast<std::size_t>(kCanvasPixels))
    throw ConfigError("pool_mask expects a 96×96 mask");
  if (kCanvas % h != 0 || kCanvas % w != 0)
    throw ConfigError("attention extents must divide the canvas");
  int th = kCanvas / h, tw = kCanvas / w;
  std::vector<float> out(static_cast<std::size_t>(h) * w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      std::int64_t inside = 0;
      for (int y = 0; y < th; ++y)
        for (int x = 0; x < tw; ++x)
          if (mask[std::size_t(i * th + y) * kCanvas + (j * tw + x)]) ++inside;
      out[static_cast<std::size_t>(i) * w + j] =
          static_cast<float>(inside) / static_cast<float>(th * tw);
    }
  return out;
}

double tpr(const std::vector<float>& alpha, int h, int w,
           const std::vector<std::uint8_t>& mask) {
  if (alpha.size() != static_cast<std::size_t>(h) * w)
    throw ConfigError("tpr: attention map size mismatch");
  double total = 0.0;
  for (float a : alpha) total += a;
  if (std::abs(total - 1.0) > 1e-4)
    throw NumericError("tpr: attention map sums to " + std::to_string(total));
  auto pooled = pool_mask(mask, h, w);
  double inside = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i)
    inside += static_cast<double>(alpha[i]) * pooled[i];
  return inside / total;
}

std::vector<PrPoint> pr_curve(const std::vector<std::vector<float>>& alphas,
                              int h, int w,
                              const std::vector<const std::vector<std::uint8_t>*>& masks,
                              const std::vector<double>& thresholds) {
  if (alphas.size() != masks.size())
    throw ConfigError("pr_curve: map/mask count mismatch");
  if (!std::is_sorted(thresholds.begin(), thresholds.end()))
    throw ConfigError("pr_curve thresholds must be ascending");

  std::vector<std::int64_t> tp(thresholds.size(), 0), fp(thresholds.size(), 0),
      fn(thresholds.size(), 0);
  for (std::size_t s = 0; s < alphas.size(); ++s) {
    auto up = upsample_nearest(alphas[s], h, w, kCanvas, kCanvas);
    float max_a = *std::max_element(alphas[s].begin(), alphas[s].end());
    const auto& mask = *masks[s];
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      auto cut = static_cast<float>(thresholds[t] * max_a);
      for (std::size_t p = 0; p < up.size(); ++p) {
        bool pred = up[p] > cut;
        bool gt = mask[p] != 0;
        if (pred && gt) ++tp[t];
        else if (pred && !gt) ++fp[t];
        else if (!pred && gt) ++fn[t];
      }
    }
  }

  std::vector<PrPoint> out;
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    PrPoint pt;
    pt.tau = thresholds[t];
    std::int64_t predicted = tp[t] + fp[t];
    pt.precision = predicted == 0
                       ? 1.0  // zero predicted positives, by convention
                       : static_cast<double>(tp[t]) / static_cast<double>(predicted);
    std::int64_t actual = tp[t] + fn[t];
    pt.recall = actual == 0 ? 0.0
                            : static_cast<double>(tp[t]) / static_cast<double>(actual);
    out.push_back(pt);
  }
  return out;
}

std::vector<double> default_pr_thresholds() {
  std::vector<double> out;
  for (int i = 1; i <= 19; ++i) out.push_back(0.05 * i);
  return out;
}

MetricsReport evaluate(const ModelParams& params, const std::vector<Sample>& samples,
                       int batch_size, const std::string& model_id,
                       const std::string& dataset_id) {
  if (samples.empty()) throw UsageError("evaluate over an empty archive");
  if (params.config.canvas != kCanvas)
    throw ConfigError("model canvas " + std::to_string(params.config.canvas) +
                      " is incompatible with 96×96 archives");

  MetricsReport report;
  report.model_id = model_id;
  report.dataset_id = dataset_id;
  report.sample_count = static_cast<std::int64_t>(samples.size());

  std::vector<int> indices(samples.size());
  std::iota(indices.begin(), indices.end(), 0);

  std::vector<float> all_probs;
  std::vector<int> labels;
  std::vector<float> scales;
  std::vector<std::vector<float>> final_maps(samples.size());
  int k = params.config.num_colors;
  int map_h = 0, map_w = 0;

  for (std::size_t begin = 0; begin < samples.size();
       begin += static_cast<std::size_t>(batch_size)) {
    std::size_t end = std::min(samples.size(), begin + static_cast<std::size_t>(batch_size));
    Batch batch = make_batch(samples, indices, begin, end);
    ForwardResult res = model_forward(nullptr, params, batch.images, batch.queries);
    auto probs = res.probabilities.data();
    all_probs.insert(all_probs.end(), probs.begin(), probs.end());
    const Tensor& alpha = res.attention_maps.back();
    map_h = alpha.dim(2);
    map_w = alpha.dim(3);
    auto ad = alpha.data();
    std::size_t plane = static_cast<std::size_t>(map_h) * map_w;
    for (std::size_t b = 0; b < end - begin; ++b)
      final_maps[begin + b].assign(ad.begin() + static_cast<std::ptrdiff_t>(b * plane),
                                   ad.begin() + static_cast<std::ptrdiff_t>((b + 1) * plane));
    for (std::size_t b = 0; b < end - begin; ++b) {
      labels.push_back(batch.labels[b]);
      scales.push_back(samples[begin + b].scale);
    }
  }

  Tensor probs = Tensor::from({static_cast<int>(samples.size()), k},
                              std::move(all_probs));
  report.accuracy = accuracy(probs, labels);
  report.bucket_accuracy = scale_bucket_accuracy(probs, labels, scales);
  for (std::size_t i = 0; i < samples.size(); ++i)
    ++report.bucket_counts[static_cast<std::size_t>(scale_bucket(scales[i]))];

  double tpr_sum = 0.0, uniform_sum = 0.0;
  std::vector<float> uniform(static_cast<std::size_t>(map_h) * map_w,
                             1.0f / static_cast<float>(map_h * map_w));
  std::vector<const std::vector<std::uint8_t>*> masks;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    tpr_sum += tpr(final_maps[i], map_h, map_w, samples[i].mask);
    uniform_sum += tpr(uniform, map_h, map_w, samples[i].mask);
    masks.push_back(&samples[i].mask);
  }
  report.tpr_mean = tpr_sum / static_cast<double>(samples.size());
  report.uniform_tpr = uniform_sum / static_cast<double>(samples.size());
  report.pr = pr_curve(final_maps, map_h, map_w, masks, default_pr_thresholds());
  return report;
}

std::string metrics_to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["model_id"] = report.model_id;
  j["dataset_id"] = report.dataset_id;
  j["sample_count"] = report.sample_count;
  j["accuracy"] = report.accuracy;
  auto buckets = nlohmann::ordered_json::array();
  for (int b = 0; b < 5; ++b) {
    nlohmann::ordered_json e;
    e["low"] = 0.5 + 0.5 * b;
    e["high"] = 1.0 + 0.5 * b;
    e["count"] = report.bucket_counts[static_cast<std::size_t>(b)];
    if (report.bucket_accuracy[static_cast<std::size_t>(b)])
      e["accuracy"] = *report.bucket_accuracy[static_cast<std::size_t>(b)];
    else
      e["accuracy"] = nullptr;
    buckets.push_back(e);
  }
  j["scale_buckets"] = buckets;
  j["tpr_mean"] = report.tpr_mean;
  j["uniform_tpr"] = report.uniform_tpr;
  auto pr = nlohmann::ordered_json::array();
  for (const auto& p : report.pr) {
    nlohmann::ordered_json e;
    e["tau"] = p.tau;
    e["precision"] = p.precision;
    e["recall"] = p.recall;
    pr.push_back(e);
  }
  j["pr_curve"] = pr;
  return j.dump(2) + "\n";
}

void write_metrics_files(const std::string& dir, const MetricsReport& report) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir + "/metrics.json", std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + dir + "/metrics.json");
    out << metrics_to_json(report);
  }
  {
    std::ofstream out(dir + "/buckets.csv");
    if (!out) throw DataError("cannot open for writing: " + dir + "/buckets.csv");
    out << "bucket_low,bucket_high,count,accuracy\n";
    char line[128];
    for (int b = 0; b < 5; ++b) {
      if (report.bucket_accuracy[static_cast<std::size_t>(b)])
        std::snprintf(line, sizeof(line), "%.2f,%.2f,%lld,%.9g\n", 0.5 + 0.5 * b,
                      1.0 + 0.5 * b,
                      static_cast<long long>(report.bucket_counts[static_cast<std::size_t>(b)]),
                      *report.bucket_accuracy[static_cast<std::size_t>(b)]);
      else
        std::snprintf(line, sizeof(line), "%.2f,%.2f,%lld,\n", 0.5 + 0.5 * b,
                      1.0 + 0.5 * b,
                      static_cast<long long>(report.bucket_counts[static_cast<std::size_t>(b)]));
      out << line;
    }
  }
  {
    std::ofstream out(dir + "/pr.csv");
    if (!out) throw DataError("cannot open for writing: " + dir + "/pr.csv");
    out << "tau,precision,recall\n";
    char line[128];
    for (const auto& p : report.pr) {
      std::snprintf(line, sizeof(line), "%.2f,%.9g,%.9g\n", p.tau, p.precision,
                    p.recall);
      out << line;
    }
  }
}

}  // namespace pan
