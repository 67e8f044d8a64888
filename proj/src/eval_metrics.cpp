// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#include "shapenet/eval_metrics.hpp"

#include "shapenet/error.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace shapenet {

using json = nlohmann::json;

double normalized_p2p_error(const LandmarkSet& pred, const LandmarkSet& gt) {
  if (pred.size() != gt.size() || gt.size() == 0) {
    throw Error(ErrorCode::dimension, "prediction has " + std::to_string(pred.size()) +
                                          " landmarks, ground truth " + std::to_string(gt.size()));
  }
  const BoundingBox box = gt.bounding_box();
  const double norm = 0.5 * (box.width() + box.height());
  if (!(norm > 0.0)) {
    throw Error(ErrorCode::degenerate_extent, "ground-truth landmarks have zero extent");
  }
  double sum = 0.0;
  for (std::size_t l = 0; l < gt.size(); ++l) {
    sum += std::hypot(pred[l].x - gt[l].x, pred[l].y - gt[l].y);
  }
  return sum / static_cast<double>(gt.size()) / norm;
}

EvalResult summarize(std::vector<double> errors) {
  EvalResult r;
  r.num_images = errors.size();
  if (!errors.empty()) {
    r.mean = std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(errors.size());
    std::vector<double> sorted = errors;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    r.median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    double var = 0.0;
    for (double e : errors) var += (e - r.mean) * (e - r.mean);
    r.std = std::sqrt(var / static_cast<double>(n));
  }
  r.per_image_errors = std::move(errors);
  return r;
}

EvalResult evaluate(const LandmarkPredictor& predictor, const Dataset& dataset, int batch_size) {
  if (dataset.empty()) throw Error(ErrorCode::empty_dataset, "evaluation dataset is empty");
  if (batch_size < 1) throw Error(ErrorCode::dimension, "batch_size must be >= 1");
  const std::span<const Sample> all(dataset.samples);
  std::vector<double> errors(dataset.size());
  for (std::size_t start = 0; start < dataset.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min(dataset.size() - start, static_cast<std::size_t>(batch_size));
    const auto preds = predictor(all.subspan(start, count), start);
    if (preds.size() != count) throw Error(ErrorCode::dimension, "predictor returned the wrong batch size");
#pragma omp parallel for schedule(static)
    for (std::size_t b = 0; b < count; ++b) {
      errors[start + b] = normalized_p2p_error(preds[b], dataset.samples[start + b].landmarks);
    }
  }
  EvalResult r = summarize(std::move(errors));
  for (const auto& s : dataset.samples) r.ids.push_back(s.crop.source_id);
  return r;
}

EvalResult evaluate(const Checkpoint& checkpoint, std::shared_ptr<const ShapeModel> model,
                    const Dataset& dataset, int batch_size) {
  if (!dataset.empty() && static_cast<int>(dataset.num_landmarks()) != model->num_landmarks) {
    throw Error(ErrorCode::model_mismatch, "dataset and shape model landmark counts differ");
  }
  const LandmarkDetector detector(checkpoint, model);
  EvalResult r = evaluate(
      [&](std::span<const Sample> batch, std::size_t) {
        std::vector<LandmarkSet> out;
        for (auto& p : detector.predict(stack_images(batch))) out.push_back(std::move(p.landmarks));
        return out;
      },
      dataset, batch_size);
  r.config = {{"net", to_json(checkpoint.net)},
              {"model_fingerprint", checkpoint.model_fingerprint},
              {"checkpoint_epoch", checkpoint.epoch}};
  return r;
}

std::string serialize_eval(const EvalResult& r) {
  json per_image = json::array();
  for (std::size_t i = 0; i < r.per_image_errors.size(); ++i) {
    per_image.push_back({{"id", i < r.ids.size() ? r.ids[i] : std::to_string(i)},
                         {"error", r.per_image_errors[i]}});
  }
  return json{{"num_images", r.num_images}, {"mean", r.mean},     {"median", r.median},
              {"std", r.std},               {"config", r.config}, {"per_image", per_image}}
             .dump(2) +
         "\n";
}

std::string error_histogram_csv(const EvalResult& r, int bins) {
  std::string out = "bin_lo,bin_hi,count\n";
  if (r.per_image_errors.empty() || bins < 1) return out;
  const double hi = *std::max_element(r.per_image_errors.begin(), r.per_image_errors.end());
  const double width = hi > 0.0 ? hi / bins : 1.0;
  std::vector<int> counts(static_cast<std::size_t>(bins), 0);
  for (double e : r.per_image_errors) {
    const int b = std::min(bins - 1, static_cast<int>(e / width));
    ++counts[static_cast<std::size_t>(b)];
  }
  for (int b = 0; b < bins; ++b) {
    out += std::to_string(b * width) + "," + std::to_string((b + 1) * width) + "," +
           std::to_string(counts[static_cast<std::size_t>(b)]) + "\n";
  }
  return out;
}

std::vector<SweepRow> parameter_sweep(const Dataset& train_set, const Dataset& test_set,
                                      std::shared_ptr<const ShapeModel> model,
                                      std::span<const int> p_values, const TrainConfig& config,
                                      const NetConfig& net) {
  if (!p_values.empty() && *std::max_element(p_values.begin(), p_values.end()) > model->p_max()) {
    throw Error(ErrorCode::dimension, "sweep asks for more parameters than the model's p_max " +
                                          std::to_string(model->p_max()));
  }
  std::vector<SweepRow> rows;
  for (int p : p_values) {
    SweepRow row;
    row.num_params = p;
    try {
      TrainConfig tc = config;
      tc.num_shape_params = p;
      NetConfig nc = net;
      nc.num_shape_params = p;
      const TrainResult trained = train(train_set, tc, nc, model);
      const EvalResult eval = evaluate(trained.best, model, test_set, tc.batch_size);
      row.ok = true;
      row.mean_error = eval.mean;
      row.median_error = eval.median;
    } catch (const Error& e) {
      row.failure = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "num_params,status,mean_error,median_error\n";
  char buf[128];
  for (const auto& r : rows) {
    if (r.ok) {
      std::snprintf(buf, sizeof(buf), "%d,ok,%.17g,%.17g\n", r.num_params, r.mean_error, r.median_error);
    } else {
      std::snprintf(buf, sizeof(buf), "%d,failed,,\n", r.num_params);
    }
    out += buf;
  }
  return out;
}

std::string hardware_descriptor() {
  std::string cpu = "unknown cpu";
  std::ifstream info("/proc/cpuinfo");
  for (std::string line; std::getline(info, line);) {
    if (line.starts_with("model name")) {
      cpu = line.substr(line.find(':') + 2);
      break;
    }
  }
  return cpu + ", " + std::to_string(omp_get_max_threads()) + " OpenMP thread(s), binary64";
}

BenchmarkResult benchmark_fps(const Network& network, const PcaLayer& layer, int batch_size,
                              int iterations, int warmup) {
  if (batch_size < 1 || iterations < 1) {
    throw Error(ErrorCode::dimension, "batch size and iteration count must be >= 1");
  }
  const NetConfig& c = network.config();
  Tensor images(batch_size, c.in_channels, c.input_size, c.input_size);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < images.size(); ++i) images.data()[i] = u(rng);

  for (int i = 0; i < warmup; ++i) layer.forward(network.forward(images));
  BenchmarkResult r;
  r.batch_size = batch_size;
  r.iterations = iterations;
  for (int i = 0; i < iterations; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const BatchMatrix out = layer.forward(network.forward(images));
    const auto t1 = std::chrono::steady_clock::now();
    if (!std::isfinite(out.sum())) throw Error(ErrorCode::divergence, "benchmark produced non-finite output");
    r.batch_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::vector<double> sorted = r.batch_ms;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  r.latency_ms = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  r.fps = 1000.0 * batch_size / r.latency_ms;
  r.hardware = hardware_descriptor();
  return r;
}

std::string serialize_benchmark(const BenchmarkResult& r) {
  return json{{"fps", r.fps},           {"latency_ms", r.latency_ms}, {"batch_size", r.batch_size},
              {"iterations", r.iterations}, {"batch_ms", r.batch_ms}, {"hardware", r.hardware}}
             .dump(2) +
         "\n";
}

}  // namespace shapenet
