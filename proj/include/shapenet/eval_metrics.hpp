// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "shapenet/data_pipeline.hpp"
#include "shapenet/landmarks.hpp"
#include "shapenet/train_engine.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace shapenet {

/// Mean per-landmark Euclidean distance divided by the mean of the
/// ground-truth bounding-box width and height.
double normalized_p2p_error(const LandmarkSet& pred, const LandmarkSet& gt);

struct EvalResult {
  std::vector<std::string> ids;
  std::vector<double> per_image_errors;
  double mean = 0.0;
  double median = 0.0;
  double std = 0.0;
  std::size_t num_images = 0;
  nlohmann::json config;
};

/// Aggregate statistics (population standard deviation).
EvalResult summarize(std::vector<double> errors);

/// Batch predictor returning crop-frame landmarks for the given samples.
using LandmarkPredictor =
    std::function<std::vector<LandmarkSet>(std::span<const Sample> batch, std::size_t first_index)>;

/// Per-image errors in the crop frame, in dataset order.
EvalResult evaluate(const LandmarkPredictor& predictor, const Dataset& dataset, int batch_size = 16);
EvalResult evaluate(const Checkpoint& checkpoint, std::shared_ptr<const ShapeModel> model,
                    const Dataset& dataset, int batch_size = 16);

std::string serialize_eval(const EvalResult& result);
/// `bin_lo,bin_hi,count` rows over [0, max error].
std::string error_histogram_csv(const EvalResult& result, int bins = 20);

struct SweepRow {
  int num_params = 0;
  bool ok = false;
  double mean_error = 0.0;
  double median_error = 0.0;
  std::string failure;
};

/// Trains and evaluates one model per entry of `p_values` with a shared seed.
/// Training failures are recorded in the row and the sweep continues.
std::vector<SweepRow> parameter_sweep(const Dataset& train_set, const Dataset& test_set,
                                      std::shared_ptr<const ShapeModel> model,
                                      std::span<const int> p_values, const TrainConfig& config,
                                      const NetConfig& net);

std::string sweep_csv(std::span<const SweepRow> rows);

struct BenchmarkResult {
  double fps = 0.0;
  double latency_ms = 0.0;  // median per batch
  int batch_size = 0;
  int iterations = 0;
  std::vector<double> batch_ms;
  std::string hardware;
};

/// Median wall-clock time of the full forward pass (network + PCA layer)
/// after `warmup` untimed iterations.
BenchmarkResult benchmark_fps(const Network& network, const PcaLayer& layer, int batch_size,
                              int iterations, int warmup = 1);

std::string serialize_benchmark(const BenchmarkResult& result);
std::string hardware_descriptor();

}  // namespace shapenet
