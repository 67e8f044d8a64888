// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "shapenet/data_pipeline.hpp"
#include "shapenet/feature_net.hpp"
#include "shapenet/pca_layer.hpp"
#include "shapenet/shape_model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace shapenet {

enum class LossKind { l1, mse };

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct TrainConfig {
  int epochs = 150;
  AdamConfig adam;
  int batch_size = 16;
  LossKind loss = LossKind::l1;
  int num_shape_params = 15;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs; 0 disables periodic checkpoints
  std::string checkpoint_dir;
  double validation_fraction = 0.1;
  AugmentConfig augment;

  void validate() const;
};

/// Mean over batch, landmarks and both coordinates of |d| (L1) or d^2 (MSE).
/// When `grad` is given it receives dLoss/dpred.
double point_loss(const BatchMatrix& pred, const BatchMatrix& target, LossKind kind,
                  BatchMatrix* grad = nullptr);
double point_loss(std::span<const LandmarkSet> pred, std::span<const LandmarkSet> target,
                  LossKind kind);

class Adam {
 public:
  Adam(std::size_t num_params, AdamConfig config);
  void step(std::span<double> params, std::span<const double> grads);
  long steps() const { return steps_; }

 private:
  AdamConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  long steps_ = 0;
};

/// Trained weights plus everything needed to rebuild and validate them.
struct Checkpoint {
  NetConfig net;
  TrainConfig train;
  std::string model_fingerprint;
  std::vector<double> parameters;
  int epoch = 0;
  double validation_error = 0.0;
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

Network restore_network(const Checkpoint& checkpoint);

struct EpochRecord {
  int epoch = 0;
  std::string split;
  double loss = 0.0;
  double normalized_error = 0.0;
};

std::string format_log_record(const EpochRecord& record);

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  std::vector<EpochRecord> log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// End-to-end training of network + PCA layer. When `validation` is null a
/// `validation_fraction` share of `train_set` is held out. Returns the
/// checkpoint with the lowest validation error.
TrainResult train(const Dataset& train_set, const TrainConfig& config, const NetConfig& net,
                  std::shared_ptr<const ShapeModel> model, const Dataset* validation = nullptr,
                  const EpochCallback& on_epoch = {});

struct Prediction {
  LandmarkSet landmarks;  // crop frame
  ParamVector params;
};

/// Network + PCA layer restored from a checkpoint.
class LandmarkDetector {
 public:
  LandmarkDetector(const Checkpoint& checkpoint, std::shared_ptr<const ShapeModel> model);

  std::vector<Prediction> predict(const Tensor& images) const;
  BatchMatrix predict_flat(const Tensor& images) const;

  const Network& network() const { return network_; }
  const PcaLayer& layer() const { return layer_; }

 private:
  Network network_;
  PcaLayer layer_;
};

std::vector<Prediction> predict(const Checkpoint& checkpoint, std::shared_ptr<const ShapeModel> model,
                                const Tensor& images);

/// Ground-truth landmarks of the selected samples, one row per sample.
BatchMatrix landmark_matrix(std::span<const Sample> samples, std::span<const std::size_t> indices);

/// Crop-frame landmarks translated so that the crop centre is the origin.
LandmarkSet to_canonical(const Sample& sample);

struct ShapeModelOptions {
  AlignmentMethod alignment = AlignmentMethod::anchors;
  AnchorGroups anchors;
  int p_max = 15;
  EigenvectorScaling scaling = EigenvectorScaling::sqrt_eigenvalue;
};

/// Canonicalizes, aligns and decomposes the dataset's landmarks.
ShapeModel build_shape_model(const Dataset& dataset, const ShapeModelOptions& options);

// Config (de)serialization, shared with the command-line tool.
nlohmann::json to_json(const NetConfig& config);
nlohmann::json to_json(const TrainConfig& config);
/// Fields missing from `j` keep the values in `defaults`.
NetConfig net_config_from_json(const nlohmann::json& j, NetConfig defaults = {});
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig defaults = {});

}  // namespace shapenet
