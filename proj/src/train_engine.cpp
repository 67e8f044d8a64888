// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#include "shapenet/train_engine.hpp"

#include "shapenet/error.hpp"
#include "shapenet/eval_metrics.hpp"
#include "shapenet/hexfloat.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <random>

namespace shapenet {

using json = nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorCode::dimension, "epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorCode::dimension, "batch_size must be >= 1");
  if (!(adam.learning_rate > 0.0)) throw Error(ErrorCode::dimension, "learning rate must be > 0");
  if (num_shape_params < 0) throw Error(ErrorCode::dimension, "num_shape_params must be >= 0");
  if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
    throw Error(ErrorCode::dimension, "validation_fraction must lie in [0, 1)");
  }
}

double point_loss(const BatchMatrix& pred, const BatchMatrix& target, LossKind kind,
                  BatchMatrix* grad) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw Error(ErrorCode::dimension, "prediction and target shapes differ");
  }
  const auto count = static_cast<double>(pred.size());
  if (count == 0) return 0.0;
  const BatchMatrix diff = pred - target;
  double loss = 0.0;
  if (kind == LossKind::l1) {
    loss = diff.cwiseAbs().sum() / count;
    if (grad) *grad = diff.unaryExpr([&](double d) { return (d > 0.0) - (d < 0.0) + 0.0; }) / count;
  } else {
    loss = diff.squaredNorm() / count;
    if (grad) *grad = (2.0 / count) * diff;
  }
  return loss;
}

double point_loss(std::span<const LandmarkSet> pred, std::span<const LandmarkSet> target,
                  LossKind kind) {
  if (pred.size() != target.size()) throw Error(ErrorCode::dimension, "batch sizes differ");
  if (pred.empty()) return 0.0;
  const auto cols = static_cast<Eigen::Index>(2 * pred.front().size());
  BatchMatrix a(static_cast<Eigen::Index>(pred.size()), cols);
  BatchMatrix b(static_cast<Eigen::Index>(pred.size()), cols);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (static_cast<Eigen::Index>(2 * pred[i].size()) != cols ||
        static_cast<Eigen::Index>(2 * target[i].size()) != cols) {
      throw Error(ErrorCode::dimension, "landmark counts differ");
    }
    a.row(static_cast<Eigen::Index>(i)) = pred[i].flat().transpose();
    b.row(static_cast<Eigen::Index>(i)) = target[i].flat().transpose();
  }
  return point_loss(a, b, kind);
}

Adam::Adam(std::size_t num_params, AdamConfig config)
    : config_(config), m_(num_params, 0.0), v_(num_params, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw Error(ErrorCode::dimension, "optimizer state does not match the parameter count");
  }
  ++steps_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double lr = config_.learning_rate;
  const double eps = config_.epsilon;
  const auto n = static_cast<std::ptrdiff_t>(params.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * grads[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * grads[i] * grads[i];
    params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
  }
}

// Config JSON -----------------------------------------------------------------

json to_json(const NetConfig& c) {
  json plan = json::array();
  for (const Stage& s : c.plan) {
    plan.push_back({{"kind", s.kind == StageKind::conv_block ? "C2DB" : "DN"},
                    {"channels", s.channels},
                    {"frequency", s.frequency}});
  }
  return {{"in_channels", c.in_channels},         {"num_shape_params", c.num_shape_params},
          {"separable_convs", c.separable_convs}, {"input_size", c.input_size},
          {"plan", plan}};
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"learning_rate", c.adam.learning_rate},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"epsilon", c.adam.epsilon},
          {"batch_size", c.batch_size},
          {"loss", c.loss == LossKind::l1 ? "l1" : "mse"},
          {"num_shape_params", c.num_shape_params},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"checkpoint_dir", c.checkpoint_dir},
          {"validation_fraction", c.validation_fraction},
          {"augment",
           {{"enabled", c.augment.enabled},
            {"max_rotation_deg", c.augment.max_rotation_deg},
            {"scale_jitter", c.augment.scale_jitter},
            {"translation_jitter", c.augment.translation_jitter},
            {"outside_tolerance", c.augment.outside_tolerance},
            {"max_attempts", c.augment.max_attempts}}}};
}

namespace {

template <typename T>
void read_field(const json& j, const char* name, T& out, const std::string& path) {
  if (!j.contains(name)) return;
  try {
    out = j.at(name).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, path + "." + name + ": " + e.what());
  }
}

std::vector<Stage> parse_plan(const json& j) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (name == "full") return full_plan();
    if (name.starts_with("compact")) {
      int base = 8;
      if (const auto colon = name.find(':'); colon != std::string::npos) {
        base = std::stoi(name.substr(colon + 1));
      }
      return compact_plan(base);
    }
    throw Error(ErrorCode::parse, "$.net.plan: unknown plan preset '" + name + "'");
  }
  if (!j.is_array()) throw Error(ErrorCode::parse, "$.net.plan: expected an array or preset name");
  std::vector<Stage> plan;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string path = "$.net.plan[" + std::to_string(i) + "]";
    Stage s{StageKind::conv_block, 0, 1};
    std::string kind = "C2DB";
    read_field(j[i], "kind", kind, path);
    if (kind == "C2DB") {
      s.kind = StageKind::conv_block;
    } else if (kind == "DN") {
      s.kind = StageKind::downsample;
    } else {
      throw Error(ErrorCode::parse, path + ".kind: expected C2DB or DN");
    }
    read_field(j[i], "channels", s.channels, path);
    read_field(j[i], "frequency", s.frequency, path);
    plan.push_back(s);
  }
  return plan;
}

}  // namespace

NetConfig net_config_from_json(const json& j, NetConfig c) {
  const std::string path = "$.net";
  read_field(j, "in_channels", c.in_channels, path);
  read_field(j, "num_shape_params", c.num_shape_params, path);
  read_field(j, "separable_convs", c.separable_convs, path);
  read_field(j, "input_size", c.input_size, path);
  if (j.contains("plan")) c.plan = parse_plan(j.at("plan"));
  return c;
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  const std::string path = "$.train";
  read_field(j, "epochs", c.epochs, path);
  read_field(j, "learning_rate", c.adam.learning_rate, path);
  read_field(j, "beta1", c.adam.beta1, path);
  read_field(j, "beta2", c.adam.beta2, path);
  read_field(j, "epsilon", c.adam.epsilon, path);
  read_field(j, "batch_size", c.batch_size, path);
  if (j.contains("loss")) {
    const auto loss = j.at("loss").get<std::string>();
    if (loss == "l1") {
      c.loss = LossKind::l1;
    } else if (loss == "mse") {
      c.loss = LossKind::mse;
    } else {
      throw Error(ErrorCode::parse, "$.train.loss: expected l1 or mse");
    }
  }
  read_field(j, "num_shape_params", c.num_shape_params, path);
  read_field(j, "seed", c.seed, path);
  read_field(j, "checkpoint_every", c.checkpoint_every, path);
  read_field(j, "checkpoint_dir", c.checkpoint_dir, path);
  read_field(j, "validation_fraction", c.validation_fraction, path);
  if (j.contains("augment")) {
    const json& a = j.at("augment");
    const std::string apath = path + ".augment";
    read_field(a, "enabled", c.augment.enabled, apath);
    read_field(a, "max_rotation_deg", c.augment.max_rotation_deg, apath);
    read_field(a, "scale_jitter", c.augment.scale_jitter, apath);
    read_field(a, "translation_jitter", c.augment.translation_jitter, apath);
    read_field(a, "outside_tolerance", c.augment.outside_tolerance, apath);
    read_field(a, "max_attempts", c.augment.max_attempts, apath);
  }
  return c;
}

// Checkpoint container --------------------------------------------------------

namespace {

constexpr std::string_view kCheckpointMagic = "SHAPENET-CHECKPOINT\n";
constexpr int kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written as little-endian binary64");

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  const Network shape_only = Network(ckpt.net, 0);
  if (shape_only.num_parameters() != ckpt.parameters.size()) {
    throw Error(ErrorCode::dimension, "checkpoint parameter count does not match its network config");
  }
  json tensors = json::array();
  for (const TensorInfo& t : shape_only.tensors()) {
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", t.offset}, {"count", t.count}});
  }
  json header = {{"version", kCheckpointVersion},
                 {"net", to_json(ckpt.net)},
                 {"train", to_json(ckpt.train)},
                 {"model_fingerprint", ckpt.model_fingerprint},
                 {"epoch", ckpt.epoch},
                 {"validation_error", to_hexfloat(ckpt.validation_error)},
                 {"num_parameters", ckpt.parameters.size()},
                 {"payload", "f64le"},
                 {"tensors", tensors}};
  std::string out(kCheckpointMagic);
  out += header.dump();
  out += '\n';
  const std::size_t bytes = ckpt.parameters.size() * sizeof(double);
  const std::size_t start = out.size();
  out.resize(start + bytes);
  std::memcpy(out.data() + start, ckpt.parameters.data(), bytes);
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  if (!bytes.starts_with(kCheckpointMagic)) {
    throw Error(ErrorCode::parse, "$: not a checkpoint container");
  }
  const std::size_t header_end = bytes.find('\n', kCheckpointMagic.size());
  if (header_end == std::string::npos) throw Error(ErrorCode::parse, "$: truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(kCheckpointMagic.size(), header_end - kCheckpointMagic.size()));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::parse, std::string("$: ") + e.what());
  }
  if (!header.contains("version") || !header["version"].is_number_integer()) {
    throw Error(ErrorCode::parse, "$.version: missing field");
  }
  if (header["version"].get<int>() != kCheckpointVersion) {
    throw Error(ErrorCode::version, "checkpoint version " + header["version"].dump() +
                                        ", supported version " + std::to_string(kCheckpointVersion));
  }
  for (const char* f : {"net", "train", "model_fingerprint", "epoch", "validation_error", "num_parameters"}) {
    if (!header.contains(f)) throw Error(ErrorCode::parse, std::string("$.") + f + ": missing field");
  }
  Checkpoint ckpt;
  ckpt.net = net_config_from_json(header["net"]);
  ckpt.train = train_config_from_json(header["train"]);
  ckpt.model_fingerprint = header["model_fingerprint"].get<std::string>();
  ckpt.epoch = header["epoch"].get<int>();
  ckpt.validation_error =
      parse_hexfloat(header["validation_error"].get<std::string>(), "$.validation_error");
  const auto count = header["num_parameters"].get<std::size_t>();
  const std::size_t payload = bytes.size() - header_end - 1;
  if (payload != count * sizeof(double)) {
    throw Error(ErrorCode::parse, "$.payload: expected " + std::to_string(count * sizeof(double)) +
                                      " bytes, found " + std::to_string(payload));
  }
  ckpt.parameters.resize(count);
  std::memcpy(ckpt.parameters.data(), bytes.data() + header_end + 1, payload);
  if (Network(ckpt.net, 0).num_parameters() != count) {
    throw Error(ErrorCode::parse, "$.num_parameters: does not match the network config");
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  write_file_atomic(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path)); }

Network restore_network(const Checkpoint& checkpoint) {
  Network net(checkpoint.net, 0);
  if (net.num_parameters() != checkpoint.parameters.size()) {
    throw Error(ErrorCode::dimension, "checkpoint parameters do not fit the network config");
  }
  std::copy(checkpoint.parameters.begin(), checkpoint.parameters.end(), net.parameters().begin());
  return net;
}

std::string format_log_record(const EpochRecord& r) {
  return json{{"epoch", r.epoch}, {"split", r.split}, {"loss", r.loss},
              {"normalized_error", r.normalized_error}}
      .dump();
}

// Training --------------------------------------------------------------------

BatchMatrix landmark_matrix(std::span<const Sample> samples, std::span<const std::size_t> indices) {
  if (indices.empty()) return {};
  const auto cols = static_cast<Eigen::Index>(2 * samples[indices[0]].landmarks.size());
  BatchMatrix m(static_cast<Eigen::Index>(indices.size()), cols);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    m.row(static_cast<Eigen::Index>(b)) = samples[indices[b]].landmarks.flat().transpose();
  }
  return m;
}

namespace {

struct ValidationScore {
  double loss = 0.0;
  double error = 0.0;
};

ValidationScore score(const Network& net, const PcaLayer& layer, std::span<const Sample> samples,
                      int batch_size, LossKind kind) {
  ValidationScore s;
  if (samples.empty()) return s;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    idx.clear();
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) idx.push_back(i);
    const BatchMatrix pred = layer.forward(net.forward(stack_images(samples, idx)));
    if (!pred.allFinite()) {
      s.loss = s.error = std::numeric_limits<double>::quiet_NaN();
      return s;
    }
    const BatchMatrix gt = landmark_matrix(samples, idx);
    s.loss += point_loss(pred, gt, kind) * static_cast<double>(idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto r = static_cast<Eigen::Index>(b);
      s.error += normalized_p2p_error(LandmarkSet::from_flat(pred.row(r).transpose(), Frame::crop),
                                      samples[idx[b]].landmarks);
    }
  }
  s.loss /= static_cast<double>(samples.size());
  s.error /= static_cast<double>(samples.size());
  return s;
}

}  // namespace

TrainResult train(const Dataset& train_set, const TrainConfig& config, const NetConfig& net_config,
                  std::shared_ptr<const ShapeModel> model, const Dataset* validation,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (!model) throw Error(ErrorCode::dimension, "training needs a shape model");
  if (train_set.empty()) throw Error(ErrorCode::empty_dataset, "training set is empty");
  if (static_cast<int>(train_set.num_landmarks()) != model->num_landmarks) {
    throw Error(ErrorCode::model_mismatch,
                "dataset has " + std::to_string(train_set.num_landmarks()) +
                    " landmarks, shape model has " + std::to_string(model->num_landmarks));
  }
  if (net_config.num_shape_params != config.num_shape_params) {
    throw Error(ErrorCode::dimension, "network and training configs disagree on the parameter count");
  }
  const PcaLayer layer(model, config.num_shape_params);
  Network net(net_config, config.seed);

  // Hold out a validation share when no validation set is supplied.
  std::vector<Sample> train_samples;
  std::vector<Sample> val_samples;
  if (validation) {
    train_samples = train_set.samples;
    val_samples = validation->samples;
  } else {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(config.seed, 0xA11CEull));
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t n_val = 0;
    if (config.validation_fraction > 0.0 && train_set.size() >= 2) {
      n_val = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::lround(config.validation_fraction * train_set.size())));
    }
    std::vector<std::size_t> val_idx(order.begin(), order.begin() + n_val);
    std::vector<std::size_t> tr_idx(order.begin() + n_val, order.end());
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(tr_idx.begin(), tr_idx.end());
    for (auto i : tr_idx) train_samples.push_back(train_set.samples[i]);
    for (auto i : val_idx) val_samples.push_back(train_set.samples[i]);
  }
  const std::span<const Sample> val_span =
      val_samples.empty() ? std::span<const Sample>(train_samples) : std::span<const Sample>(val_samples);

  const std::string fingerprint = model_fingerprint(*model);
  auto snapshot = [&](int epoch, double val_error) {
    Checkpoint c;
    c.net = net_config;
    c.train = config;
    c.model_fingerprint = fingerprint;
    c.parameters.assign(net.parameters().begin(), net.parameters().end());
    c.epoch = epoch;
    c.validation_error = val_error;
    return c;
  };

  TrainResult result;
  result.best = snapshot(0, std::numeric_limits<double>::infinity());
  Adam adam(net.num_parameters(), config.adam);
  std::vector<double> grads(net.num_parameters());
  Activations acts;
  int last_finite_epoch = 0;

  std::vector<std::size_t> order(train_samples.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const std::uint64_t epoch_seed = derive_seed(config.seed, static_cast<std::uint64_t>(epoch));
    std::mt19937_64 rng(epoch_seed);
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<Sample> batch(end - start);
#pragma omp parallel for schedule(static)
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const std::size_t idx = order[start + b];
        batch[b] = augment_with_retries(train_samples[idx], config.augment, derive_seed(epoch_seed, idx));
      }
      const Tensor images = stack_images(batch);
      std::vector<std::size_t> all(batch.size());
      std::iota(all.begin(), all.end(), 0);
      const BatchMatrix gt = landmark_matrix(batch, all);

      const BatchMatrix params = net.forward(images, acts);
      const BatchMatrix pred = layer.forward(params);
      BatchMatrix grad_pred;
      const double loss = point_loss(pred, gt, config.loss, &grad_pred);
      if (!std::isfinite(loss)) {
        throw Error(ErrorCode::divergence, "loss became non-finite in epoch " + std::to_string(epoch) +
                                               "; last finite epoch " + std::to_string(last_finite_epoch));
      }
      epoch_loss += loss * static_cast<double>(batch.size());
      const BatchMatrix grad_params = layer.backward(params, grad_pred);
      net.backward(acts, grad_params, grads);
      adam.step(net.parameters(), grads);
    }
    epoch_loss /= static_cast<double>(order.size());
    if (!std::isfinite(epoch_loss)) {
      throw Error(ErrorCode::divergence, "training loss non-finite; last finite epoch " +
                                             std::to_string(last_finite_epoch));
    }

    const ValidationScore val = score(net, layer, val_span, config.batch_size, config.loss);
    if (!std::isfinite(val.loss) || !std::isfinite(val.error)) {
      throw Error(ErrorCode::divergence, "validation loss non-finite in epoch " + std::to_string(epoch) +
                                             "; last finite epoch " + std::to_string(last_finite_epoch));
    }
    last_finite_epoch = epoch;

    const EpochRecord train_rec{epoch, "train", epoch_loss, std::nan("")};
    const EpochRecord val_rec{epoch, "validation", val.loss, val.error};
    result.log.push_back(train_rec);
    result.log.push_back(val_rec);
    if (on_epoch) {
      on_epoch(train_rec);
      on_epoch(val_rec);
    }
    if (val.error < result.best.validation_error) result.best = snapshot(epoch, val.error);
    if (config.checkpoint_every > 0 && !config.checkpoint_dir.empty() &&
        epoch % config.checkpoint_every == 0) {
      save_checkpoint(snapshot(epoch, val.error),
                      (std::filesystem::path(config.checkpoint_dir) /
                       ("epoch_" + std::to_string(epoch) + ".ckpt"))
                          .string());
    }
    if (epoch == config.epochs) result.last = snapshot(epoch, val.error);
  }
  return result;
}

LandmarkDetector::LandmarkDetector(const Checkpoint& checkpoint, std::shared_ptr<const ShapeModel> model)
    : network_(restore_network(checkpoint)),
      layer_(model, checkpoint.net.num_shape_params) {
  if (checkpoint.model_fingerprint != model_fingerprint(*model)) {
    throw Error(ErrorCode::model_mismatch, "checkpoint was trained against shape model " +
                                               checkpoint.model_fingerprint + ", loaded model is " +
                                               model_fingerprint(*model));
  }
}

BatchMatrix LandmarkDetector::predict_flat(const Tensor& images) const {
  return layer_.forward(network_.forward(images));
}

std::vector<Prediction> LandmarkDetector::predict(const Tensor& images) const {
  const BatchMatrix params = network_.forward(images);
  const BatchMatrix landmarks = layer_.forward(params);
  std::vector<Prediction> out;
  out.reserve(static_cast<std::size_t>(params.rows()));
  for (Eigen::Index b = 0; b < params.rows(); ++b) {
    out.push_back({LandmarkSet::from_flat(landmarks.row(b).transpose(), Frame::crop),
                   ParamVector::unpack(params.row(b).transpose())});
  }
  return out;
}

std::vector<Prediction> predict(const Checkpoint& checkpoint, std::shared_ptr<const ShapeModel> model,
                                const Tensor& images) {
  return LandmarkDetector(checkpoint, std::move(model)).predict(images);
}

LandmarkSet to_canonical(const Sample& sample) {
  return sample.landmarks.translated(-0.5 * sample.crop.out_width, -0.5 * sample.crop.out_height)
      .with_frame(Frame::canonical);
}

ShapeModel build_shape_model(const Dataset& dataset, const ShapeModelOptions& options) {
  if (dataset.empty()) throw Error(ErrorCode::empty_dataset, "no samples to build a shape model from");
  std::vector<LandmarkSet> corpus;
  corpus.reserve(dataset.size());
  for (const auto& s : dataset.samples) corpus.push_back(to_canonical(s));

  std::vector<LandmarkSet> aligned;
  switch (options.alignment) {
    case AlignmentMethod::anchors: aligned = align_corpus(corpus, options.anchors); break;
    case AlignmentMethod::procrustes: aligned = align_corpus_procrustes(corpus); break;
    case AlignmentMethod::none:
      check_corpus(corpus);
      aligned = std::move(corpus);
      break;
  }
  ShapeModel model = compute_pca(aligned, options.p_max, options.scaling);
  model.alignment.method = options.alignment;
  if (options.alignment == AlignmentMethod::anchors) model.alignment.anchors = options.anchors;
  return model;
}

}  // namespace shapenet
