// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include "shapenet/error.hpp"
#include "shapenet/eval_metrics.hpp"
#include "shapenet/hexfloat.hpp"
#include "shapenet/synth_data.hpp"
#include "shapenet/train_engine.hpp"

#include <cstdio>
#include <filesystem>
#include <ostream>
#include <sstream>

namespace shapenet::cli {

using nlohmann::json;
namespace fs = std::filesystem;

json default_config() {
  TrainConfig train;
  json train_json = to_json(train);
  train_json.erase("seed");  // the top-level seed drives every stage
  train_json.erase("checkpoint_dir");
  return {
      {"seed", 0},
      {"paths", {{"manifest", nullptr}, {"shape_model", nullptr}, {"checkpoint", nullptr}}},
      {"synth",
       {{"num_samples", 2000},
        {"num_landmarks", 16},
        {"num_modes", 4},
        {"amplitudes", nullptr},
        {"noise_sigma", 0.0},
        {"pixel_noise", 0.02},
        {"canvas_size", 128},
        {"channels", 1},
        {"test_fraction", 0.1},
        {"max_rotation_deg", 20.0},
        {"max_translation", 6.0},
        {"scale_min", 0.9},
        {"scale_max", 1.1},
        {"base_radius", 36.0}}},
      {"data", {{"crop_size", 64}, {"margin", 0.2}, {"channels", 1}, {"split", "test"}}},
      {"shape_model", {{"alignment", "anchors"}, {"anchors", "synthetic"}, {"p_max", 15}}},
      {"net", {{"plan", "compact:8"}, {"separable_convs", false}}},
      {"train", train_json},
      {"eval", {{"batch_size", 16}, {"histogram_bins", 20}}},
      {"sweep", {{"params", {5, 15, 25}}}},
      {"benchmark",
       {{"params", {5, 75}},
        {"batch_size", 16},
        {"iterations", 10},
        {"warmup", 2},
        {"plan", "full"},
        {"input_size", 224},
        {"channels", 3},
        {"num_landmarks", 68}}},
  };
}

namespace {

template <typename T>
T get(const json& config, const char* pointer) {
  try {
    return config.at(json::json_pointer(pointer)).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, std::string("config ") + pointer + ": " + e.what());
  }
}

std::string default_help_suffix(const std::string& key) {
  static const json defaults = default_config();
  const json::json_pointer ptr(key);
  std::string text = " (config: " + key.substr(1);
  if (defaults.contains(ptr) && !defaults.at(ptr).is_null()) text += ", default: " + defaults.at(ptr).dump();
  return text + ")";
}

class Builder {
 public:
  Builder(Application& application, Command& command) : app_(application), cmd_(command) {}

  template <typename T>
  CLI::Option* option(const std::string& flags, const std::string& key, const std::string& help) {
    auto storage = std::make_shared<T>();
    app_.storage.push_back(storage);
    CLI::Option* opt = cmd_.app->add_option(flags, *storage, help + default_help_suffix(key));
    cmd_.bindings.push_back({opt, json::json_pointer(key), [storage] { return json(*storage); }});
    return opt;
  }

  CLI::Option* list(const std::string& flags, const std::string& key, const std::string& help) {
    return option<std::vector<int>>(flags, key, help)->delimiter(',');
  }

  void common(bool seed = true) {
    auto config = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>("run");
    app_.storage.push_back(config);
    app_.storage.push_back(out);
    cmd_.config_path = config.get();
    cmd_.out_dir = out.get();
    cmd_.app->add_option("--config", *config, "JSON config file; flags override its values")
        ->check(CLI::ExistingFile);
    cmd_.app->add_option("--out", *out, "Run directory for outputs and the config snapshot (default: run)");
    if (seed) option<std::uint64_t>("--seed", "/seed", "Global random seed");
  }

  void manifest() {
    option<std::string>("--manifest", "/paths/manifest", "Dataset manifest (default: <out>/manifest.txt)");
  }
  void shape_model() {
    option<std::string>("--shape-model", "/paths/shape_model",
                        "Shape-model file (default: <out>/shape_model.json)");
  }
  void checkpoint() {
    option<std::string>("--checkpoint", "/paths/checkpoint",
                        "Checkpoint file (default: <out>/checkpoint.best.bin)");
  }
  void crop() {
    option<int>("--crop-size", "/data/crop_size", "Side length of the square network crop in pixels");
    option<double>("--margin", "/data/margin", "Crop margin as a fraction of the landmark box extent");
    option<int>("--channels", "/data/channels", "Image channels fed to the network (1 or 3)");
  }
  void training() {
    option<int>("--epochs", "/train/epochs", "Training epochs");
    option<int>("--batch-size", "/train/batch_size", "Mini-batch size");
    option<double>("--learning-rate", "/train/learning_rate", "Adam learning rate");
    option<std::string>("--loss", "/train/loss", "Point loss: l1 or mse")
        ->check(CLI::IsMember({"l1", "mse"}));
    option<bool>("--augment", "/train/augment/enabled", "Random similarity augmentation (true/false)");
    option<double>("--validation-fraction", "/train/validation_fraction",
                   "Share of the training split held out for checkpoint selection");
    option<std::string>("--plan", "/net/plan", "Network plan: full or compact[:base_channels]");
  }

 private:
  Application& app_;
  Command& cmd_;
};

std::string path_or(const json& config, const char* pointer, const Command& cmd, const char* file) {
  const json& v = config.at(json::json_pointer(pointer));
  if (!v.is_null()) return v.get<std::string>();
  return (fs::path(*cmd.out_dir) / file).string();
}

CropOptions crop_options(const json& config, int size) {
  CropOptions c;
  c.out_size = size;
  c.margin = get<double>(config, "/data/margin");
  return c;
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw Error(ErrorCode::parse, "split must be train or test, got '" + s + "'");
}

AnchorGroups parse_anchors(const json& value, int num_landmarks) {
  if (value.is_string()) {
    const auto name = value.get<std::string>();
    if (name == "synthetic") return synth_anchor_groups(num_landmarks);
    if (name == "ibug68") return ibug68_eye_anchors();
    // "a,b,c;d,e,f"
    AnchorGroups g;
    const auto semi = name.find(';');
    if (semi == std::string::npos) {
      throw Error(ErrorCode::parse, "anchors: expected 'synthetic', 'ibug68' or 'i,j;k,l'");
    }
    auto parse_group = [](const std::string& text) {
      std::vector<int> out;
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) {
        try {
          out.push_back(std::stoi(item));
        } catch (const std::exception&) {
          throw Error(ErrorCode::parse, "anchors: bad index '" + item + "'");
        }
      }
      return out;
    };
    g.first = parse_group(name.substr(0, semi));
    g.second = parse_group(name.substr(semi + 1));
    return g;
  }
  if (value.is_array() && value.size() == 2) {
    return {value[0].get<std::vector<int>>(), value[1].get<std::vector<int>>()};
  }
  throw Error(ErrorCode::parse, "anchors: expected a preset name or two index lists");
}

AlignmentMethod parse_alignment(const std::string& s) {
  if (s == "anchors") return AlignmentMethod::anchors;
  if (s == "procrustes") return AlignmentMethod::procrustes;
  if (s == "none") return AlignmentMethod::none;
  throw Error(ErrorCode::parse, "alignment must be anchors, procrustes or none");
}

SynthSpec synth_spec(const json& config) {
  const json& j = config.at("synth");
  SynthSpec s;
  s.num_samples = j.at("num_samples").get<int>();
  s.num_landmarks = j.at("num_landmarks").get<int>();
  s.num_modes = j.at("num_modes").get<int>();
  s.mode_amplitudes = j.at("amplitudes").is_null() ? linear_amplitudes(s.num_modes, 12.0, 6.0)
                                                   : j.at("amplitudes").get<std::vector<double>>();
  s.noise_sigma = j.at("noise_sigma").get<double>();
  s.pixel_noise = j.at("pixel_noise").get<double>();
  s.canvas_size = j.at("canvas_size").get<int>();
  s.channels = j.at("channels").get<int>();
  s.max_rotation_deg = j.at("max_rotation_deg").get<double>();
  s.max_translation = j.at("max_translation").get<double>();
  s.scale_min = j.at("scale_min").get<double>();
  s.scale_max = j.at("scale_max").get<double>();
  s.base_radius = j.at("base_radius").get<double>();
  s.seed = config.at("seed").get<std::uint64_t>();
  return s;
}

TrainConfig train_config(const json& config) {
  TrainConfig c = train_config_from_json(config.at("train"));
  c.seed = config.at("seed").get<std::uint64_t>();
  return c;
}

NetConfig net_config(const json& config, int num_params) {
  json net = config.at("net");
  net["input_size"] = get<int>(config, "/data/crop_size");
  net["in_channels"] = get<int>(config, "/data/channels");
  net["num_shape_params"] = num_params;
  return net_config_from_json(net);
}

Dataset load_split(const json& config, const Command& cmd, Split split, int crop_size, int channels) {
  const auto entries = read_manifest(path_or(config, "/paths/manifest", cmd, "manifest.txt"));
  return load_dataset(entries, split, crop_options(config, crop_size), channels);
}

std::shared_ptr<const ShapeModel> load_shape_model(const json& config, const Command& cmd) {
  return std::make_shared<const ShapeModel>(
      load_model(path_or(config, "/paths/shape_model", cmd, "shape_model.json")));
}

std::string out_file(const Command& cmd, const std::string& name) {
  return (fs::path(*cmd.out_dir) / name).string();
}

// Subcommands -----------------------------------------------------------------

void run_synth(const Command& cmd, const json& config, std::ostream& log) {
  const SynthSpec spec = synth_spec(config);
  const SynthDataset ds = generate_dataset(spec);
  write_synth_dataset(ds, *cmd.out_dir, get<double>(config, "/synth/test_fraction"));
  save_model(ds.true_model(), out_file(cmd, "generator_model.json"));
  log << "wrote " << ds.samples.size() << " samples (L=" << spec.num_landmarks << ", k=" << spec.num_modes
      << ") to " << *cmd.out_dir << "\n";
}

void run_build_shapes(const Command& cmd, const json& config, std::ostream& log) {
  const Dataset ds = load_split(config, cmd, Split::train, get<int>(config, "/data/crop_size"),
                                get<int>(config, "/data/channels"));
  if (ds.empty()) throw Error(ErrorCode::empty_dataset, "manifest has no train entries");
  ShapeModelOptions opts;
  opts.alignment = parse_alignment(get<std::string>(config, "/shape_model/alignment"));
  opts.anchors = parse_anchors(config.at(json::json_pointer("/shape_model/anchors")),
                               static_cast<int>(ds.num_landmarks()));
  opts.p_max = get<int>(config, "/shape_model/p_max");
  ShapeModel model = build_shape_model(ds, opts);
  model.corpus_meta = "samples=" + std::to_string(ds.size()) +
                      " crop_size=" + std::to_string(get<int>(config, "/data/crop_size"));
  for (const auto& w : model.warnings) log << "warning: " << w << "\n";
  const std::string path = path_or(config, "/paths/shape_model", cmd, "shape_model.json");
  save_model(model, path);
  log << "shape model: L=" << model.num_landmarks << " p_max=" << model.p_max() << " -> " << path << "\n";
}

void run_train(const Command& cmd, const json& config, std::ostream& log) {
  const auto model = load_shape_model(config, cmd);
  TrainConfig tc = train_config(config);
  if (tc.checkpoint_every > 0) tc.checkpoint_dir = out_file(cmd, "checkpoints");
  const NetConfig nc = net_config(config, tc.num_shape_params);
  const Dataset ds = load_split(config, cmd, Split::train, nc.input_size, nc.in_channels);
  if (ds.empty()) throw Error(ErrorCode::empty_dataset, "manifest has no train entries");

  std::string log_lines;
  const TrainResult result = train(ds, tc, nc, model, nullptr, [&](const EpochRecord& r) {
    const std::string line = format_log_record(r);
    log_lines += line + "\n";
    log << line << "\n" << std::flush;
  });
  write_file_atomic(out_file(cmd, "train_log.jsonl"), log_lines);
  save_checkpoint(result.last, out_file(cmd, "checkpoint.last.bin"));
  const std::string best = path_or(config, "/paths/checkpoint", cmd, "checkpoint.best.bin");
  save_checkpoint(result.best, best);
  log << "best epoch " << result.best.epoch << " validation error " << result.best.validation_error
      << " -> " << best << "\n";
}

void run_evaluate(const Command& cmd, const json& config, std::ostream& log) {
  const auto model = load_shape_model(config, cmd);
  const Checkpoint ckpt = load_checkpoint(path_or(config, "/paths/checkpoint", cmd, "checkpoint.best.bin"));
  const Split split = parse_split(get<std::string>(config, "/data/split"));
  const Dataset ds = load_split(config, cmd, split, ckpt.net.input_size, ckpt.net.in_channels);
  EvalResult result = evaluate(ckpt, model, ds, get<int>(config, "/eval/batch_size"));
  result.config = config;
  std::string per_image = "id,normalized_error\n";
  char buf[64];
  for (std::size_t i = 0; i < result.per_image_errors.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", result.per_image_errors[i]);
    per_image += result.ids[i] + "," + buf + "\n";
  }
  write_file_atomic(out_file(cmd, "per_image_errors.csv"), per_image);
  write_file_atomic(out_file(cmd, "error_histogram.csv"),
                    error_histogram_csv(result, get<int>(config, "/eval/histogram_bins")));
  write_file_atomic(out_file(cmd, "eval.json"), serialize_eval(result));
  log << "images " << result.num_images << " mean " << result.mean << " median " << result.median
      << " std " << result.std << "\n";
}

void run_predict(const Command& cmd, const json& config, std::ostream& log) {
  const auto model = load_shape_model(config, cmd);
  const Checkpoint ckpt = load_checkpoint(path_or(config, "/paths/checkpoint", cmd, "checkpoint.best.bin"));
  const Split split = parse_split(get<std::string>(config, "/data/split"));
  const Dataset ds = load_split(config, cmd, split, ckpt.net.input_size, ckpt.net.in_channels);
  const LandmarkDetector detector(ckpt, model);
  const int batch = get<int>(config, "/eval/batch_size");

  std::vector<LandmarkRecord> records;
  std::string params = "id";
  for (int k = 0; k < ckpt.net.num_shape_params; ++k) params += ",w" + std::to_string(k);
  params += ",scale,rotation,tx,ty\n";
  char buf[64];
  for (std::size_t first = 0; first < ds.size(); first += static_cast<std::size_t>(batch)) {
    const std::size_t last = std::min(ds.size(), first + static_cast<std::size_t>(batch));
    std::vector<std::size_t> idx;
    for (std::size_t i = first; i < last; ++i) idx.push_back(i);
    const auto preds = detector.predict(stack_images(ds.samples, idx));
    for (std::size_t b = 0; b < preds.size(); ++b) {
      const Sample& s = ds.samples[first + b];
      records.push_back({s.crop.source_id, landmarks_to_original(s.crop, preds[b].landmarks)});
      params += s.crop.source_id;
      for (double v : preds[b].params.packed()) {
        std::snprintf(buf, sizeof(buf), ",%.17g", v);
        params += buf;
      }
      params += "\n";
    }
  }
  write_file_atomic(out_file(cmd, "predictions.csv"), format_csv_landmarks(records));
  write_file_atomic(out_file(cmd, "predicted_params.csv"), params);
  log << "predicted " << records.size() << " images\n";
}

void run_sweep(const Command& cmd, const json& config, std::ostream& log) {
  const auto model = load_shape_model(config, cmd);
  const TrainConfig tc = train_config(config);
  const NetConfig nc = net_config(config, tc.num_shape_params);
  const Dataset train_set = load_split(config, cmd, Split::train, nc.input_size, nc.in_channels);
  const Dataset test_set = load_split(config, cmd, Split::test, nc.input_size, nc.in_channels);
  const auto p_values = get<std::vector<int>>(config, "/sweep/params");
  const auto rows = parameter_sweep(train_set, test_set, model, p_values, tc, nc);
  write_file_atomic(out_file(cmd, "sweep.csv"), sweep_csv(rows));
  for (const auto& r : rows) {
    log << "p=" << r.num_params << " " << (r.ok ? "ok" : "failed") << " mean " << r.mean_error;
    if (!r.ok) log << " (" << r.failure << ")";
    log << "\n";
  }
}

void run_benchmark(const Command& cmd, const json& config, std::ostream& log) {
  const auto p_values = get<std::vector<int>>(config, "/benchmark/params");
  if (p_values.empty()) throw Error(ErrorCode::dimension, "benchmark needs at least one p value");
  std::shared_ptr<const ShapeModel> model;
  if (!config.at(json::json_pointer("/paths/shape_model")).is_null()) {
    model = load_shape_model(config, cmd);
  } else {
    // Random point-distribution model large enough for every requested p.
    SynthSpec spec;
    spec.num_samples = 0;
    spec.num_landmarks = get<int>(config, "/benchmark/num_landmarks");
    spec.num_modes = *std::max_element(p_values.begin(), p_values.end());
    spec.mode_amplitudes = linear_amplitudes(spec.num_modes, 12.0, 1.0);
    spec.seed = get<std::uint64_t>(config, "/seed");
    model = std::make_shared<const ShapeModel>(generate_dataset(spec, false).true_model());
  }
  json report = {{"hardware", hardware_descriptor()}, {"results", json::array()}};
  double reference_fps = 0.0;
  for (int p : p_values) {
    NetConfig nc;
    nc.input_size = get<int>(config, "/benchmark/input_size");
    nc.in_channels = get<int>(config, "/benchmark/channels");
    nc.plan = net_config_from_json({{"plan", get<std::string>(config, "/benchmark/plan")}}).plan;
    nc.num_shape_params = p;
    const Network net(nc, get<std::uint64_t>(config, "/seed"));
    const PcaLayer layer(model, p);
    const BenchmarkResult r = benchmark_fps(net, layer, get<int>(config, "/benchmark/batch_size"),
                                            get<int>(config, "/benchmark/iterations"),
                                            get<int>(config, "/benchmark/warmup"));
    if (reference_fps == 0.0) reference_fps = r.fps;
    report["results"].push_back({{"num_params", p},
                                 {"fps", r.fps},
                                 {"latency_ms", r.latency_ms},
                                 {"batch_size", r.batch_size},
                                 {"iterations", r.iterations},
                                 {"fps_ratio_to_first", reference_fps / r.fps}});
    log << "p=" << p << " fps " << r.fps << " latency " << r.latency_ms << " ms\n";
  }
  write_file_atomic(out_file(cmd, "benchmark.json"), report.dump(2) + "\n");
}

Command& add_command(Application& a, const std::string& name, const std::string& description,
                     void (*fn)(const Command&, const json&, std::ostream&)) {
  auto cmd = std::make_unique<Command>();
  cmd->name = name;
  cmd->app = a.app->add_subcommand(name, description);
  Command* raw = cmd.get();
  cmd->run = [raw, fn](const json& config, std::ostream& log) { fn(*raw, config, log); };
  a.commands.push_back(std::move(cmd));
  return *raw;
}

}  // namespace

std::unique_ptr<Application> make_application() {
  auto a = std::make_unique<Application>();
  a->app = std::make_unique<CLI::App>("Landmark regression with an embedded PCA shape model", "shapenet");
  a->app->require_subcommand(1);

  {
    Command& c = add_command(*a, "synth", "Generate a synthetic landmark dataset", run_synth);
    Builder b(*a, c);
    b.common();
    b.option<int>("--num-samples", "/synth/num_samples", "Number of samples");
    b.option<int>("--num-landmarks", "/synth/num_landmarks", "Landmarks per shape");
    b.option<int>("--num-modes", "/synth/num_modes", "Number of generative shape modes");
    b.option<std::vector<double>>("--amplitudes", "/synth/amplitudes",
                                  "Per-mode standard deviations in pixels (default: linear 12..6)")
        ->delimiter(',');
    b.option<double>("--noise-sigma", "/synth/noise_sigma", "Landmark noise standard deviation in pixels");
    b.option<double>("--pixel-noise", "/synth/pixel_noise", "Image noise standard deviation");
    b.option<int>("--canvas-size", "/synth/canvas_size", "Image side length in pixels");
    b.option<int>("--image-channels", "/synth/channels", "Rendered image channels (1 or 3)");
    b.option<double>("--test-fraction", "/synth/test_fraction", "Share of samples tagged test");
  }
  {
    Command& c = add_command(*a, "build-shapes", "Align training landmarks and fit the shape model",
                             run_build_shapes);
    Builder b(*a, c);
    b.common();
    b.manifest();
    b.option<std::string>("--shape-model", "/paths/shape_model",
                          "Output shape-model file (default: <out>/shape_model.json)");
    b.option<int>("--num-params", "/shape_model/p_max", "Number of stored shape components (p_max)");
    b.option<std::string>("--alignment", "/shape_model/alignment", "anchors, procrustes or none")
        ->check(CLI::IsMember({"anchors", "procrustes", "none"}));
    b.option<std::string>("--anchors", "/shape_model/anchors",
                          "Anchor groups: synthetic, ibug68 or 'i,j,..;k,l,..'");
    b.crop();
  }
  {
    Command& c = add_command(*a, "train", "Train the network end to end through the PCA layer", run_train);
    Builder b(*a, c);
    b.common();
    b.manifest();
    b.shape_model();
    b.option<std::string>("--checkpoint", "/paths/checkpoint",
                          "Output path of the best checkpoint (default: <out>/checkpoint.best.bin)");
    b.option<int>("--num-params", "/train/num_shape_params", "Shape parameters predicted by the network");
    b.option<int>("--checkpoint-every", "/train/checkpoint_every",
                  "Write <out>/checkpoints/epoch_N.ckpt every N epochs (0 disables)");
    b.training();
    b.crop();
  }
  {
    Command& c = add_command(*a, "evaluate", "Score a checkpoint on a manifest split", run_evaluate);
    Builder b(*a, c);
    b.common();
    b.manifest();
    b.shape_model();
    b.checkpoint();
    b.option<std::string>("--split", "/data/split", "Manifest split to evaluate: train or test");
    b.option<int>("--batch-size", "/eval/batch_size", "Inference batch size");
    b.option<int>("--bins", "/eval/histogram_bins", "Error histogram bins");
    b.option<double>("--margin", "/data/margin", "Crop margin as a fraction of the landmark box extent");
  }
  {
    Command& c = add_command(*a, "predict", "Predict landmarks in original image coordinates", run_predict);
    Builder b(*a, c);
    b.common();
    b.manifest();
    b.shape_model();
    b.checkpoint();
    b.option<std::string>("--split", "/data/split", "Manifest split to predict: train or test");
    b.option<int>("--batch-size", "/eval/batch_size", "Inference batch size");
    b.option<double>("--margin", "/data/margin", "Crop margin as a fraction of the landmark box extent");
  }
  {
    Command& c = add_command(*a, "sweep", "Train and evaluate one model per number of shape parameters",
                             run_sweep);
    Builder b(*a, c);
    b.common();
    b.manifest();
    b.shape_model();
    b.list("--num-params,--params", "/sweep/params", "Comma-separated shape-parameter counts");
    b.training();
    b.crop();
  }
  {
    Command& c = add_command(*a, "benchmark", "Measure inference throughput per number of shape parameters",
                             run_benchmark);
    Builder b(*a, c);
    b.common();
    b.option<std::string>("--shape-model", "/paths/shape_model",
                          "Shape-model file (default: random model with --num-landmarks points)");
    b.list("--num-params,--params", "/benchmark/params", "Comma-separated shape-parameter counts");
    b.option<int>("--batch-size", "/benchmark/batch_size", "Images per forward pass");
    b.option<int>("--iterations", "/benchmark/iterations", "Timed iterations");
    b.option<int>("--warmup", "/benchmark/warmup", "Untimed warm-up iterations");
    b.option<std::string>("--plan", "/benchmark/plan", "Network plan: full or compact[:base_channels]");
    b.option<int>("--input-size", "/benchmark/input_size", "Input side length in pixels");
    b.option<int>("--channels", "/benchmark/channels", "Input channels");
    b.option<int>("--num-landmarks", "/benchmark/num_landmarks", "Landmarks of the random model");
  }
  return a;
}

json resolve_config(const Command& command) {
  json config = default_config();
  if (command.config_path && !command.config_path->empty()) {
    json file;
    try {
      file = json::parse(read_file(*command.config_path));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::parse, *command.config_path + ": " + e.what());
    }
    if (!file.is_object()) throw Error(ErrorCode::parse, *command.config_path + ": expected an object");
    config.merge_patch(file);
  }
  for (const Binding& b : command.bindings) {
    if (b.option->count() > 0) config[b.key] = b.value();
  }
  return config;
}

namespace {

void report_error(std::ostream& err, const std::string& code, int exit_code, const std::string& message) {
  err << json{{"status", "error"}, {"code", code}, {"exit_code", exit_code}, {"message", message}}.dump()
      << "\n";
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  const auto application = make_application();
  CLI::App& app = *application->app;
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    // Subcommand-level help requests surface here as CallForHelp from the child.
    for (const auto& cmd : application->commands) {
      if (cmd->app->parsed() && std::string(e.get_name()) == "CallForHelp") {
        out << cmd->app->help();
        return 0;
      }
    }
    if (std::string(e.get_name()) == "CallForHelp") {
      out << app.help();
      return 0;
    }
    report_error(err, "usage", 1, e.what());
    return 1;
  }

  const Command* selected = nullptr;
  for (const auto& cmd : application->commands) {
    if (cmd->app->parsed()) selected = cmd.get();
  }
  if (selected == nullptr) {
    report_error(err, "usage", 1, "no subcommand given");
    return 1;
  }

  try {
    const json config = resolve_config(*selected);
    const json snapshot = {{"subcommand", selected->name},
                           {"config_file", *selected->config_path},
                           {"seed", config.at("seed")},
                           {"out", *selected->out_dir},
                           {"config", config}};
    write_file_atomic(out_file(*selected, selected->name + ".config.json"), snapshot.dump(2) + "\n");
    selected->run(config, out);
    return 0;
  } catch (const Error& e) {
    const int code = exit_code_for(e.code());
    report_error(err, code_name(e.code()), code, e.what());
    return code;
  } catch (const json::exception& e) {
    report_error(err, "parse", 2, std::string("configuration: ") + e.what());
    return 2;
  } catch (const std::exception& e) {
    report_error(err, "runtime", 3, e.what());
    return 3;
  }
}

}  // namespace shapenet::cli
