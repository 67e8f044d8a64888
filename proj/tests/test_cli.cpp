// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"
#include "shapenet/data_pipeline.hpp"
#include "shapenet/hexfloat.hpp"
#include "shapenet/shape_model.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <filesystem>
#include <sstream>

using namespace shapenet;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "shapenet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

json snapshot(const fs::path& dir, const std::string& sub) {
  return json::parse(read_file((dir / (sub + ".config.json")).string()));
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("every option of every subcommand is documented") {
    const auto application = cli::make_application();
    REQUIRE(application->commands.size() == 7);
    std::vector<std::string> names;
    for (const auto& cmd : application->commands) {
      names.push_back(cmd->name);
      const std::string help = cmd->app->help();
      for (const CLI::Option* opt : cmd->app->get_options()) {
        const std::string desc = opt->get_description();
        CHECK_MESSAGE(!desc.empty(), cmd->name, " ", opt->get_name());
        CHECK_MESSAGE(help.find(opt->get_name()) != std::string::npos, cmd->name, " ", opt->get_name());
        // Help wraps long lines, so compare the first words.
        CHECK_MESSAGE(help.find(desc.substr(0, std::min<std::size_t>(desc.size(), 20))) != std::string::npos,
                      cmd->name, " ", opt->get_name());
      }
      for (const char* common : {"--config", "--out", "--seed"}) {
        CHECK_MESSAGE(cmd->app->get_option_no_throw(common) != nullptr, cmd->name, " ", common);
      }
    }
    CHECK(names == std::vector<std::string>{"synth", "build-shapes", "train", "evaluate", "predict", "sweep",
                                            "benchmark"});
    for (const char* sub : {"build-shapes", "train", "evaluate", "predict", "sweep"}) {
      const auto& cmd = *std::find_if(application->commands.begin(), application->commands.end(),
                                      [&](const auto& c) { return c->name == sub; });
      CHECK(cmd->app->get_option_no_throw("--manifest") != nullptr);
      CHECK(cmd->app->get_option_no_throw("--shape-model") != nullptr);
      const bool has_params_or_checkpoint = cmd->app->get_option_no_throw("--num-params") != nullptr ||
                                            cmd->app->get_option_no_throw("--checkpoint") != nullptr;
      CHECK(has_params_or_checkpoint);
    }
  }

  TEST_CASE("help and usage exit codes") {
    CHECK(invoke({"--help"}).code == 0);
    const Outcome h = invoke({"train", "--help"});
    CHECK(h.code == 0);
    CHECK(h.out.find("--learning-rate") != std::string::npos);
    const Outcome none = invoke({});
    CHECK(none.code == 1);
    CHECK(json::parse(none.err)["code"] == "usage");
    CHECK(invoke({"synth", "--no-such-flag"}).code == 1);
    CHECK(invoke({"frobnicate"}).code == 1);
    CHECK(invoke({"synth", "--num-samples", "many"}).code == 1);
    CHECK(invoke({"synth", "--config", "/nonexistent/config.json"}).code == 1);
  }

  TEST_CASE("precedence: flags over config file over defaults") {
    const auto dir = testing::temp_dir("cli_precedence");
    write_file_atomic((dir / "cfg.json").string(),
                      R"({"seed": 5, "synth": {"num_samples": 7, "canvas_size": 120}})");
    const Outcome o = invoke({"synth", "--config", (dir / "cfg.json").string(), "--out", (dir / "run").string(),
                              "--num-samples", "3", "--pixel-noise", "0"});
    REQUIRE_MESSAGE(o.code == 0, o.err);
    const json s = snapshot(dir / "run", "synth");
    CHECK(s["subcommand"] == "synth");
    CHECK(s["seed"] == 5);
    CHECK(s["config"]["synth"]["num_samples"] == 3);       // flag
    CHECK(s["config"]["synth"]["canvas_size"] == 120);      // file
    CHECK(s["config"]["synth"]["num_landmarks"] == 16);    // default
    CHECK(s["config"]["synth"]["pixel_noise"] == 0.0);
    CHECK(read_manifest((dir / "run" / "manifest.txt").string()).size() == 3);
    CHECK(read_image((dir / "run" / "images" / "sample_00000.png").string()).width == 120);

    const Outcome seeded = invoke({"synth", "--config", (dir / "cfg.json").string(), "--out",
                                   (dir / "run2").string(), "--seed", "9"});
    REQUIRE(seeded.code == 0);
    CHECK(snapshot(dir / "run2", "synth")["seed"] == 9);
  }

  TEST_CASE("snapshot is written before a failing run") {
    const auto dir = testing::temp_dir("cli_snapshot");
    const Outcome o = invoke({"build-shapes", "--out", dir.string(), "--manifest", (dir / "missing.txt").string()});
    CHECK(o.code == 2);
    CHECK(fs::exists(dir / "build-shapes.config.json"));
    const json err = json::parse(o.err);
    CHECK(err["status"] == "error");
    CHECK(err["exit_code"] == 2);
  }

  TEST_CASE("bad config values are data errors") {
    const auto dir = testing::temp_dir("cli_badcfg");
    write_file_atomic((dir / "cfg.json").string(), R"({"synth": {"num_samples": "lots"}})");
    CHECK(invoke({"synth", "--config", (dir / "cfg.json").string(), "--out", dir.string()}).code == 2);
    write_file_atomic((dir / "broken.json").string(), "{not json");
    CHECK(invoke({"synth", "--config", (dir / "broken.json").string(), "--out", dir.string()}).code == 2);
    CHECK(invoke({"synth", "--out", dir.string(), "--num-modes", "40"}).code == 2);
  }

  TEST_CASE("end-to-end pipeline") {
    const auto dir = testing::temp_dir("cli_pipeline");
    const std::string out = dir.string();
    write_file_atomic((dir / "cfg.json").string(),
                      R"({"net": {"plan": "compact:2"}, "train": {"epochs": 1, "batch_size": 8},
                          "shape_model": {"p_max": 6}, "data": {"crop_size": 64}})");
    const std::string cfg = (dir / "cfg.json").string();
    auto ok = [](const Outcome& o) {
      CHECK_MESSAGE(o.code == 0, o.err);
      return o.code == 0;
    };
    REQUIRE(ok(invoke({"synth", "--out", out, "--config", cfg, "--num-samples", "20", "--seed", "3"})));
    REQUIRE(ok(invoke({"build-shapes", "--out", out, "--config", cfg})));
    CHECK(load_model((dir / "shape_model.json").string()).p_max() == 6);
    REQUIRE(ok(invoke({"train", "--out", out, "--config", cfg, "--num-params", "4"})));
    for (const char* f : {"train_log.jsonl", "checkpoint.last.bin", "checkpoint.best.bin", "train.config.json"})
      CHECK(fs::exists(dir / f));
    REQUIRE(ok(invoke({"evaluate", "--out", out, "--config", cfg})));
    const json eval = json::parse(read_file((dir / "eval.json").string()));
    CHECK(eval["num_images"] == 2);
    CHECK(fs::exists(dir / "per_image_errors.csv"));
    CHECK(fs::exists(dir / "error_histogram.csv"));
    REQUIRE(ok(invoke({"predict", "--out", out, "--config", cfg})));
    const auto preds = parse_csv_landmarks(read_file((dir / "predictions.csv").string()));
    REQUIRE(preds.size() == 2);
    CHECK(preds[0].landmarks.size() == 16);
    CHECK(preds[0].source_id == "sample_00018");
    REQUIRE(ok(invoke({"sweep", "--out", out, "--config", cfg, "--num-params", "2,4"})));
    CHECK(read_file((dir / "sweep.csv").string()).find("\n4,ok,") != std::string::npos);
    REQUIRE(ok(invoke({"benchmark", "--out", out, "--plan", "compact:2", "--input-size", "64", "--channels", "1",
                       "--num-landmarks", "16", "--params", "2,4", "--iterations", "1", "--warmup", "0",
                       "--batch-size", "1"})));
    const json bench = json::parse(read_file((dir / "benchmark.json").string()));
    CHECK(bench.dump().find("fps") != std::string::npos);

    // Checkpoint against a different shape model.
    REQUIRE(ok(invoke({"build-shapes", "--out", (dir / "other").string(), "--config", cfg, "--manifest",
                       (dir / "manifest.txt").string(), "--num-params", "5"})));
    const Outcome mismatch = invoke({"evaluate", "--out", out, "--config", cfg, "--shape-model",
                                     (dir / "other" / "shape_model.json").string()});
    CHECK(mismatch.code == 2);
    CHECK(json::parse(mismatch.err)["code"] == "model_mismatch");

    // Re-running with the same seed reproduces the outputs byte for byte.
    const auto again = dir / "again";
    REQUIRE(ok(invoke({"synth", "--out", again.string(), "--config", cfg, "--num-samples", "20", "--seed", "3"})));
    CHECK(read_file((again / "landmarks.csv").string()) == read_file((dir / "landmarks.csv").string()));
    CHECK(read_file((again / "images" / "sample_00004.png").string()) ==
          read_file((dir / "images" / "sample_00004.png").string()));
    REQUIRE(ok(invoke({"build-shapes", "--out", again.string(), "--config", cfg})));
    REQUIRE(ok(invoke({"train", "--out", again.string(), "--config", cfg, "--num-params", "4"})));
    CHECK(read_file((again / "checkpoint.best.bin").string()) == read_file((dir / "checkpoint.best.bin").string()));
  }
}
