#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "doctest.h"
#include "xltal/checkpoint.hpp"
#include "xltal/cli.hpp"

using namespace xltal;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("xltal_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

int run(const std::string& args) {
  const std::string cmd = std::string(XLTAL_BIN) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* kSpec = R"({"num_videos": 3, "feature_len": 32, "channels": 4, "num_classes": 2,
                        "min_duration": 4, "max_duration": 8, "seed": 3})";

RunConfig tiny_run(Index epochs) {
  const std::vector<std::string> sets{"model.input_len=32", "model.input_dim=4", "model.embed_dim=8",
                                      "model.num_heads=2",  "model.fpn_levels=2", "model.segment_len=16",
                                      "model.num_classes=2", "model.encoder_mode=recurrence",
                                      "train.epochs=" + std::to_string(epochs), "seed=5"};
  return load_run_config(std::nullopt, sets);
}

}  // namespace

TEST_CASE("run config overrides and strict keys") {
  const std::vector<std::string> sets{"model.encoder_mode=split", "train.learning_rate=0.01",
                                      "postprocess.hard_iou_threshold=0.6", "seed=9"};
  const RunConfig c = load_run_config(std::nullopt, sets);
  CHECK(c.model.encoder_mode == EncoderMode::kSplit);
  CHECK(c.train.learning_rate == 0.01);
  CHECK(c.postprocess.hard_iou_threshold.value() == 0.6);
  CHECK(c.model.seed == 9);
  CHECK(c.train.seed == 9);
  CHECK(c.to_json().at("model").at("encoder_mode") == "split");

  const std::vector<std::string> typo{"model.embed_size=3"};
  CHECK_THROWS_AS(load_run_config(std::nullopt, typo), UserError);
  const std::vector<std::string> section{"model=3"};
  CHECK_THROWS_AS(load_run_config(std::nullopt, section), UserError);
  const std::vector<std::string> invalid{"model.num_heads=3"};
  CHECK_THROWS_AS(load_run_config(std::nullopt, invalid), UserError);

  const fs::path dir = scratch("config");
  write_text(dir / "c.json", R"({"model": {"fpn_levels": 4}, "extra": 1})");
  CHECK_THROWS_AS(load_run_config(dir / "c.json", {}), UserError);
  write_text(dir / "c.json", R"({"model": {"fpn_levels": 4}, "train": {"regression_ranges": [[0, 8], [4, null]]}})");
  const RunConfig f = load_run_config(dir / "c.json", {});
  CHECK(f.model.fpn_levels == 4);
  REQUIRE(f.train.regression_ranges.size() == 2);
  CHECK(std::isinf(f.train.regression_ranges[1].hi));
  // The resolved config round trips.
  CHECK(run_config_from_tree(f.to_json()).to_json() == f.to_json());
}

TEST_CASE("synth") {
  const fs::path dir = scratch("synth");
  write_text(dir / "spec.json", kSpec);
  cmd_synth(dir / "spec.json", dir / "a");
  cmd_synth(dir / "spec.json", dir / "b");
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    if (e.path().extension() == ".mlft") {
      ++files;
      CHECK(slurp(e.path()) == slurp(dir / "b" / e.path().filename()));
    }
  }
  CHECK(files == 3);
  CHECK(slurp(dir / "a" / "annotations.json") == slurp(dir / "b" / "annotations.json"));

  write_text(dir / "bad.json", R"({"num_videos": 0})");
  CHECK_THROWS(cmd_synth(dir / "bad.json", dir / "c"));
  write_text(dir / "bad.json", R"({"videos": 2})");
  CHECK_THROWS_AS(cmd_synth(dir / "bad.json", dir / "c"), UserError);
}

TEST_CASE("train, predict, eval, plot") {
  const fs::path dir = scratch("pipeline");
  write_text(dir / "spec.json", kSpec);
  cmd_synth(dir / "spec.json", dir / "data");
  std::ostringstream log;
  const RunConfig cfg = tiny_run(2);
  const auto out = cmd_train(cfg, dir / "data", dir / "a.ckpt", std::nullopt, log);
  CHECK(out.logs.size() == 2);
  CHECK(log.str().find("resolved config") != std::string::npos);
  CHECK(log.str().find("l_cls") != std::string::npos);
  CHECK(fs::exists(dir / "a.ckpt.loss.jsonl"));
  cmd_train(cfg, dir / "data", dir / "b.ckpt", dir / "b.jsonl", log);
  CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));

  cmd_predict(cfg, dir / "a.ckpt", dir / "data", dir / "p1.json", log);
  cmd_predict(cfg, dir / "a.ckpt", dir / "data", dir / "p2.json", log);
  CHECK(slurp(dir / "p1.json") == slurp(dir / "p2.json"));
  const PredictionMap preds = read_predictions(dir / "p1.json");
  CHECK(preds.size() == 3);
  for (const auto& [id, list] : preds) CHECK(list.size() <= 1000);

  // A model setting that contradicts the checkpoint is refused.
  const std::vector<std::string> clash{"model.embed_dim=16"};
  CHECK_THROWS_AS(cmd_predict(load_run_config(std::nullopt, clash), dir / "a.ckpt", dir / "data",
                              dir / "p3.json", log),
                  UserError);

  // Ground truth as predictions scores 100 everywhere.
  const AnnotationFile ann = read_annotations(dir / "data" / "annotations.json");
  PredictionMap perfect;
  for (const auto& v : ann.videos) {
    for (const auto& i : v.instances) perfect[v.video_id].push_back({v.video_id, i.start_s, i.end_s, i.label, 1.0});
  }
  perfect["stranger"] = {Detection{"stranger", 0.0, 1.0, 0, 0.5}};
  write_predictions(dir / "perfect.json", perfect);
  std::ostringstream warn;
  const json report = cmd_eval(cfg, dir / "perfect.json", dir / "data" / "annotations.json", warn).to_json();
  for (const auto& [key, value] : report.items()) CHECK(value == 100.0);
  CHECK(warn.str().find("stranger") != std::string::npos);

  write_predictions(dir / "empty.json", {});
  const json zero = cmd_eval(cfg, dir / "empty.json", dir / "data" / "annotations.json", warn).to_json();
  for (const auto& [key, value] : zero.items()) CHECK(value == 0.0);

  const std::string vid = ann.videos.front().video_id;
  cmd_plot(dir / "p1.json", dir / "data" / "annotations.json", vid, dir / "a.svg");
  cmd_plot(dir / "p1.json", dir / "data" / "annotations.json", vid, dir / "b.svg");
  CHECK(slurp(dir / "a.svg") == slurp(dir / "b.svg"));
  CHECK(slurp(dir / "a.svg").find("<svg") == 0);
  CHECK_THROWS_AS(cmd_plot(dir / "p1.json", dir / "data" / "annotations.json", "nope", dir / "c.svg"), UserError);

  // Empty manifest: empty predictions object.
  fs::create_directories(dir / "none");
  write_manifest(dir / "none" / "manifest.json", {});
  cmd_predict(cfg, dir / "a.ckpt", dir / "none", dir / "none.json", log);
  CHECK(json::parse(slurp(dir / "none.json")) == json::object());
}

TEST_CASE("timeline svg") {
  const std::vector<GroundTruth> gts{{"v", 0.0, 10.0, 0}, {"v", 20.0, 40.0, 1}};
  const std::string gt_only = render_timeline_svg("v", gts, {});
  CHECK(gt_only.find("ground truth") != std::string::npos);
  CHECK(gt_only.find("predictions") == std::string::npos);
  // 960 wide, 110 left and 20 right margin: 830 px for 40 s.
  CHECK(gt_only.find("width=\"207.50\"") != std::string::npos);
  CHECK(gt_only.find("width=\"415.00\"") != std::string::npos);
  const std::vector<Detection> dets{{"v", 5.0, 15.0, 1, 0.8}};
  const std::string both = render_timeline_svg("v", gts, dets);
  CHECK(both.find("predictions") != std::string::npos);
  CHECK(both.find("1 0.80") != std::string::npos);
}

TEST_CASE("exit codes") {
  const fs::path dir = scratch("exit");
  CHECK(run("") == kExitUser);
  CHECK(run("bogus") == kExitUser);
  CHECK(run("verify") == kExitOk);
  CHECK(run("verify --corrupt-gradient") == kExitVerify);
  write_text(dir / "bad.json", R"({"num_videos": -1})");
  CHECK(run("synth " + (dir / "bad.json").string() + " " + (dir / "out").string()) == kExitUser);

  write_text(dir / "spec.json", kSpec);
  REQUIRE(run("synth " + (dir / "spec.json").string() + " " + (dir / "data").string()) == kExitOk);
  const std::string model =
      " --set model.input_len=32 model.input_dim=4 model.embed_dim=8 model.num_heads=2 model.fpn_levels=2"
      " model.num_classes=2 train.epochs=3";
  CHECK(run("train " + (dir / "data").string() + " " + (dir / "a.ckpt").string() + model +
            " train.learning_rate=1e305 train.weight_decay=0") == kExitNumeric);
  CHECK(run("train " + (dir / "data").string() + " " + (dir / "a.ckpt").string() + model +
            " model.input_dim=5") == kExitUser);
  CHECK(run("predict " + (dir / "missing.ckpt").string() + " " + (dir / "data").string() + " " +
            (dir / "p.json").string()) == kExitUser);
}
