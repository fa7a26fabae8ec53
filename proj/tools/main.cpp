// xltal: synthesize data, train, predict, evaluate, verify, plot.

#include <iostream>

#include "CLI11.hpp"
#include "xltal/checkpoint.hpp"
#include "xltal/cli.hpp"

namespace fs = std::filesystem;
using namespace xltal;

int main(int argc, char** argv) {
  CLI::App app{"Temporal action localization with segment recurrence and two-stream attention"};
  app.require_subcommand(1);

  std::optional<std::string> config_file;
  std::vector<std::string> overrides;
  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_file, "JSON run config");
    cmd->add_option("--set", overrides, "override, e.g. --set model.encoder_mode=recurrence")->take_all();
  };

  std::string spec_file, out_dir;
  auto* synth = app.add_subcommand("synth", "write a synthetic planted-action dataset");
  synth->add_option("spec", spec_file, "synthetic spec JSON")->required();
  synth->add_option("out_dir", out_dir, "output directory")->required();

  std::string data_dir, checkpoint, loss_log;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  add_config(train_cmd);
  train_cmd->add_option("data_dir", data_dir, "directory with manifest.json")->required();
  train_cmd->add_option("checkpoint", checkpoint, "output checkpoint")->required();
  train_cmd->add_option("--loss-log", loss_log, "JSON-lines loss log (default <checkpoint>.loss.jsonl)");

  std::string out_json;
  auto* predict = app.add_subcommand("predict", "run inference and write predictions JSON");
  add_config(predict);
  predict->add_option("checkpoint", checkpoint, "trained checkpoint")->required();
  predict->add_option("data_dir", data_dir, "directory with manifest.json")->required();
  predict->add_option("out_json", out_json, "predictions file")->required();

  std::string predictions, annotations;
  auto* eval = app.add_subcommand("eval", "score predictions against annotations");
  add_config(eval);
  eval->add_option("predictions", predictions, "predictions JSON")->required();
  eval->add_option("annotations", annotations, "annotations JSON")->required();

  VerifyOptions verify_options;
  auto* verify = app.add_subcommand("verify", "run the built-in verification suites");
  verify->add_option("--level", verify_options.level, "quick or full")->capture_default_str();
  verify->add_option("--seed", verify_options.seed, "seed for random instances")->capture_default_str();
  verify->add_flag("--corrupt-gradient", verify_options.corrupt_gradient,
                   "test hook: perturb analytic gradients (must make verify fail)");

  std::string video_id, out_svg;
  PlotOptions plot_options;
  auto* plot = app.add_subcommand("plot", "render a GT / prediction timeline as SVG");
  plot->add_option("predictions", predictions, "predictions JSON")->required();
  plot->add_option("annotations", annotations, "annotations JSON")->required();
  plot->add_option("video_id", video_id, "video to draw")->required();
  plot->add_option("out_svg", out_svg, "output SVG")->required();
  plot->add_option("--max-predictions", plot_options.max_predictions, "prediction rows")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUser;
  }

  auto run_config = [&] {
    std::optional<fs::path> file;
    if (config_file) file = *config_file;
    return load_run_config(file, overrides);
  };

  try {
    if (*synth) {
      cmd_synth(spec_file, out_dir);
    } else if (*train_cmd) {
      std::optional<fs::path> log_path;
      if (!loss_log.empty()) log_path = loss_log;
      cmd_train(run_config(), data_dir, checkpoint, log_path, std::cerr);
    } else if (*predict) {
      cmd_predict(run_config(), checkpoint, data_dir, out_json, std::cerr);
    } else if (*eval) {
      std::cout << cmd_eval(run_config(), predictions, annotations, std::cerr).to_json().dump(2) << "\n";
    } else if (*verify) {
      if (!cmd_verify(verify_options, std::cout)) return kExitVerify;
    } else if (*plot) {
      cmd_plot(predictions, annotations, video_id, out_svg, plot_options);
    }
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const VerificationFailure& e) {
    std::cerr << "verification failure: " << e.what() << "\n";
    return kExitVerify;
  } catch (const std::exception& e) {
    // UserError, DataError, CheckpointError, ShapeError and friends.
    std::cerr << "error: " << e.what() << "\n";
    return kExitUser;
  }
  return kExitOk;
}
