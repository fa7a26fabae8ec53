#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "xltal/eval.hpp"
#include "xltal/model.hpp"
#include "xltal/postprocess.hpp"
#include "xltal/training.hpp"

namespace xltal {

/// Bad input from the command line or files (exit code 1).
struct UserError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A verification suite failed (exit code 2).
struct VerificationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum ExitCode : int { kExitOk = 0, kExitUser = 1, kExitVerify = 2, kExitNumeric = 3 };

struct EvalConfig {
  RecallPooling recall_pooling = RecallPooling::kPerGroup;
};

/// Sections model / train / postprocess / eval plus a top-level seed that
/// feeds every random stream.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  PostprocessConfig postprocess;
  EvalConfig eval;
  std::uint64_t seed = 0;
  /// What the config file and overrides set, before defaults were merged in.
  nlohmann::json explicit_settings = nlohmann::json::object();

  nlohmann::json to_json() const;
};

/// Default tree with every accepted key.
nlohmann::json default_config_tree();

/// Applies "section.key=value". The value is parsed as JSON and falls back to
/// a plain string, so `--set model.encoder_mode=split` works unquoted.
void apply_override(nlohmann::json& tree, const std::string& assignment);

/// Converts a complete tree and validates every section.
RunConfig run_config_from_tree(const nlohmann::json& tree);

RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                          std::span<const std::string> overrides);

// ---- commands -------------------------------------------------------------

void cmd_synth(const std::filesystem::path& spec_file, const std::filesystem::path& out_dir);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

struct TrainOutputs {
  std::vector<EpochLog> logs;
};

/// Trains on `data_dir/manifest.json`, writes the checkpoint and a JSON-lines
/// loss log (`loss_log`, default `<checkpoint>.loss.jsonl`).
TrainOutputs cmd_train(const RunConfig& config, const std::filesystem::path& data_dir,
                       const std::filesystem::path& checkpoint,
                       const std::optional<std::filesystem::path>& loss_log, std::ostream& log);

/// Predictions for every video of the dataset, resized to the model input.
PredictionMap predict_dataset(const Model& model, const Dataset& data, const PostprocessConfig& config);

void cmd_predict(const RunConfig& config, const std::filesystem::path& checkpoint,
                 const std::filesystem::path& data_dir, const std::filesystem::path& out_json,
                 std::ostream& log);

EvalReport cmd_eval(const RunConfig& config, const std::filesystem::path& predictions,
                    const std::filesystem::path& annotations, std::ostream& log);

struct PlotOptions {
  Index max_predictions = 20;
  double width = 960.0;
};

/// Two lanes: ground truth and the best predictions, one row per
/// prediction. Only the ground-truth lane when there are no predictions.
std::string render_timeline_svg(const std::string& video_id, std::span<const GroundTruth> gts,
                                std::span<const Detection> dets, const PlotOptions& options = {});

void cmd_plot(const std::filesystem::path& predictions, const std::filesystem::path& annotations,
              const std::string& video_id, const std::filesystem::path& out_svg,
              const PlotOptions& options = {});

// ---- verification suites --------------------------------------------------

struct SuiteResult {
  std::string name;
  bool passed = false;
  /// Largest error the suite measured (relative for gradients, absolute
  /// otherwise); 0 when not applicable.
  double max_error = 0.0;
  std::vector<std::string> details;
};

struct VerifyOptions {
  /// "quick" checks primitives and a base-mode tiny model; "full" adds the
  /// split and recurrence tiny models and larger random batches.
  std::string level = "quick";
  /// Test hook: perturbs every analytic gradient before comparison.
  bool corrupt_gradient = false;
  std::uint64_t seed = 0;
};

SuiteResult gradient_suite(const VerifyOptions& options);
SuiteResult cache_equivalence_suite(const VerifyOptions& options);
SuiteResult mask_algebra_suite(const VerifyOptions& options);
SuiteResult nms_limit_suite(const VerifyOptions& options);
SuiteResult metric_oracle_suite(const VerifyOptions& options);

std::vector<SuiteResult> run_verification(const VerifyOptions& options);

/// Prints the report; returns true iff every suite passed.
bool cmd_verify(const VerifyOptions& options, std::ostream& out);

/// Tiny configurations shared by the verification suites and tests.
ModelConfig tiny_model_config(EncoderMode mode);
ModelConfig recurrence_probe_config(Index length, Index segment, Index layers);
/// Row i sees the whole previous segment and its own segment up to i.
AdditiveMask causal_with_memory_mask(Index length, Index segment);
/// Max relative FD error of total_loss w.r.t. every parameter of the tiny model.
double model_gradient_error(EncoderMode mode, std::uint64_t seed, bool corrupt);

/// Standard greedy hard NMS used as the sigma -> 0 reference.
std::vector<Detection> hard_nms_reference(std::vector<Detection> dets, double final_floor);

}  // namespace xltal
