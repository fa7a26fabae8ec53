#pragma once

#include <functional>
#include <limits>
#include <optional>

#include "xltal/data.hpp"
#include "xltal/model.hpp"

namespace xltal {

/// Accepted max-offset range of a pyramid level, in level-0 index units.
struct RegressionRange {
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
};

/// Level l accepts [2^(l+1), 2^(l+3)); level 0 is open below and the last
/// level open above.
std::vector<RegressionRange> default_regression_ranges(Index levels);

struct LevelTargets {
  Mat classes;                   // n x K, 1 where the location belongs to a class
  Mat offsets;                   // n x 2 (start, end) in level-stride units
  std::vector<Index> positives;  // locations with at least one class
};

struct AssignedTargets {
  std::vector<LevelTargets> levels;
  Index num_positive = 0;
};

/// Location i of level l sits at g = i * 2^l. It is positive for an instance
/// when g falls inside the instance and its larger offset is in the level's
/// range. Overlapping matches take regression targets from the shortest one.
AssignedTargets assign_targets(const AnnotationSet& annotations, const PyramidGeometry& geometry,
                               const FeatureSequence& seq, int num_classes,
                               std::span<const RegressionRange> ranges = {});

/// Binary focal loss on one logit; `target` is 0 or 1.
double focal_loss(double logit, double target, double alpha, double gamma);
/// 1 - IoU of the intervals [-pred_b, pred_e] and [-target_b, target_e].
double iou_loss(double pred_b, double pred_e, double target_b, double target_e);

/// Sum of focal_loss over all entries, differentiable w.r.t. logits.
Array focal_loss_sum(const Array& logits, const Mat& targets, double alpha, double gamma);
/// Sum of iou_loss over the listed rows, differentiable w.r.t. offsets.
Array iou_loss_sum(const Array& offsets, const Mat& targets, std::span<const Index> rows);

struct LossTerms {
  Array total;
  double cls = 0.0;
  double reg = 0.0;
  Index num_positive = 0;
};

/// Focal loss over every location and class plus IoU loss over positives,
/// both divided by max(positive count, 1).
LossTerms total_loss(const RawPredictions& raw, const AssignedTargets& targets, double alpha = 0.25,
                     double gamma = 2.0);

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.1;
  Index epochs = 15;
  Index batch_size = 1;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double warmup_fraction = 0.05;
  double clip_norm = 1.0;
  /// Empty means default_regression_ranges.
  std::vector<RegressionRange> regression_ranges;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochLog {
  Index epoch = 0;
  double l_cls = 0.0;
  double l_reg = 0.0;
  double total = 0.0;
  double wall_ms = 0.0;
};

/// Decoupled-weight-decay Adam. Parameters flagged as non-decaying (biases,
/// norms, position tables) skip the decay term.
class AdamW {
 public:
  AdamW(const Parameters& params, const TrainConfig& config);

  /// Clips the global gradient norm and applies one update with the given
  /// learning rate. Returns the pre-clip norm.
  double step(Parameters& params, const Gradients& grads, double learning_rate);

 private:
  TrainConfig config_;
  std::vector<Mat> m_, v_;
  Index t_ = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// One video per step, videos shuffled each epoch. Sequences must already be
/// at the model's input length.
std::vector<EpochLog> train(Model& model, const std::vector<VideoSample>& videos,
                            const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace xltal
