#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "xltal/interval.hpp"
#include "xltal/postprocess.hpp"

namespace xltal {

struct GroundTruth {
  std::string video_id;
  double start_s = 0.0;
  double end_s = 0.0;
  int label = 0;

  Interval<double> interval() const { return {start_s, end_s}; }
};

std::vector<GroundTruth> ground_truths(const AnnotationSet& annotations);

/// Greedy matching in score order: a detection is a true positive when some
/// unmatched ground truth of the same video reaches `threshold`; the best
/// tIoU among those is taken. Returns one flag per detection in `dets` order
/// after a stable sort by (score desc, start asc).
std::vector<bool> greedy_match(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                               double threshold);

/// AP of one class pooled over videos, all-point interpolation.
double average_precision(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                         double threshold);

struct MeanApResult {
  std::vector<double> thresholds;
  std::vector<double> map;                     // per threshold
  std::vector<std::vector<double>> class_ap;   // [threshold][class]
  std::vector<bool> class_has_gt;
  double average = 0.0;
};

std::vector<double> default_thresholds();  // 0.1 ... 0.5

/// mAP at each threshold over classes that have ground truth.
MeanApResult mean_ap(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                     int num_classes, std::span<const double> thresholds);

/// Where the k*G detection budget applies: each (video, class) group, or
/// each class pooled over videos.
enum class RecallPooling { kPerGroup, kPerClass };

RecallPooling recall_pooling_from_string(const std::string& name);
std::string to_string(RecallPooling pooling);

/// Within each group with G ground truths, keep the k*G best detections;
/// recall is matched ground truths over all ground truths.
double recall_at_kx(std::span<const Detection> dets, std::span<const GroundTruth> gts, double k = 1.0,
                    double threshold = 0.5, RecallPooling pooling = RecallPooling::kPerGroup);

struct OracleMatch {
  Index true_positives = 0;
  double total_tiou = 0.0;
};

/// Exhaustive search over injective detection -> ground-truth assignments
/// (at most 5 detections and 3 ground truths).
OracleMatch oracle_match(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                         double threshold);

struct EvalReport {
  std::vector<double> thresholds;
  std::vector<double> map;
  double average_map = 0.0;
  double recall_1x = 0.0;
  std::vector<std::vector<double>> class_ap;

  double map_at(double threshold) const;
  /// Table-style summary, values x100 rounded to 2 decimals.
  nlohmann::json to_json() const;
};

EvalReport evaluate(std::span<const Detection> dets, std::span<const GroundTruth> gts, int num_classes,
                    RecallPooling pooling = RecallPooling::kPerGroup);

}  // namespace xltal
