#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xltal/data.hpp"
#include "xltal/interval.hpp"
#include "xltal/model.hpp"

namespace xltal {

struct Detection {
  std::string video_id;
  double start_s = 0.0;
  double end_s = 0.0;
  int label = 0;
  double score = 0.0;

  Interval<double> interval() const { return {start_s, end_s}; }
};

struct PostprocessConfig {
  double score_floor = 0.001;
  Index pre_nms_cap = 2000;
  double sigma = 0.5;
  /// When set, plain NMS: drop anything overlapping a kept box above this tIoU.
  std::optional<double> hard_iou_threshold;
  double final_floor = 1e-3;
  bool class_agnostic = true;
  Index top_k = 1000;

  void validate() const;
};

/// Turns every (level, location, class) with sigmoid score above
/// `score_floor` into a detection. The interval in level-0 units is
/// [i*2^l - b*2^l, i*2^l + e*2^l] clipped to [0, T-1]; empty intervals after
/// clipping are skipped. Keeps the `cap` best scores when cap > 0.
std::vector<Detection> decode(const RawPredictions& raw, const PyramidGeometry& geometry,
                              const FeatureSequence& seq, double score_floor, Index cap = 0);

/// Gaussian Soft-NMS: repeatedly take the best remaining detection and decay
/// the rest by exp(-tIoU^2 / sigma). sigma == 0 is the hard limit (any
/// overlap removes). Output is sorted by decayed score.
std::vector<Detection> soft_nms(std::vector<Detection> dets, double sigma,
                                std::optional<double> hard_iou_threshold = std::nullopt,
                                double final_floor = 1e-3, bool class_agnostic = true);

/// Best k by (score desc, start asc).
std::vector<Detection> top_k(std::vector<Detection> dets, Index k = 1000);

/// decode -> soft_nms -> top_k for one video.
std::vector<Detection> postprocess(const RawPredictions& raw, const PyramidGeometry& geometry,
                                   const FeatureSequence& seq, const PostprocessConfig& config);

/// {video_id: [{segment: [start_s, end_s], label, score}]}
using PredictionMap = std::map<std::string, std::vector<Detection>>;

void write_predictions(const std::filesystem::path& path, const PredictionMap& predictions);
PredictionMap read_predictions(const std::filesystem::path& path);

}  // namespace xltal
