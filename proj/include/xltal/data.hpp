#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "xltal/numerics.hpp"

namespace xltal {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Clip features of one video, time-major (T_f x C).
///
/// Feature i summarizes frames [i * stride_frames, i * stride_frames + window)
/// and is stamped at the window centre. stride_frames may become fractional
/// after resampling.
struct FeatureSequence {
  std::string video_id;
  Mat features;
  double fps = 30.0;
  double window = 32.0;
  double stride_frames = 16.0;

  Index length() const { return features.rows(); }
  Index channels() const { return features.cols(); }
};

struct ActionInstance {
  double start_s = 0.0;
  double end_s = 0.0;
  int label = 0;
};

struct AnnotationSet {
  std::string video_id;
  std::vector<ActionInstance> instances;
  int num_classes = 0;
};

struct VideoSample {
  FeatureSequence sequence;
  AnnotationSet annotations;
};

struct Dataset {
  std::vector<VideoSample> videos;
  std::vector<std::string> warnings;
};

double index_to_time(const FeatureSequence& seq, double index);
double time_to_index(const FeatureSequence& seq, double t_seconds);
/// True when `index` lies outside [0, T_f - 1].
bool is_extrapolated(const FeatureSequence& seq, double index);

/// Stacks channels of two sequences sharing id and timing.
FeatureSequence concat_channelwise(const FeatureSequence& a, const FeatureSequence& b);

/// Linear interpolation along time; the first and last timestamps are kept.
FeatureSequence resize_sequence(const FeatureSequence& seq, Index target_len);

// ---- on-disk formats ------------------------------------------------------

/// 16-byte header ("MLFT", u32 version = 1, u32 T_f, u32 C) followed by
/// T_f * C little-endian float32 values, time-major.
void write_feature_file(const std::filesystem::path& path, const Mat& features);
Mat read_feature_file(const std::filesystem::path& path);

struct ManifestEntry {
  std::string video_id;
  std::string feature_file;
  double fps = 30.0;
  double window = 32.0;
  double stride_frames = 16.0;
  Index length = 0;
  Index channels = 0;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

struct AnnotationFile {
  int num_classes = 0;
  std::vector<AnnotationSet> videos;

  const AnnotationSet* find(const std::string& video_id) const;
};

AnnotationFile read_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path, const AnnotationFile& file);

/// Loads every manifest entry with its annotations (an empty set when the
/// annotation file has none for it). Instances reaching outside the feature
/// span are clipped and reported in Dataset::warnings.
Dataset load_dataset(const std::filesystem::path& manifest_path,
                     const std::filesystem::path& annotations_path);
/// Uses `annotations.json` next to the manifest when it exists.
Dataset load_dataset(const std::filesystem::path& manifest_path);

// ---- synthetic data -------------------------------------------------------

struct SyntheticSpec {
  Index num_videos = 10;
  Index feature_len = 128;
  Index channels = 16;
  int num_classes = 3;
  Index min_instances = 1;
  Index max_instances = 3;
  /// Durations in feature steps.
  Index min_duration = 8;
  Index max_duration = 24;
  double snr = 4.0;
  double fps = 30.0;
  double window = 32.0;
  double stride_frames = 16.0;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Unit Gaussian noise with a class-specific unit direction, scaled by snr,
/// added over each planted interval.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// Writes manifest.json, annotations.json and one feature file per video.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);

}  // namespace xltal
