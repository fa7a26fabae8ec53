#include <cstdio>

#include "xltal/data.hpp"

namespace xltal {

void SyntheticSpec::validate() const {
  if (num_videos < 1 || feature_len < 1 || channels < 1 || num_classes < 1) {
    throw DataError("synthetic spec: counts must be positive");
  }
  if (min_instances < 1 || max_instances < min_instances) {
    throw DataError("synthetic spec: instance range must satisfy 1 <= min <= max");
  }
  if (min_duration < 2 || max_duration < min_duration || max_duration > feature_len) {
    throw DataError("synthetic spec: duration range must satisfy 2 <= min <= max <= feature_len");
  }
  if (snr < 0.0 || fps <= 0.0 || stride_frames <= 0.0 || window < 0.0) {
    throw DataError("synthetic spec: snr, fps, stride and window must be non-negative");
  }
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng dir_rng(mix_seed(spec.seed, 0xd1ec7104ULL));
  Mat directions = dir_rng.normal_matrix(spec.num_classes, spec.channels);
  for (Index k = 0; k < directions.rows(); ++k) directions.row(k).normalize();

  Dataset data;
  for (Index v = 0; v < spec.num_videos; ++v) {
    Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(v)));
    char id[32];
    std::snprintf(id, sizeof id, "synth_%04ld", static_cast<long>(v));

    FeatureSequence seq;
    seq.video_id = id;
    seq.fps = spec.fps;
    seq.window = spec.window;
    seq.stride_frames = spec.stride_frames;
    seq.features = rng.normal_matrix(spec.feature_len, spec.channels);

    AnnotationSet ann{id, {}, spec.num_classes};
    const Index count = rng.uniform_int(spec.min_instances, spec.max_instances);
    for (Index m = 0; m < count; ++m) {
      const Index dur = rng.uniform_int(spec.min_duration, spec.max_duration);
      const Index start = rng.uniform_int(0, spec.feature_len - dur);
      const int label = static_cast<int>(rng.uniform_int(0, spec.num_classes - 1));
      for (Index t = start; t < start + dur; ++t) seq.features.row(t) += spec.snr * directions.row(label);
      ann.instances.push_back({index_to_time(seq, static_cast<double>(start)),
                               index_to_time(seq, static_cast<double>(start + dur - 1)), label});
    }
    data.videos.push_back({std::move(seq), std::move(ann)});
  }
  return data;
}

}  // namespace xltal
