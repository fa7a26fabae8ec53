#include <cmath>

#include "xltal/training.hpp"

namespace xltal {

std::vector<RegressionRange> default_regression_ranges(Index levels) {
  std::vector<RegressionRange> ranges;
  for (Index l = 0; l < levels; ++l) {
    RegressionRange r{std::ldexp(1.0, static_cast<int>(l + 1)), std::ldexp(1.0, static_cast<int>(l + 3))};
    if (l == 0) r.lo = 0.0;
    if (l == levels - 1) r.hi = std::numeric_limits<double>::infinity();
    ranges.push_back(r);
  }
  return ranges;
}

AssignedTargets assign_targets(const AnnotationSet& annotations, const PyramidGeometry& geometry,
                               const FeatureSequence& seq, int num_classes,
                               std::span<const RegressionRange> ranges) {
  // Index round trips through seconds are exact only up to rounding.
  constexpr double kSlack = 1e-9;
  std::vector<RegressionRange> defaults;
  if (ranges.empty()) {
    defaults = default_regression_ranges(geometry.levels);
    ranges = defaults;
  }
  if (static_cast<Index>(ranges.size()) != geometry.levels) {
    throw std::invalid_argument("assign_targets: need one regression range per level");
  }

  struct Span {
    double begin, end;
    int label;
  };
  std::vector<Span> spans;
  for (const auto& inst : annotations.instances) {
    if (inst.label < 0 || inst.label >= num_classes) {
      throw std::invalid_argument("assign_targets: label out of range");
    }
    spans.push_back({time_to_index(seq, inst.start_s), time_to_index(seq, inst.end_s), inst.label});
  }

  AssignedTargets out;
  for (Index l = 0; l < geometry.levels; ++l) {
    const Index n = geometry.length(l);
    const double stride = static_cast<double>(PyramidGeometry::stride(l));
    LevelTargets lt;
    lt.classes = Mat::Zero(n, num_classes);
    lt.offsets = Mat::Zero(n, 2);
    for (Index i = 0; i < n; ++i) {
      const double g = static_cast<double>(i) * stride;
      const Span* best = nullptr;
      for (const Span& s : spans) {
        if (g < s.begin - kSlack || g > s.end + kSlack) continue;
        const double reach = std::max(g - s.begin, s.end - g);
        if (reach < ranges[l].lo || reach >= ranges[l].hi) continue;
        lt.classes(i, s.label) = 1.0;
        if (!best || (s.end - s.begin) < (best->end - best->begin)) best = &s;
      }
      if (best) {
        lt.offsets(i, 0) = std::max(0.0, g - best->begin) / stride;
        lt.offsets(i, 1) = std::max(0.0, best->end - g) / stride;
        lt.positives.push_back(i);
      }
    }
    out.num_positive += static_cast<Index>(lt.positives.size());
    out.levels.push_back(std::move(lt));
  }
  return out;
}

}  // namespace xltal
