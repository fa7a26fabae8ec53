#pragma once

#include <algorithm>

namespace xltal {

template <typename Scalar>
struct Interval {
  Scalar start{};
  Scalar end{};

  Scalar length() const { return end - start; }
};

template <typename Scalar>
Scalar intersection(const Interval<Scalar>& a, const Interval<Scalar>& b) {
  return std::max(Scalar(0), std::min(a.end, b.end) - std::max(a.start, b.start));
}

/// Temporal IoU; 0 for disjoint or degenerate pairs.
template <typename Scalar>
Scalar tiou(const Interval<Scalar>& a, const Interval<Scalar>& b) {
  const Scalar inter = intersection(a, b);
  const Scalar uni = a.length() + b.length() - inter;
  if (!(uni > Scalar(0))) return Scalar(0);
  return inter / uni;
}

}  // namespace xltal
