#include <limits>

#include "xltal/model.hpp"

namespace xltal {

namespace {
constexpr double kHidden = -std::numeric_limits<double>::infinity();
}

AdditiveMask full_mask(Index rows, Index cols) { return AdditiveMask::Zero(rows, cols); }

AdditiveMask window_mask(Index n, Index window) {
  if (window == 0) return full_mask(n, n);
  const Index half = window / 2;
  AdditiveMask m = AdditiveMask::Constant(n, n, kHidden);
  for (Index i = 0; i < n; ++i) {
    for (Index j = std::max<Index>(0, i - half); j <= std::min(n - 1, i + half); ++j) m(i, j) = 0.0;
  }
  return m;
}

PermutationMasks build_permutation_masks(std::span<const Index> order, Index memory_len) {
  const Index n = static_cast<Index>(order.size());
  if (n < 1) throw std::invalid_argument("build_permutation_masks: empty order");
  if (memory_len < 0) throw std::invalid_argument("build_permutation_masks: negative memory length");
  std::vector<Index> rank(order.size(), -1);
  for (Index r = 0; r < n; ++r) {
    const Index p = order[r];
    if (p < 0 || p >= n || rank[p] != -1) {
      throw std::invalid_argument("build_permutation_masks: order is not a permutation of 0.." +
                                  std::to_string(n - 1));
    }
    rank[p] = r;
  }
  PermutationMasks masks;
  masks.order.assign(order.begin(), order.end());
  masks.memory_len = memory_len;
  masks.content_mask = AdditiveMask::Constant(n, memory_len + n, kHidden);
  masks.content_mask.leftCols(memory_len).setZero();
  masks.query_mask = masks.content_mask;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (rank[j] < rank[i]) {
        masks.content_mask(i, memory_len + j) = 0.0;
        masks.query_mask(i, memory_len + j) = 0.0;
      }
    }
    masks.content_mask(i, memory_len + i) = 0.0;
  }
  return masks;
}

std::vector<Array> segment_split(const Array& x, Index segment_len) {
  if (segment_len < 1 || x.rows() % segment_len != 0) {
    throw ShapeError("segment_split: segment length " + std::to_string(segment_len) +
                     " does not divide " + std::to_string(x.rows()));
  }
  std::vector<Array> out;
  for (Index s = 0; s < x.rows(); s += segment_len) out.push_back(slice_rows(x, s, segment_len));
  return out;
}

}  // namespace xltal
