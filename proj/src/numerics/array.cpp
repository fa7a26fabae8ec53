#include "xltal/numerics.hpp"

#include <numeric>
#include <sstream>

namespace xltal {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

namespace {

void check_shape(const Shape& shape, const Mat& value) {
  if (shape.empty()) throw ShapeError("array shape must have at least one extent");
  Index total = 1;
  for (Index e : shape) {
    if (e <= 0) throw ShapeError("array extents must be positive: " + to_string(shape));
    total *= e;
  }
  if (total != value.size() || shape.back() != value.cols()) {
    throw ShapeError("shape " + to_string(shape) + " does not match storage " +
                     std::to_string(value.rows()) + "x" + std::to_string(value.cols()));
  }
}

void check_finite(const Mat& value, const char* op) {
  if (!value.allFinite()) throw NumericError(std::string("non-finite value produced by ") + op);
}

}  // namespace

namespace {
Shape shape_of(const Mat& m) { return Shape{m.rows(), m.cols()}; }
}  // namespace

Array::Array(Mat value, bool requires_grad) {
  Shape shape = shape_of(value);  // before the move below
  *this = Array(std::move(shape), std::move(value), requires_grad);
}

Array::Array(Shape shape, Mat value, bool requires_grad) {
  check_shape(shape, value);
  check_finite(value, "leaf");
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node_ = std::move(node);
}

Array Array::row(std::initializer_list<double> values) {
  Mat m(1, static_cast<Index>(values.size()));
  Index j = 0;
  for (double v : values) m(0, j++) = v;
  return Array(std::move(m));
}

Array Array::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const Index r = static_cast<Index>(rows.size());
  const Index c = r ? static_cast<Index>(rows.begin()->size()) : 0;
  Mat m(r, c);
  Index i = 0;
  for (const auto& row : rows) {
    if (static_cast<Index>(row.size()) != c) throw ShapeError("ragged initializer");
    Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return Array(std::move(m));
}

double Array::item() const {
  if (size() != 1) throw ShapeError("item() on array of shape " + to_string(shape()));
  return value()(0, 0);
}

Array Array::make(Shape shape, Mat value, std::vector<Array> inputs, Backward backward,
                  const char* op) {
  check_shape(shape, value);
  check_finite(value, op);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  node->requires_grad =
      std::any_of(inputs.begin(), inputs.end(), [](const Array& a) { return a.requires_grad(); });
  if (node->requires_grad) {
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  Array out;
  out.node_ = std::move(node);
  return out;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 finalizer over the combined word
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Mat Rng::normal_matrix(Index rows, Index cols, double stddev) {
  Mat m(rows, cols);
  std::normal_distribution<double> dist(0.0, stddev);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(engine_);
  return m;
}

Mat Rng::uniform_matrix(Index rows, Index cols, double lo, double hi) {
  Mat m(rows, cols);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(engine_);
  return m;
}

std::vector<Index> Rng::permutation(Index n) {
  std::vector<Index> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), Index{0});
  // Fisher-Yates with our own index draws so the sequence does not depend on
  // the standard library's shuffle implementation.
  for (Index i = n - 1; i > 0; --i) std::swap(p[i], p[uniform_int(0, i)]);
  return p;
}

}  // namespace xltal
