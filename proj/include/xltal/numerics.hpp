#pragma once

// Dense arrays with reverse-mode differentiation.
//
// An Array is an immutable handle to a node in a computation graph. Values are
// stored as a row-major Eigen matrix whose column count is the last extent of
// the logical shape, so a (w, d, d') kernel is held as a (w*d) x d' matrix.
// Gradients are computed by building a GradTape from a scalar root and
// replaying it; nodes themselves are never mutated.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace xltal {

using Index = Eigen::Index;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using IndexMat = Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Shape = std::vector<Index>;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string to_string(const Shape& shape);

class Array;
class GradAccumulator;

/// Vector-Jacobian product callback: receives the gradient of the node's
/// output and pushes contributions for each input that needs one.
using Backward = std::function<void(const Mat& grad_out, GradAccumulator& acc)>;

namespace detail {
struct Node {
  Shape shape;
  Mat value;
  bool requires_grad = false;
  std::vector<Array> inputs;
  Backward backward;
  const char* op = "leaf";
};
}  // namespace detail

class Array {
 public:
  Array() = default;
  explicit Array(Mat value, bool requires_grad = false);
  Array(Shape shape, Mat value, bool requires_grad = false);

  static Array zeros(Index rows, Index cols) { return Array(Mat::Zero(rows, cols)); }
  static Array scalar(double v) { return Array(Mat::Constant(1, 1, v)); }
  static Array row(std::initializer_list<double> values);
  static Array from_rows(std::initializer_list<std::initializer_list<double>> rows);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  const Mat& value() const { return node_->value; }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }
  double item() const;

  const detail::Node* node() const { return node_.get(); }

  // Builds an op result. Inputs that do not require grad are skipped during
  // backward; the result requires grad iff any input does.
  static Array make(Shape shape, Mat value, std::vector<Array> inputs, Backward backward,
                    const char* op);

 private:
  std::shared_ptr<const detail::Node> node_;
};

class GradAccumulator {
 public:
  GradAccumulator(std::unordered_map<const detail::Node*, Mat>& grads, const detail::Node& node)
      : grads_(grads), node_(node) {}

  bool needs(std::size_t input) const { return node_.inputs[input].requires_grad(); }
  void add(std::size_t input, const Mat& grad);

 private:
  std::unordered_map<const detail::Node*, Mat>& grads_;
  const detail::Node& node_;
};

class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::unordered_map<const detail::Node*, Mat> grads) : grads_(std::move(grads)) {}

  /// Gradient w.r.t. `a`, or zeros of its shape when nothing flowed into it.
  Mat of(const Array& a) const;
  bool has(const Array& a) const { return grads_.count(a.node()) != 0; }

 private:
  std::unordered_map<const detail::Node*, Mat> grads_;
};

/// Reverse topological order of every grad-requiring node reachable from a
/// root. Replaying it from the root visits each op after all of its consumers.
class GradTape {
 public:
  explicit GradTape(const Array& root);

  std::span<const detail::Node* const> order() const { return order_; }
  Gradients replay(const Mat& seed) const;

 private:
  Array root_;
  std::vector<const detail::Node*> order_;
};

/// Gradients of a 1x1 root.
Gradients backward(const Array& root);

// ---- primitives -----------------------------------------------------------

Array matmul(const Array& a, const Array& b);
/// a * b^T without materializing the transpose node.
Array matmul_nt(const Array& a, const Array& b);
Array transpose(const Array& a);

Array add(const Array& a, const Array& b);
Array sub(const Array& a, const Array& b);
Array mul(const Array& a, const Array& b);
Array scale(const Array& a, double s);
/// Adds a 1 x d row to every row of an n x d array.
Array add_row(const Array& x, const Array& row);
/// Repeats a 1 x d row n times.
Array broadcast_rows(const Array& row, Index n);

inline Array operator+(const Array& a, const Array& b) { return add(a, b); }
inline Array operator-(const Array& a, const Array& b) { return sub(a, b); }
inline Array operator*(const Array& a, double s) { return scale(a, s); }
inline Array operator*(double s, const Array& a) { return scale(a, s); }

double sigmoid_scalar(double t);
double softplus_scalar(double t);

Array gelu(const Array& x);
Array sigmoid(const Array& x);
Array softplus(const Array& x);

Array sum(const Array& x);
Array mean(const Array& x);

Array slice_rows(const Array& x, Index begin, Index count);
Array slice_cols(const Array& x, Index begin, Index count);
Array concat_rows(std::span<const Array> parts);
Array concat_cols(std::span<const Array> parts);
inline Array concat_rows(std::initializer_list<Array> parts) {
  return concat_rows(std::span<const Array>(parts.begin(), parts.size()));
}
inline Array concat_cols(std::initializer_list<Array> parts) {
  return concat_cols(std::span<const Array>(parts.begin(), parts.size()));
}

/// out(i, j) = flat(table)[index(i, j)]; gradient scatters back into the table.
Array gather(const Array& table, const IndexMat& index);

/// Forward value is `x`, gradient is blocked.
Array stop_gradient(const Array& x);

Array layer_norm(const Array& x, const Array& gain, const Array& bias, double eps = 1e-5);

/// 0 marks a visible entry, -infinity a hidden one.
using AdditiveMask = Mat;

enum class AllHiddenRows { kError, kZero };

Array masked_softmax(const Array& x, const AdditiveMask& mask,
                     AllHiddenRows policy = AllHiddenRows::kError);

/// `kernel` has logical shape (w, d_in, d_out). Symmetric zero padding of w/2
/// so that the output has ceil(T / stride) rows.
Array temporal_conv1d(const Array& x, const Array& kernel, Index stride);

// ---- gradient oracle ------------------------------------------------------

/// Central differences, one coordinate at a time.
Mat finite_difference_gradient(const std::function<double(const Mat&)>& f, const Mat& x,
                               double h = 1e-6);

/// |a - n| / max(|a|, |n|, floor), maximized over coordinates.
double max_relative_error(const Mat& analytic, const Mat& numeric, double floor = 1e-3);

// ---- randomness -----------------------------------------------------------

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  Index uniform_int(Index lo, Index hi) {  // inclusive
    return std::uniform_int_distribution<Index>(lo, hi)(engine_);
  }
  Mat normal_matrix(Index rows, Index cols, double stddev = 1.0);
  Mat uniform_matrix(Index rows, Index cols, double lo, double hi);
  std::vector<Index> permutation(Index n);

  std::uint64_t next_seed() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace xltal
