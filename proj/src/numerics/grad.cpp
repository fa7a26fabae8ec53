#include "xltal/numerics.hpp"

#include <cmath>
#include <unordered_set>

namespace xltal {

void GradAccumulator::add(std::size_t input, const Mat& grad) {
  const Array& in = node_.inputs[input];
  if (!in.requires_grad()) return;
  if (grad.rows() != in.rows() || grad.cols() != in.cols()) {
    throw ShapeError(std::string("gradient shape mismatch in ") + node_.op);
  }
  auto [it, inserted] = grads_.try_emplace(in.node(), grad);
  if (!inserted) it->second += grad;
}

Mat Gradients::of(const Array& a) const {
  auto it = grads_.find(a.node());
  if (it == grads_.end()) return Mat::Zero(a.rows(), a.cols());
  return it->second;
}

GradTape::GradTape(const Array& root) : root_(root) {
  if (!root.defined() || !root.requires_grad()) return;
  // Iterative post-order DFS; reversing the post-order gives a topological
  // order with the root first.
  std::vector<const detail::Node*> post;
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::pair<const detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const Array& in = node->inputs[next++];
      if (in.requires_grad() && seen.insert(in.node()).second) stack.emplace_back(in.node(), 0);
    } else {
      post.push_back(node);
      stack.pop_back();
    }
  }
  order_.assign(post.rbegin(), post.rend());
}

Gradients GradTape::replay(const Mat& seed) const {
  std::unordered_map<const detail::Node*, Mat> grads;
  if (order_.empty()) return Gradients(std::move(grads));
  if (seed.rows() != root_.rows() || seed.cols() != root_.cols()) {
    throw ShapeError("backward seed does not match root shape");
  }
  grads.emplace(root_.node(), seed);
  for (const detail::Node* node : order_) {
    if (!node->backward) continue;
    auto it = grads.find(node);
    if (it == grads.end()) continue;
    const Mat grad_out = it->second;
    GradAccumulator acc(grads, *node);
    node->backward(grad_out, acc);
  }
  return Gradients(std::move(grads));
}

Gradients backward(const Array& root) {
  if (root.size() != 1) throw ShapeError("backward() needs a scalar root, got " + to_string(root.shape()));
  return GradTape(root).replay(Mat::Ones(1, 1));
}

Mat finite_difference_gradient(const std::function<double(const Mat&)>& f, const Mat& x, double h) {
  Mat grad(x.rows(), x.cols());
  Mat probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + h;
    const double up = f(probe);
    probe.data()[i] = orig - h;
    const double down = f(probe);
    probe.data()[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_difference_gradient: non-finite function value");
    }
    grad.data()[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double max_relative_error(const Mat& analytic, const Mat& numeric, double floor) {
  if (analytic.rows() != numeric.rows() || analytic.cols() != numeric.cols()) {
    throw ShapeError("max_relative_error: shape mismatch");
  }
  double worst = 0.0;
  for (Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data()[i];
    const double n = numeric.data()[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

}  // namespace xltal
