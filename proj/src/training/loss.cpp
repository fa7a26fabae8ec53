#include <cmath>

#include "xltal/training.hpp"

namespace xltal {

namespace {

const double kLogFloor = std::log(1e-12);

struct FocalTerm {
  double value;
  double grad;  // d value / d logit
};

FocalTerm focal_term(double logit, double target, double alpha, double gamma) {
  const double p = sigmoid_scalar(logit);
  const bool positive = target > 0.5;
  const double weight_alpha = positive ? alpha : 1.0 - alpha;
  const double p_t = positive ? p : 1.0 - p;
  // log p_t computed from the logit so saturated sigmoids stay finite.
  double log_pt = positive ? -softplus_scalar(-logit) : -softplus_scalar(logit);
  const bool clamped = log_pt < kLogFloor;
  if (clamped) log_pt = kLogFloor;
  const double one_minus = 1.0 - p_t;
  const double w = std::pow(one_minus, gamma);
  // d p_t / d logit = +-p (1 - p)
  const double dw = -gamma * p_t * w * (positive ? 1.0 : -1.0);
  const double dlog = clamped ? 0.0 : (positive ? 1.0 - p : -p);
  return {-weight_alpha * w * log_pt, -weight_alpha * (dw * log_pt + w * dlog)};
}

struct IouTerm {
  double value;
  double d_begin, d_end;  // w.r.t. the predicted offsets
};

IouTerm iou_term(double pb, double pe, double tb, double te) {
  const double inter = std::min(pb, tb) + std::min(pe, te);
  const double uni = pb + pe + tb + te - inter;
  if (!(uni > 0.0)) return {0.0, 0.0, 0.0};
  const double di_b = pb < tb ? 1.0 : 0.0;
  const double di_e = pe < te ? 1.0 : 0.0;
  auto d = [&](double di) { return -(di * uni - inter * (1.0 - di)) / (uni * uni); };
  return {1.0 - inter / uni, d(di_b), d(di_e)};
}

}  // namespace

double focal_loss(double logit, double target, double alpha, double gamma) {
  return focal_term(logit, target, alpha, gamma).value;
}

double iou_loss(double pred_b, double pred_e, double target_b, double target_e) {
  return iou_term(pred_b, pred_e, target_b, target_e).value;
}

Array focal_loss_sum(const Array& logits, const Mat& targets, double alpha, double gamma) {
  if (targets.rows() != logits.rows() || targets.cols() != logits.cols()) {
    throw ShapeError("focal_loss_sum: targets do not match logits " + to_string(logits.shape()));
  }
  Mat grad(logits.rows(), logits.cols());
  double total = 0.0;
  for (Index i = 0; i < logits.size(); ++i) {
    const FocalTerm t = focal_term(logits.value().data()[i], targets.data()[i], alpha, gamma);
    total += t.value;
    grad.data()[i] = t.grad;
  }
  return Array::make(
      Shape{1, 1}, Mat::Constant(1, 1, total), {logits},
      [grad](const Mat& g, GradAccumulator& acc) { acc.add(0, grad * g(0, 0)); }, "focal_loss_sum");
}

Array iou_loss_sum(const Array& offsets, const Mat& targets, std::span<const Index> rows) {
  if (offsets.cols() != 2 || targets.rows() != offsets.rows() || targets.cols() != 2) {
    throw ShapeError("iou_loss_sum: offsets and targets must both be n x 2");
  }
  Mat grad = Mat::Zero(offsets.rows(), 2);
  double total = 0.0;
  for (Index r : rows) {
    const auto& p = offsets.value();
    const IouTerm t = iou_term(p(r, 0), p(r, 1), targets(r, 0), targets(r, 1));
    total += t.value;
    grad(r, 0) += t.d_begin;
    grad(r, 1) += t.d_end;
  }
  return Array::make(
      Shape{1, 1}, Mat::Constant(1, 1, total), {offsets},
      [grad](const Mat& g, GradAccumulator& acc) { acc.add(0, grad * g(0, 0)); }, "iou_loss_sum");
}

LossTerms total_loss(const RawPredictions& raw, const AssignedTargets& targets, double alpha,
                     double gamma) {
  if (raw.logits.size() != targets.levels.size() || raw.offsets.size() != targets.levels.size()) {
    throw ShapeError("total_loss: prediction and target level counts differ");
  }
  Array cls, reg;
  for (std::size_t l = 0; l < targets.levels.size(); ++l) {
    const LevelTargets& lt = targets.levels[l];
    Array c = focal_loss_sum(raw.logits[l], lt.classes, alpha, gamma);
    cls = cls.defined() ? add(cls, c) : c;
    if (!lt.positives.empty()) {
      Array r = iou_loss_sum(raw.offsets[l], lt.offsets, lt.positives);
      reg = reg.defined() ? add(reg, r) : r;
    }
  }
  const double norm = 1.0 / static_cast<double>(std::max<Index>(targets.num_positive, 1));
  LossTerms out;
  out.num_positive = targets.num_positive;
  out.cls = cls.item() * norm;
  out.reg = reg.defined() ? reg.item() * norm : 0.0;
  out.total = scale(reg.defined() ? add(cls, reg) : cls, norm);
  return out;
}

}  // namespace xltal
