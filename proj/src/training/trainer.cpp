#include <chrono>
#include <cmath>

#include "xltal/training.hpp"

namespace xltal {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
  if (learning_rate < 0.0 || weight_decay < 0.0) fail("learning_rate and weight_decay must be >= 0");
  if (epochs < 1) fail("epochs must be positive");
  if (batch_size != 1) fail("batch_size must be 1 (one video per step)");
  if (!(focal_alpha >= 0.0 && focal_alpha <= 1.0) || focal_gamma < 0.0) fail("invalid focal parameters");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || adam_eps <= 0.0) {
    fail("invalid Adam moments");
  }
  if (warmup_fraction < 0.0 || warmup_fraction > 1.0) fail("warmup_fraction must be in [0, 1]");
  if (clip_norm <= 0.0) fail("clip_norm must be positive");
}

AdamW::AdamW(const Parameters& params, const TrainConfig& config) : config_(config) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.push_back(Mat::Zero(params.at(i).rows(), params.at(i).cols()));
    v_.push_back(Mat::Zero(params.at(i).rows(), params.at(i).cols()));
  }
}

double AdamW::step(Parameters& params, const Gradients& grads, double learning_rate) {
  std::vector<Mat> g;
  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    g.push_back(grads.of(params.at(i)));
    sq += g.back().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  const double clip = norm > config_.clip_norm ? config_.clip_norm / norm : 1.0;

  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Mat gi = g[i] * clip;
    m_[i] = b1 * m_[i] + (1.0 - b1) * gi;
    v_[i] = b2 * v_[i] + (1.0 - b2) * gi.cwiseProduct(gi);
    Mat update = (m_[i] / c1).array() / ((v_[i] / c2).array().sqrt() + config_.adam_eps);
    Mat value = params.at(i).value();
    if (params.decays(i)) value -= learning_rate * config_.weight_decay * value;
    value -= learning_rate * update;
    params.set(i, std::move(value));
  }
  return norm;
}

std::vector<EpochLog> train(Model& model, const std::vector<VideoSample>& videos,
                            const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (videos.empty()) throw std::invalid_argument("train: dataset is empty");
  const ModelConfig& mc = model.config();
  const PyramidGeometry geometry = PyramidGeometry::of(mc);

  std::vector<AssignedTargets> targets;
  for (const auto& v : videos) {
    if (v.sequence.length() != mc.input_len) {
      throw std::invalid_argument("train: video " + v.sequence.video_id +
                                  " is not resized to the model input length");
    }
    targets.push_back(assign_targets(v.annotations, geometry, v.sequence, mc.num_classes,
                                     config.regression_ranges));
  }

  Rng rng(mix_seed(config.seed, 0x747261696eULL));
  AdamW optimizer(model.parameters(), config);
  const Index n = static_cast<Index>(videos.size());
  const double total_steps = static_cast<double>(config.epochs * n);
  const double warmup = std::max(1.0, std::ceil(config.warmup_fraction * total_steps));

  std::vector<EpochLog> logs;
  Index step = 0;
  for (Index epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = epoch;
    for (Index idx : rng.permutation(n)) {
      const auto& video = videos[static_cast<std::size_t>(idx)];
      ForwardOptions options;
      options.training = true;
      options.rng = &rng;
      LossTerms loss;
      try {
        loss = total_loss(forward(model, video.sequence, options), targets[static_cast<std::size_t>(idx)],
                          config.focal_alpha, config.focal_gamma);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", video " + video.sequence.video_id +
                           ": " + e.what());
      }
      ++step;
      const double lr = config.learning_rate * std::min(1.0, static_cast<double>(step) / warmup);
      optimizer.step(model.parameters(), backward(loss.total), lr);
      log.l_cls += loss.cls;
      log.l_reg += loss.reg;
    }
    log.l_cls /= static_cast<double>(n);
    log.l_reg /= static_cast<double>(n);
    log.total = log.l_cls + log.l_reg;
    log.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    logs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return logs;
}

}  // namespace xltal
