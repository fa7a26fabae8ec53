#include <cmath>

#include "xltal/model.hpp"

namespace xltal {

std::string to_string(EncoderMode mode) {
  switch (mode) {
    case EncoderMode::kBase: return "base";
    case EncoderMode::kSplit: return "split";
    case EncoderMode::kRecurrence: return "recurrence";
  }
  return "?";
}

EncoderMode encoder_mode_from_string(const std::string& name) {
  if (name == "base") return EncoderMode::kBase;
  if (name == "split") return EncoderMode::kSplit;
  if (name == "recurrence") return EncoderMode::kRecurrence;
  throw std::invalid_argument("unknown encoder mode '" + name + "' (base | split | recurrence)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (input_len < 1 || input_dim < 1 || embed_dim < 1 || num_heads < 1) {
    fail("input_len, input_dim, embed_dim and num_heads must be positive");
  }
  if (fpn_levels < 1 || fpn_levels > 30) fail("fpn_levels must be in [1, 30]");
  if (input_len % (Index{1} << (fpn_levels - 1)) != 0) {
    fail("input_len " + std::to_string(input_len) + " is not divisible by 2^(fpn_levels-1)");
  }
  if (embed_dim % num_heads != 0) fail("embed_dim must be divisible by num_heads");
  if (segment_len < 1) fail("segment_len must be positive");
  if (encoder_mode != EncoderMode::kBase && input_len % segment_len != 0) {
    fail("segment_len " + std::to_string(segment_len) + " does not divide input_len " +
         std::to_string(input_len));
  }
  if (encoder_layers < 1 || head_layers < 1 || mlp_ratio < 1) {
    fail("encoder_layers, head_layers and mlp_ratio must be positive");
  }
  if (num_classes < 1) fail("num_classes must be positive");
  if (attention_window < 0 || (attention_window != 0 && attention_window % 2 == 0)) {
    fail("attention_window must be 0 or odd");
  }
  if (!(prior_prob > 0.0 && prior_prob < 1.0)) fail("prior_prob must be in (0, 1)");
}

ParamRef Parameters::add(std::string name, Mat value, Shape shape, bool decay) {
  if (shape.empty()) shape = {value.rows(), value.cols()};
  names_.push_back(std::move(name));
  values_.emplace_back(std::move(shape), std::move(value), true);
  decay_.push_back(decay);
  return ParamRef{values_.size() - 1};
}

void Parameters::set(std::size_t i, Mat value) {
  values_.at(i) = Array(values_[i].shape(), std::move(value), true);
}

Index Parameters::total_elements() const {
  Index n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

void AttentionCounter::record(Index level, Stream stream, Index elements) {
  if (level > 0) {
    upper_levels += elements;
  } else if (stream == Stream::kContent) {
    level0_content += elements;
  } else {
    level0_query += elements;
  }
}

namespace {

class Initializer {
 public:
  Initializer(Parameters& params, Rng& rng) : params_(params), rng_(rng) {}

  LinearParams linear(const std::string& name, Index d_in, Index d_out) {
    const double std = 1.0 / std::sqrt(static_cast<double>(d_in));
    return {params_.add(name + ".weight", rng_.normal_matrix(d_in, d_out, std)),
            params_.add(name + ".bias", Mat::Zero(1, d_out), {}, false)};
  }

  NormParams norm(const std::string& name, Index d) {
    return {params_.add(name + ".gain", Mat::Ones(1, d), {}, false),
            params_.add(name + ".bias", Mat::Zero(1, d), {}, false)};
  }

  ConvParams conv(const std::string& name, Index width, Index d_in, Index d_out) {
    const double std = 1.0 / std::sqrt(static_cast<double>(width * d_in));
    return {params_.add(name + ".kernel", rng_.normal_matrix(width * d_in, d_out, std),
                        Shape{width, d_in, d_out}),
            params_.add(name + ".bias", Mat::Zero(1, d_out), {}, false)};
  }

  TransformerLayerParams transformer(const std::string& name, const ModelConfig& c) {
    const Index d = c.embed_dim;
    TransformerLayerParams p;
    p.attn_norm = norm(name + ".attn_norm", d);
    p.attn.query = linear(name + ".attn.query", d, d);
    p.attn.key = linear(name + ".attn.key", d, d);
    p.attn.value = linear(name + ".attn.value", d, d);
    p.attn.output = linear(name + ".attn.output", d, d);
    p.attn.rel_bias = params_.add(name + ".attn.rel_bias",
                                  Mat::Zero(c.num_heads, 2 * c.segment_len + 1), {}, false);
    p.mlp_norm = norm(name + ".mlp_norm", d);
    p.mlp_in = linear(name + ".mlp.in", d, d * c.mlp_ratio);
    p.mlp_out = linear(name + ".mlp.out", d * c.mlp_ratio, d);
    return p;
  }

  HeadParams head(const std::string& name, const ModelConfig& c, Index d_out) {
    HeadParams h;
    for (Index i = 0; i + 1 < c.head_layers; ++i) {
      h.hidden.push_back(conv(name + ".hidden" + std::to_string(i), 3, c.embed_dim, c.embed_dim));
    }
    h.out = conv(name + ".out", 3, c.embed_dim, d_out);
    return h;
  }

  ParamRef vector(const std::string& name, Index d, double std) {
    return params_.add(name, rng_.normal_matrix(1, d, std), {}, false);
  }

 private:
  Parameters& params_;
  Rng& rng_;
};

}  // namespace

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(mix_seed(config_.seed, 0x6d6f64656cULL));
  Initializer init(params_, rng);
  const Index d = config_.embed_dim;

  layout_.input_proj = init.linear("input_proj", config_.input_dim, d);
  for (Index l = 0; l < config_.encoder_layers; ++l) {
    layout_.level0.push_back(init.transformer("level0.layer" + std::to_string(l), config_));
  }
  if (config_.encoder_mode == EncoderMode::kRecurrence) {
    const double std = 1.0 / std::sqrt(static_cast<double>(d));
    layout_.query_stream.query_seed = init.vector("level0.query_seed", d, 1.0);
    layout_.query_stream.null_key = init.vector("level0.null_key", d, std);
    layout_.query_stream.null_value = init.vector("level0.null_value", d, std);
  }
  for (Index l = 1; l < config_.fpn_levels; ++l) {
    layout_.downsample.push_back(init.conv("level" + std::to_string(l) + ".downsample", 3, d, d));
    layout_.level_layers.push_back(init.transformer("level" + std::to_string(l) + ".layer", config_));
  }
  layout_.cls_head = init.head("cls_head", config_, config_.num_classes);
  layout_.reg_head = init.head("reg_head", config_, 2);

  // Focal-loss prior: every class starts at probability prior_prob.
  const double prior_bias = -std::log((1.0 - config_.prior_prob) / config_.prior_prob);
  params_.set(layout_.cls_head.out.bias.index, Mat::Constant(1, config_.num_classes, prior_bias));
}

}  // namespace xltal
