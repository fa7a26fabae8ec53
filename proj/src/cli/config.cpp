#include <cmath>
#include <fstream>

#include "xltal/checkpoint.hpp"
#include "xltal/cli.hpp"

namespace xltal {

using nlohmann::json;

namespace {

json train_to_json(const TrainConfig& t) {
  json ranges = json::array();
  for (const auto& r : t.regression_ranges) {
    ranges.push_back({r.lo, std::isinf(r.hi) ? json(nullptr) : json(r.hi)});
  }
  return json{{"learning_rate", t.learning_rate}, {"weight_decay", t.weight_decay},
              {"epochs", t.epochs},               {"batch_size", t.batch_size},
              {"focal_alpha", t.focal_alpha},     {"focal_gamma", t.focal_gamma},
              {"beta1", t.beta1},                 {"beta2", t.beta2},
              {"adam_eps", t.adam_eps},           {"warmup_fraction", t.warmup_fraction},
              {"clip_norm", t.clip_norm},         {"regression_ranges", ranges}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  t.learning_rate = j.at("learning_rate").get<double>();
  t.weight_decay = j.at("weight_decay").get<double>();
  t.epochs = j.at("epochs").get<Index>();
  t.batch_size = j.at("batch_size").get<Index>();
  t.focal_alpha = j.at("focal_alpha").get<double>();
  t.focal_gamma = j.at("focal_gamma").get<double>();
  t.beta1 = j.at("beta1").get<double>();
  t.beta2 = j.at("beta2").get<double>();
  t.adam_eps = j.at("adam_eps").get<double>();
  t.warmup_fraction = j.at("warmup_fraction").get<double>();
  t.clip_norm = j.at("clip_norm").get<double>();
  for (const auto& r : j.at("regression_ranges")) {
    if (!r.is_array() || r.size() != 2) {
      throw UserError("train.regression_ranges entries must be [lo, hi] pairs (hi may be null)");
    }
    RegressionRange range;
    range.lo = r[0].get<double>();
    if (!r[1].is_null()) range.hi = r[1].get<double>();
    t.regression_ranges.push_back(range);
  }
  return t;
}

json postprocess_to_json(const PostprocessConfig& p) {
  return json{{"score_floor", p.score_floor},
              {"pre_nms_cap", p.pre_nms_cap},
              {"sigma", p.sigma},
              {"hard_iou_threshold", p.hard_iou_threshold ? json(*p.hard_iou_threshold) : json(nullptr)},
              {"final_floor", p.final_floor},
              {"class_agnostic", p.class_agnostic},
              {"top_k", p.top_k}};
}

PostprocessConfig postprocess_from_json(const json& j) {
  PostprocessConfig p;
  p.score_floor = j.at("score_floor").get<double>();
  p.pre_nms_cap = j.at("pre_nms_cap").get<Index>();
  p.sigma = j.at("sigma").get<double>();
  if (!j.at("hard_iou_threshold").is_null()) p.hard_iou_threshold = j.at("hard_iou_threshold").get<double>();
  p.final_floor = j.at("final_floor").get<double>();
  p.class_agnostic = j.at("class_agnostic").get<bool>();
  p.top_k = j.at("top_k").get<Index>();
  return p;
}

json model_section(const ModelConfig& m) {
  json j = to_json(m);
  j.erase("seed");  // comes from the top-level seed
  return j;
}

// Copies `src` into `dst`, refusing keys that `dst` does not already have.
void merge_strict(json& dst, const json& src, const std::string& where) {
  if (!src.is_object()) throw UserError("config" + where + " must be a JSON object");
  for (const auto& [key, value] : src.items()) {
    const std::string path = where.empty() ? key : where.substr(1) + "." + key;
    if (!dst.contains(key)) throw UserError("unknown config key '" + path + "'");
    if (dst[key].is_object()) {
      merge_strict(dst[key], value, "." + path);
    } else {
      dst[key] = value;
    }
  }
}

void set_path(json& tree, const std::vector<std::string>& keys, const json& value) {
  json* node = &tree;
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    if (!node->is_object()) throw UserError("config path is too deep");
    node = &(*node)[keys[i]];
  }
  (*node)[keys.back()] = value;
}

}  // namespace

json default_config_tree() {
  RunConfig defaults;
  return json{{"seed", defaults.seed},
              {"model", model_section(defaults.model)},
              {"train", train_to_json(defaults.train)},
              {"postprocess", postprocess_to_json(defaults.postprocess)},
              {"eval", json{{"recall_pooling", to_string(defaults.eval.recall_pooling)}}}};
}

json RunConfig::to_json() const {
  return json{{"seed", seed},
              {"model", model_section(model)},
              {"train", train_to_json(train)},
              {"postprocess", postprocess_to_json(postprocess)},
              {"eval", json{{"recall_pooling", xltal::to_string(eval.recall_pooling)}}}};
}

void apply_override(json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw UserError("override '" + assignment + "' is not of the form section.key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  std::vector<std::string> keys;
  for (std::size_t start = 0;;) {
    const auto dot = path.find('.', start);
    keys.push_back(path.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  json value = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = text;

  // Validate the path against the defaults so typos fail loudly.
  const json defaults = default_config_tree();
  const json* node = &defaults;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (!node->is_object() || !node->contains(keys[i])) {
      throw UserError("unknown config key '" + path + "'");
    }
    node = &(*node)[keys[i]];
  }
  if (node->is_object()) throw UserError("override '" + path + "' names a section, not a key");
  set_path(tree, keys, value);
}

RunConfig run_config_from_tree(const json& tree) {
  RunConfig c;
  try {
    json full = default_config_tree();
    merge_strict(full, tree, "");
    c.seed = full.at("seed").get<std::uint64_t>();
    update_from_json(c.model, full.at("model"));
    c.model.seed = c.seed;
    c.train = train_from_json(full.at("train"));
    c.train.seed = c.seed;
    c.postprocess = postprocess_from_json(full.at("postprocess"));
    c.eval.recall_pooling = recall_pooling_from_string(full.at("eval").at("recall_pooling").get<std::string>());
  } catch (const json::exception& e) {
    throw UserError(std::string("bad config value: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw UserError(e.what());
  }
  try {
    c.model.validate();
    c.train.validate();
    c.postprocess.validate();
  } catch (const std::invalid_argument& e) {
    throw UserError(e.what());
  }
  c.explicit_settings = tree;
  return c;
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                          std::span<const std::string> overrides) {
  json tree = json::object();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw UserError("cannot open config " + file->string());
    try {
      tree = json::parse(in);
    } catch (const json::exception& e) {
      throw UserError("config " + file->string() + " is not valid JSON: " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(tree, o);
  return run_config_from_tree(tree);
}

}  // namespace xltal
