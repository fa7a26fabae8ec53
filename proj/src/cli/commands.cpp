#include <cstdio>
#include <fstream>

#include "xltal/checkpoint.hpp"
#include "xltal/cli.hpp"

namespace xltal {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

Dataset load_data_dir(const fs::path& dir, std::ostream& log) {
  const fs::path manifest = dir / "manifest.json";
  if (!fs::exists(manifest)) throw UserError("no manifest.json in " + dir.string());
  Dataset data = load_dataset(manifest);
  for (const auto& w : data.warnings) log << "warning: " << w << "\n";
  return data;
}

FeatureSequence at_length(const FeatureSequence& seq, Index len) {
  return seq.length() == len ? seq : resize_sequence(seq, len);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

SyntheticSpec synthetic_spec_from_json(const json& j) {
  if (!j.is_object()) throw UserError("synthetic spec must be a JSON object");
  SyntheticSpec s;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "num_videos") s.num_videos = v.get<Index>();
      else if (key == "feature_len") s.feature_len = v.get<Index>();
      else if (key == "channels") s.channels = v.get<Index>();
      else if (key == "num_classes") s.num_classes = v.get<int>();
      else if (key == "min_instances") s.min_instances = v.get<Index>();
      else if (key == "max_instances") s.max_instances = v.get<Index>();
      else if (key == "min_duration") s.min_duration = v.get<Index>();
      else if (key == "max_duration") s.max_duration = v.get<Index>();
      else if (key == "snr") s.snr = v.get<double>();
      else if (key == "fps") s.fps = v.get<double>();
      else if (key == "window") s.window = v.get<double>();
      else if (key == "stride_frames") s.stride_frames = v.get<double>();
      else if (key == "seed") s.seed = v.get<std::uint64_t>();
      else throw UserError("unknown synthetic spec key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw UserError(std::string("bad synthetic spec value: ") + e.what());
  }
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw UserError(e.what());
  }
  return s;
}

void cmd_synth(const fs::path& spec_file, const fs::path& out_dir) {
  std::ifstream in(spec_file);
  if (!in) throw UserError("cannot open synthetic spec " + spec_file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw UserError("synthetic spec is not valid JSON: " + std::string(e.what()));
  }
  const SyntheticSpec spec = synthetic_spec_from_json(j);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw UserError("cannot create " + out_dir.string() + ": " + ec.message());
  try {
    write_dataset(out_dir, generate_synthetic(spec));
  } catch (const DataError& e) {
    throw UserError(e.what());
  }
}

TrainOutputs cmd_train(const RunConfig& config, const fs::path& data_dir, const fs::path& checkpoint,
                       const std::optional<fs::path>& loss_log, std::ostream& log) {
  log << "resolved config: " << config.to_json().dump() << "\n";
  Dataset data = load_data_dir(data_dir, log);
  if (data.videos.empty()) throw UserError("dataset in " + data_dir.string() + " has no videos");
  const ModelConfig& mc = config.model;
  for (auto& v : data.videos) {
    if (v.sequence.channels() != mc.input_dim) {
      throw UserError("video " + v.sequence.video_id + " has " + std::to_string(v.sequence.channels()) +
                      " channels but model.input_dim is " + std::to_string(mc.input_dim));
    }
    if (v.annotations.num_classes != mc.num_classes) {
      throw UserError("annotations declare " + std::to_string(v.annotations.num_classes) +
                      " classes but model.num_classes is " + std::to_string(mc.num_classes));
    }
    v.sequence = at_length(v.sequence, mc.input_len);
  }

  const fs::path log_path = loss_log ? *loss_log : fs::path(checkpoint.string() + ".loss.jsonl");
  std::ofstream jsonl(log_path);
  if (!jsonl) throw UserError("cannot write loss log " + log_path.string());

  Model model(mc);
  TrainOutputs out;
  out.logs = train(model, data.videos, config.train, [&](const EpochLog& e) {
    log << "epoch " << e.epoch << "  l_cls " << fixed(e.l_cls, 6) << "  l_reg " << fixed(e.l_reg, 6)
        << "  total " << fixed(e.total, 6) << "  (" << fixed(e.wall_ms, 0) << " ms)\n";
    log.flush();
    jsonl << json{{"epoch", e.epoch}, {"l_cls", e.l_cls}, {"l_reg", e.l_reg}, {"total", e.total},
                  {"wall_ms", e.wall_ms}}.dump()
          << "\n";
  });
  try {
    save_checkpoint(checkpoint, model);
  } catch (const CheckpointError& e) {
    throw UserError(e.what());
  }
  return out;
}

PredictionMap predict_dataset(const Model& model, const Dataset& data, const PostprocessConfig& config) {
  const ModelConfig& mc = model.config();
  const PyramidGeometry geometry = PyramidGeometry::of(mc);
  PredictionMap out;
  for (const auto& v : data.videos) {
    if (v.sequence.channels() != mc.input_dim) {
      throw UserError("video " + v.sequence.video_id + " has " + std::to_string(v.sequence.channels()) +
                      " channels but the checkpoint expects " + std::to_string(mc.input_dim));
    }
    const FeatureSequence seq = at_length(v.sequence, mc.input_len);
    out[seq.video_id] = postprocess(forward(model, seq), geometry, seq, config);
  }
  return out;
}

void cmd_predict(const RunConfig& config, const fs::path& checkpoint, const fs::path& data_dir,
                 const fs::path& out_json, std::ostream& log) {
  Model model = [&] {
    try {
      return load_checkpoint(checkpoint);
    } catch (const CheckpointError& e) {
      throw UserError(e.what());
    }
  }();
  // Model settings given explicitly must agree with what was trained.
  if (config.explicit_settings.contains("model")) {
    const json trained = to_json(model.config());
    for (const auto& [key, value] : config.explicit_settings["model"].items()) {
      if (trained.at(key) != value) {
        throw UserError("config sets model." + key + "=" + value.dump() + " but the checkpoint has " +
                        trained.at(key).dump());
      }
    }
  }
  RunConfig resolved = config;
  resolved.model = model.config();
  log << "resolved config: " << resolved.to_json().dump() << "\n";
  const Dataset data = load_data_dir(data_dir, log);
  write_predictions(out_json, predict_dataset(model, data, config.postprocess));
}

EvalReport cmd_eval(const RunConfig& config, const fs::path& predictions, const fs::path& annotations,
                    std::ostream& log) {
  const AnnotationFile ann = read_annotations(annotations);
  const PredictionMap preds = read_predictions(predictions);
  std::vector<GroundTruth> gts;
  for (const auto& set : ann.videos) {
    auto g = ground_truths(set);
    gts.insert(gts.end(), g.begin(), g.end());
  }
  std::vector<Detection> dets;
  for (const auto& [id, list] : preds) {
    if (!ann.find(id)) {
      log << "warning: predictions for unknown video '" << id << "' skipped\n";
      continue;
    }
    for (const auto& d : list) {
      if (d.label < 0 || d.label >= ann.num_classes) {
        throw UserError("prediction label " + std::to_string(d.label) + " out of range for video " + id);
      }
      dets.push_back(d);
    }
  }
  return evaluate(dets, gts, ann.num_classes, config.eval.recall_pooling);
}

}  // namespace xltal
