#include "xltal/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace xltal {

using nlohmann::json;

void PostprocessConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("postprocess config: " + msg); };
  if (score_floor < 0.0 || score_floor > 1.0) fail("score_floor must be in [0, 1]");
  if (pre_nms_cap < 0 || top_k < 0) fail("caps must be non-negative");
  if (sigma < 0.0) fail("sigma must be non-negative");
  if (final_floor < 0.0) fail("final_floor must be non-negative");
  if (hard_iou_threshold && (*hard_iou_threshold < 0.0 || *hard_iou_threshold > 1.0)) {
    fail("hard_iou_threshold must be in [0, 1]");
  }
}

namespace {

bool ranks_before(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.start_s < b.start_s;
}

}  // namespace

std::vector<Detection> decode(const RawPredictions& raw, const PyramidGeometry& geometry,
                              const FeatureSequence& seq, double score_floor, Index cap) {
  if (static_cast<Index>(raw.logits.size()) != geometry.levels ||
      raw.offsets.size() != raw.logits.size()) {
    throw ShapeError("decode: predictions do not match the pyramid geometry");
  }
  const double last = static_cast<double>(geometry.input_len - 1);
  std::vector<Detection> out;
  for (Index l = 0; l < geometry.levels; ++l) {
    const Mat& logits = raw.logits[l].value();
    const Mat& offsets = raw.offsets[l].value();
    if (logits.rows() != geometry.length(l) || offsets.rows() != geometry.length(l)) {
      throw ShapeError("decode: level " + std::to_string(l) + " has the wrong length");
    }
    const double stride = static_cast<double>(PyramidGeometry::stride(l));
    for (Index i = 0; i < logits.rows(); ++i) {
      const double centre = static_cast<double>(i) * stride;
      const double lo = std::clamp(centre - offsets(i, 0) * stride, 0.0, last);
      const double hi = std::clamp(centre + offsets(i, 1) * stride, 0.0, last);
      if (!(hi > lo)) continue;
      for (Index k = 0; k < logits.cols(); ++k) {
        const double score = sigmoid_scalar(logits(i, k));
        if (!(score > score_floor)) continue;
        out.push_back({seq.video_id, index_to_time(seq, lo), index_to_time(seq, hi),
                       static_cast<int>(k), score});
      }
    }
  }
  if (cap > 0 && static_cast<Index>(out.size()) > cap) {
    std::stable_sort(out.begin(), out.end(), ranks_before);
    out.resize(static_cast<std::size_t>(cap));
  }
  return out;
}

std::vector<Detection> soft_nms(std::vector<Detection> dets, double sigma,
                                std::optional<double> hard_iou_threshold, double final_floor,
                                bool class_agnostic) {
  std::vector<Detection> kept;
  kept.reserve(dets.size());
  while (!dets.empty()) {
    auto best = std::min_element(dets.begin(), dets.end(), ranks_before);
    Detection top = *best;
    dets.erase(best);
    std::vector<Detection> rest;
    rest.reserve(dets.size());
    for (Detection& d : dets) {
      if (!class_agnostic && d.label != top.label) {
        rest.push_back(d);
        continue;
      }
      const double overlap = tiou(top.interval(), d.interval());
      double decay;
      if (hard_iou_threshold) {
        decay = overlap > *hard_iou_threshold ? 0.0 : 1.0;
      } else if (sigma == 0.0) {
        decay = overlap > 0.0 ? 0.0 : 1.0;
      } else {
        decay = std::exp(-overlap * overlap / sigma);
      }
      d.score *= decay;
      if (d.score >= final_floor && d.score > 0.0) rest.push_back(d);
    }
    dets = std::move(rest);
    kept.push_back(std::move(top));
  }
  std::stable_sort(kept.begin(), kept.end(), ranks_before);
  return kept;
}

std::vector<Detection> top_k(std::vector<Detection> dets, Index k) {
  std::stable_sort(dets.begin(), dets.end(), ranks_before);
  if (static_cast<Index>(dets.size()) > k) dets.resize(static_cast<std::size_t>(std::max<Index>(k, 0)));
  return dets;
}

std::vector<Detection> postprocess(const RawPredictions& raw, const PyramidGeometry& geometry,
                                   const FeatureSequence& seq, const PostprocessConfig& config) {
  config.validate();
  auto dets = decode(raw, geometry, seq, config.score_floor, config.pre_nms_cap);
  dets = soft_nms(std::move(dets), config.sigma, config.hard_iou_threshold, config.final_floor,
                  config.class_agnostic);
  return top_k(std::move(dets), config.top_k);
}

void write_predictions(const std::filesystem::path& path, const PredictionMap& predictions) {
  json root = json::object();
  for (const auto& [vid, dets] : predictions) {
    json list = json::array();
    for (const auto& d : dets) {
      list.push_back({{"segment", {d.start_s, d.end_s}}, {"label", d.label}, {"score", d.score}});
    }
    root[vid] = std::move(list);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << root.dump(1) << '\n';
}

PredictionMap read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  PredictionMap out;
  try {
    const json root = json::parse(in);
    if (!root.is_object()) throw std::runtime_error("predictions must be a JSON object");
    for (const auto& [vid, list] : root.items()) {
      auto& dets = out[vid];
      for (const auto& e : list) {
        const auto& seg = e.at("segment");
        if (!seg.is_array() || seg.size() != 2) throw std::runtime_error("segment must be [start, end]");
        Detection d{vid, seg[0].get<double>(), seg[1].get<double>(), e.at("label").get<int>(),
                    e.at("score").get<double>()};
        if (!(d.start_s < d.end_s) || !(d.score > 0.0 && d.score <= 1.0)) {
          throw std::runtime_error("invalid detection in " + vid);
        }
        dets.push_back(d);
      }
    }
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed predictions " + path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace xltal
