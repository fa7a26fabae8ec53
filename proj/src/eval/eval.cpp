#include "xltal/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace xltal {

std::vector<GroundTruth> ground_truths(const AnnotationSet& annotations) {
  std::vector<GroundTruth> out;
  for (const auto& a : annotations.instances) {
    out.push_back({annotations.video_id, a.start_s, a.end_s, a.label});
  }
  return out;
}

namespace {

std::vector<Detection> sorted_by_score(std::span<const Detection> dets) {
  std::vector<Detection> out(dets.begin(), dets.end());
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.start_s < b.start_s;
  });
  return out;
}

std::vector<bool> match_sorted(std::span<const Detection> sorted, std::span<const GroundTruth> gts,
                               double threshold) {
  std::vector<bool> used(gts.size(), false);
  std::vector<bool> tp(sorted.size(), false);
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    double best = -1.0;
    std::size_t best_j = gts.size();
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (used[j] || gts[j].video_id != sorted[i].video_id) continue;
      const double o = tiou(sorted[i].interval(), gts[j].interval());
      if (o >= threshold && o > best) {
        best = o;
        best_j = j;
      }
    }
    if (best_j < gts.size()) {
      used[best_j] = true;
      tp[i] = true;
    }
  }
  return tp;
}

}  // namespace

std::vector<bool> greedy_match(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                               double threshold) {
  const auto sorted = sorted_by_score(dets);
  return match_sorted(sorted, gts, threshold);
}

double average_precision(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                         double threshold) {
  if (gts.empty() || dets.empty()) return 0.0;
  const auto tp = greedy_match(dets, gts, threshold);
  const double total = static_cast<double>(gts.size());
  std::vector<double> precision, recall;
  double hits = 0.0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    if (tp[i]) hits += 1.0;
    precision.push_back(hits / static_cast<double>(i + 1));
    recall.push_back(hits / total);
  }
  // Precision envelope from the right, then sum over recall steps.
  for (std::size_t i = precision.size() - 1; i-- > 0;) {
    precision[i] = std::max(precision[i], precision[i + 1]);
  }
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

std::vector<double> default_thresholds() { return {0.1, 0.2, 0.3, 0.4, 0.5}; }

MeanApResult mean_ap(std::span<const Detection> dets, std::span<const GroundTruth> gts, int num_classes,
                     std::span<const double> thresholds) {
  MeanApResult out;
  out.thresholds.assign(thresholds.begin(), thresholds.end());
  std::vector<std::vector<Detection>> by_class_det(static_cast<std::size_t>(num_classes));
  std::vector<std::vector<GroundTruth>> by_class_gt(static_cast<std::size_t>(num_classes));
  for (const auto& d : dets) {
    if (d.label >= 0 && d.label < num_classes) by_class_det[static_cast<std::size_t>(d.label)].push_back(d);
  }
  for (const auto& g : gts) {
    if (g.label < 0 || g.label >= num_classes) throw std::invalid_argument("mean_ap: label out of range");
    by_class_gt[static_cast<std::size_t>(g.label)].push_back(g);
  }
  for (const auto& g : by_class_gt) out.class_has_gt.push_back(!g.empty());
  for (double thr : thresholds) {
    std::vector<double> aps;
    double total = 0.0;
    int counted = 0;
    for (int k = 0; k < num_classes; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      const double ap = average_precision(by_class_det[ku], by_class_gt[ku], thr);
      aps.push_back(ap);
      if (out.class_has_gt[ku]) {
        total += ap;
        ++counted;
      }
    }
    out.class_ap.push_back(std::move(aps));
    out.map.push_back(counted ? total / counted : 0.0);
  }
  if (!out.map.empty()) {
    out.average = std::accumulate(out.map.begin(), out.map.end(), 0.0) / static_cast<double>(out.map.size());
  }
  return out;
}

RecallPooling recall_pooling_from_string(const std::string& name) {
  if (name == "per_group") return RecallPooling::kPerGroup;
  if (name == "per_class") return RecallPooling::kPerClass;
  throw std::invalid_argument("unknown recall pooling '" + name + "' (per_group|per_class)");
}

std::string to_string(RecallPooling pooling) {
  return pooling == RecallPooling::kPerGroup ? "per_group" : "per_class";
}

double recall_at_kx(std::span<const Detection> dets, std::span<const GroundTruth> gts, double k,
                    double threshold, RecallPooling pooling) {
  using Key = std::pair<std::string, int>;
  const bool per_group = pooling == RecallPooling::kPerGroup;
  std::map<Key, std::vector<GroundTruth>> gt_groups;
  std::map<Key, std::vector<Detection>> det_groups;
  for (const auto& g : gts) gt_groups[{per_group ? g.video_id : "", g.label}].push_back(g);
  for (const auto& d : dets) det_groups[{per_group ? d.video_id : "", d.label}].push_back(d);
  if (gts.empty()) return 0.0;
  double recalled = 0.0;
  for (const auto& [key, group_gts] : gt_groups) {
    auto it = det_groups.find(key);
    if (it == det_groups.end()) continue;
    auto sorted = sorted_by_score(it->second);
    const auto budget = static_cast<std::size_t>(std::floor(k * static_cast<double>(group_gts.size())));
    if (sorted.size() > budget) sorted.resize(budget);
    const auto tp = match_sorted(sorted, group_gts, threshold);
    recalled += static_cast<double>(std::count(tp.begin(), tp.end(), true));
  }
  return recalled / static_cast<double>(gts.size());
}

OracleMatch oracle_match(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                         double threshold) {
  if (dets.size() > 5 || gts.size() > 3) {
    throw std::invalid_argument("oracle_match: instance too large (max 5 detections, 3 ground truths)");
  }
  OracleMatch best;
  std::vector<bool> used(gts.size(), false);
  // Depth-first over detections; each one takes an unused ground truth above
  // threshold or nothing.
  auto search = [&](auto&& self, std::size_t i, Index tps, double total) -> void {
    if (i == dets.size()) {
      if (tps > best.true_positives || (tps == best.true_positives && total > best.total_tiou)) {
        best = {tps, total};
      }
      return;
    }
    self(self, i + 1, tps, total);
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (used[j] || gts[j].video_id != dets[i].video_id) continue;
      const double o = tiou(dets[i].interval(), gts[j].interval());
      if (o < threshold) continue;
      used[j] = true;
      self(self, i + 1, tps + 1, total + o);
      used[j] = false;
    }
  };
  search(search, 0, 0, 0.0);
  return best;
}

double EvalReport::map_at(double threshold) const {
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (std::abs(thresholds[i] - threshold) < 1e-9) return map[i];
  }
  throw std::out_of_range("no mAP recorded at threshold " + std::to_string(threshold));
}

nlohmann::json EvalReport::to_json() const {
  auto pct = [](double v) { return std::round(v * 10000.0) / 100.0; };
  return nlohmann::json{{"mAP@0.1", pct(map_at(0.1))},
                        {"mAP@0.3", pct(map_at(0.3))},
                        {"mAP@0.5", pct(map_at(0.5))},
                        {"avg_mAP", pct(average_map)},
                        {"recall@1x_tiou0.5", pct(recall_1x)}};
}

EvalReport evaluate(std::span<const Detection> dets, std::span<const GroundTruth> gts, int num_classes,
                    RecallPooling pooling) {
  const auto thresholds = default_thresholds();
  const MeanApResult m = mean_ap(dets, gts, num_classes, thresholds);
  EvalReport r;
  r.thresholds = m.thresholds;
  r.map = m.map;
  r.average_map = m.average;
  r.class_ap = m.class_ap;
  r.recall_1x = recall_at_kx(dets, gts, 1.0, 0.5, pooling);
  return r;
}

}  // namespace xltal
