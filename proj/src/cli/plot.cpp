#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "xltal/cli.hpp"

namespace xltal {

namespace {

constexpr const char* kPalette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
                                    "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

const char* colour(int label) {
  const int n = static_cast<int>(std::size(kPalette));
  return kPalette[((label % n) + n) % n];
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_timeline_svg(const std::string& video_id, std::span<const GroundTruth> gts,
                                std::span<const Detection> dets, const PlotOptions& options) {
  std::vector<Detection> shown = top_k(std::vector<Detection>(dets.begin(), dets.end()),
                                       options.max_predictions);
  double t_max = 0.0;
  for (const auto& g : gts) t_max = std::max(t_max, g.end_s);
  for (const auto& d : shown) t_max = std::max(t_max, d.end_s);
  if (t_max <= 0.0) t_max = 1.0;

  const double left = 110.0, right = 20.0, row_h = 18.0, gap = 6.0;
  const double plot_w = options.width - left - right;
  auto x_of = [&](double t) { return left + plot_w * t / t_max; };

  const double gt_y = 40.0;
  const double pred_y = gt_y + row_h + 3 * gap;
  const double height =
      shown.empty() ? gt_y + row_h + 40.0 : pred_y + static_cast<double>(shown.size()) * (row_h + gap) + 40.0;
  const double axis_y = height - 24.0;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(options.width) << "\" height=\""
      << num(height) << "\" font-family=\"monospace\" font-size=\"11\">\n";
  svg << "<text x=\"" << num(left) << "\" y=\"18\" font-size=\"13\">" << escape(video_id) << "</text>\n";

  svg << "<text x=\"8\" y=\"" << num(gt_y + 13) << "\">ground truth</text>\n";
  for (const auto& g : gts) {
    const double x0 = x_of(g.start_s), x1 = x_of(g.end_s);
    svg << "<rect x=\"" << num(x0) << "\" y=\"" << num(gt_y) << "\" width=\"" << num(std::max(x1 - x0, 1.0))
        << "\" height=\"" << num(row_h) << "\" fill=\"" << colour(g.label) << "\"/>\n";
    svg << "<text x=\"" << num(x0 + 2) << "\" y=\"" << num(gt_y + 13) << "\" fill=\"#fff\">" << g.label
        << "</text>\n";
  }

  if (!shown.empty()) {
    svg << "<text x=\"8\" y=\"" << num(pred_y + 13) << "\">predictions</text>\n";
    for (std::size_t i = 0; i < shown.size(); ++i) {
      const auto& d = shown[i];
      const double y = pred_y + static_cast<double>(i) * (row_h + gap);
      const double x0 = x_of(d.start_s), x1 = x_of(d.end_s);
      svg << "<rect x=\"" << num(x0) << "\" y=\"" << num(y) << "\" width=\"" << num(std::max(x1 - x0, 1.0))
          << "\" height=\"" << num(row_h) << "\" fill=\"" << colour(d.label) << "\" fill-opacity=\""
          << num(0.3 + 0.7 * std::clamp(d.score, 0.0, 1.0)) << "\"/>\n";
      svg << "<text x=\"" << num(x0 + 2) << "\" y=\"" << num(y + 13) << "\">" << d.label << " "
          << num(d.score) << "</text>\n";
    }
  }

  svg << "<line x1=\"" << num(left) << "\" y1=\"" << num(axis_y) << "\" x2=\"" << num(left + plot_w)
      << "\" y2=\"" << num(axis_y) << "\" stroke=\"#333\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double t = t_max * tick / 4.0;
    svg << "<text x=\"" << num(x_of(t) - 10) << "\" y=\"" << num(axis_y + 14) << "\">" << num(t)
        << "s</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void cmd_plot(const std::filesystem::path& predictions, const std::filesystem::path& annotations,
              const std::string& video_id, const std::filesystem::path& out_svg, const PlotOptions& options) {
  const AnnotationFile ann = read_annotations(annotations);
  const PredictionMap preds = read_predictions(predictions);
  const AnnotationSet* set = ann.find(video_id);
  auto it = preds.find(video_id);
  if (!set && it == preds.end()) throw UserError("unknown video '" + video_id + "'");
  std::vector<GroundTruth> gts;
  if (set) gts = ground_truths(*set);
  std::vector<Detection> dets;
  if (it != preds.end()) dets = it->second;
  std::ofstream out(out_svg, std::ios::binary);
  if (!out) throw UserError("cannot write " + out_svg.string());
  out << render_timeline_svg(video_id, gts, dets, options);
}

}  // namespace xltal
