// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "xltal/cli.hpp"

using namespace xltal;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& what) {
  if (!ok) ++failures;
  std::cout << (ok ? "PASS" : "FAIL") << " criterion " << id << ": " << what << std::endl;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string join(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += (out.empty() ? "" : "; ") + l;
  return out;
}

void gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  VerifyOptions o;
  o.level = "full";
  const SuiteResult r = gradient_suite(o);
  const double secs = seconds_since(t0);
  report(1, r.passed && secs < 120.0,
         "gradient suite, max relative error " + fmt("%.2e", r.max_error) + " (" + join(r.details) + "), " +
             fmt("%.1f s", secs));
}

void recurrence() {
  const SuiteResult r = cache_equivalence_suite({});
  report(2, r.passed, join(r.details));
}

void fig1_masks() {
  // x3 -> x2 -> x4 -> x1 with x1..x4 at positions 0..3.
  const std::vector<Index> order{2, 1, 3, 0};
  const PermutationMasks m = build_permutation_masks(order, 0);
  auto row = [](const AdditiveMask& mask, Index i) {
    std::vector<bool> r;
    for (Index j = 0; j < mask.cols(); ++j) r.push_back(visible(mask, i, j));
    return r;
  };
  bool ok = row(m.query_mask, 0) == std::vector<bool>{false, true, true, true} &&
            row(m.query_mask, 2) == std::vector<bool>{false, false, false, false};
  for (Index i = 0; i < 4; ++i) {
    auto q = row(m.query_mask, i), c = row(m.content_mask, i);
    q[static_cast<std::size_t>(i)] = true;
    ok = ok && q == c;
  }
  report(3, ok, "x1 query row sees {x2,x3,x4}, x3 query row sees nothing, content = query + self");
}

void pyramid() {
  ModelConfig c;
  c.input_len = 1024;
  c.fpn_levels = 8;
  c.embed_dim = 16;
  c.input_dim = 4;
  const Model model(c);
  const RawPredictions raw = forward(model, Mat(Rng(1).normal_matrix(1024, 4)));
  std::string lengths;
  bool ok = raw.logits.size() == 8;
  const Index expected[] = {1024, 512, 256, 128, 64, 32, 16, 8};
  for (std::size_t l = 0; l < raw.logits.size() && ok; ++l) {
    ok = raw.logits[l].rows() == expected[l] && raw.offsets[l].rows() == expected[l];
    lengths += (l ? "," : "") + std::to_string(raw.logits[l].rows());
  }
  report(4, ok, "level lengths [" + lengths + "]");
}

void memory_direction() {
  const Index T = 1024, L = 256;
  ModelConfig c;
  c.input_len = T;
  c.input_dim = 4;
  c.embed_dim = 16;
  c.segment_len = L;
  c.encoder_layers = 1;
  const Array x(Rng(2).normal_matrix(T, 16));
  auto count = [&](EncoderMode mode) {
    c.encoder_mode = mode;
    AttentionCounter counter;
    encode_level0(Model(c), x, {false, nullptr, &counter, nullptr});
    return counter;
  };
  const AttentionCounter base = count(EncoderMode::kBase), split = count(EncoderMode::kSplit),
                         rec = count(EncoderMode::kRecurrence);
  const Index bound = 2 * T * L;
  const bool ok = 2 * bound == base.level0_total() && split.level0_total() <= bound &&
                  rec.level0_content <= bound && rec.level0_query <= bound &&
                  rec.level0_total() < base.level0_total();
  report(5, ok,
         "score elements per layer: base " + std::to_string(base.level0_total()) + ", split " +
             std::to_string(split.level0_total()) + ", recurrence content " + std::to_string(rec.level0_content) +
             " + query " + std::to_string(rec.level0_query) + " (2TL = " + std::to_string(bound) + ")");
}

void nms_limits() {
  const SuiteResult r = nms_limit_suite({});
  report(6, r.passed, join(r.details));
}

void metric_oracle() {
  const SuiteResult r = metric_oracle_suite({});
  report(7, r.passed, join(r.details));
}

RunConfig overfit_config(const std::string& mode, Index epochs) {
  const std::vector<std::string> sets{
      "seed=7",
      "model.input_len=256",
      "model.input_dim=16",
      "model.embed_dim=32",
      "model.num_heads=4",
      "model.fpn_levels=2",
      "model.segment_len=64",
      "model.num_classes=3",
      "model.encoder_mode=" + mode,
      "train.epochs=" + std::to_string(epochs)};
  return load_run_config(std::nullopt, sets);
}

fs::path synthetic_dir(const fs::path& root) {
  SyntheticSpec spec;
  spec.num_videos = 20;
  spec.feature_len = 128;
  spec.channels = 16;
  spec.num_classes = 3;
  spec.snr = 4.0;
  spec.seed = 7;
  const fs::path dir = root / "data";
  fs::create_directories(dir);
  write_dataset(dir, generate_synthetic(spec));
  return dir;
}

void overfit(const fs::path& root, const fs::path& data) {
  const Index epochs = 150;
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::string summary;
  for (const std::string mode : {"recurrence", "base"}) {
    const RunConfig cfg = overfit_config(mode, epochs);
    std::ostringstream log;
    const auto logs = cmd_train(cfg, data, root / (mode + ".ckpt"), std::nullopt, log);
    cmd_predict(cfg, root / (mode + ".ckpt"), data, root / (mode + ".json"), log);
    const EvalReport r = cmd_eval(cfg, root / (mode + ".json"), data / "annotations.json", log);
    const bool mode_ok = r.average_map >= 0.90 && r.recall_1x >= 0.90;
    ok = ok && mode_ok;
    summary += mode + ": avg mAP " + fmt("%.4f", r.average_map) + ", Recall@1x " + fmt("%.4f", r.recall_1x) +
               ", loss " + fmt("%.3f", logs.logs.front().total) + " -> " + fmt("%.3f", logs.logs.back().total) + "; ";
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 900.0;
  report(8, ok, summary + std::to_string(epochs) + " epochs each, " + fmt("%.0f s", secs));
}

void determinism(const fs::path& root, const fs::path& data) {
  const RunConfig cfg = overfit_config("recurrence", 3);
  std::ostringstream log;
  cmd_train(cfg, data, root / "d1.ckpt", std::nullopt, log);
  cmd_train(cfg, data, root / "d2.ckpt", std::nullopt, log);
  cmd_predict(cfg, root / "d1.ckpt", data, root / "d1.json", log);
  cmd_predict(cfg, root / "d1.ckpt", data, root / "d2.json", log);
  const bool ckpt = slurp(root / "d1.ckpt") == slurp(root / "d2.ckpt");
  const bool pred = slurp(root / "d1.json") == slurp(root / "d2.json");
  report(9, ckpt && pred,
         std::string("checkpoints ") + (ckpt ? "identical" : "DIFFER") + ", predictions " +
             (pred ? "identical" : "DIFFER"));
}

template <typename F>
void guarded(int id, F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    report(id, false, std::string("threw: ") + e.what());
  }
}

}  // namespace

int main() {
  const fs::path root = fs::temp_directory_path() / "xltal_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);

  guarded(1, gradients);
  guarded(2, recurrence);
  guarded(3, fig1_masks);
  guarded(4, pyramid);
  guarded(5, memory_direction);
  guarded(6, nms_limits);
  guarded(7, metric_oracle);
  fs::path data;
  guarded(8, [&] {
    data = synthetic_dir(root);
    overfit(root, data);
  });
  guarded(9, [&] { determinism(root, data.empty() ? synthetic_dir(root) : data); });

  std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed") << std::endl;
  return failures ? 1 : 0;
}
