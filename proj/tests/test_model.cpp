#include <filesystem>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "xltal/checkpoint.hpp"
#include "xltal/cli.hpp"
#include "xltal/model.hpp"

using namespace xltal;

namespace {

ModelConfig small(EncoderMode mode = EncoderMode::kBase) {
  ModelConfig c;
  c.input_len = 64;
  c.input_dim = 6;
  c.embed_dim = 8;
  c.num_heads = 2;
  c.fpn_levels = 4;
  c.encoder_mode = mode;
  c.segment_len = 16;
  c.num_classes = 3;
  c.attention_window = 5;
  c.seed = 3;
  return c;
}

void zero(Parameters& p, ParamRef r) { p.set(r.index, Mat::Zero(p[r].rows(), p[r].cols())); }

double max_abs(const Mat& a, const Mat& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c = small();
  CHECK_NOTHROW(c.validate());
  c.embed_dim = 7;  // not divisible by heads
  CHECK_THROWS(c.validate());
  c = small();
  c.attention_window = 4;
  CHECK_THROWS(c.validate());
  CHECK(encoder_mode_from_string(to_string(EncoderMode::kRecurrence)) == EncoderMode::kRecurrence);
  CHECK_THROWS(encoder_mode_from_string("xl"));
}

TEST_CASE("pyramid lengths") {
  ModelConfig c;
  c.input_len = 1024;
  c.fpn_levels = 8;
  const PyramidGeometry g = PyramidGeometry::of(c);
  const Index expected[] = {1024, 512, 256, 128, 64, 32, 16, 8};
  for (Index l = 0; l < 8; ++l) CHECK(g.length(l) == expected[l]);

  const Model m(small());
  const Array x = project_input(m, Array(Rng(1).normal_matrix(64, 6)));
  const PyramidFeatures p = build_pyramid(m, encode_level0(m, x, {}));
  REQUIRE(p.levels.size() == 4);
  for (Index l = 0; l < 4; ++l) CHECK(p.levels[static_cast<std::size_t>(l)].rows() == 64 >> l);

  ModelConfig one = small();
  one.fpn_levels = 1;
  const Model m1(one);
  const Array level0 = encode_level0(m1, project_input(m1, Array(Mat::Ones(64, 6))), {});
  CHECK(build_pyramid(m1, level0).levels[0].value() == level0.value());
}

TEST_CASE("segment split") {
  Mat x(8, 1);
  for (Index i = 0; i < 8; ++i) x(i, 0) = static_cast<double>(i);
  const auto parts = segment_split(Array(x), 4);
  REQUIRE(parts.size() == 2);
  CHECK(parts[1].value()(0, 0) == 4.0);
  CHECK(segment_split(Array(x), 8)[0].value() == x);
  CHECK(segment_split(Array(Mat::Zero(1024, 1)), 256).size() == 4);
  CHECK_THROWS_AS(segment_split(Array(x), 3), ShapeError);
}

TEST_CASE("permutation masks, Fig. 1 order") {
  const std::vector<Index> order{2, 1, 3, 0};  // x3 -> x2 -> x4 -> x1
  const PermutationMasks m = build_permutation_masks(order, 0);
  CHECK_FALSE(visible(m.query_mask, 0, 0));
  CHECK(visible(m.query_mask, 0, 1));
  CHECK(visible(m.query_mask, 0, 2));
  CHECK(visible(m.query_mask, 0, 3));
  for (Index j = 0; j < 4; ++j) CHECK_FALSE(visible(m.query_mask, 2, j));
  for (Index i = 0; i < 4; ++i) CHECK(visible(m.content_mask, i, i));
  CHECK(visible(m.content_mask, 2, 2));
  CHECK_FALSE(visible(m.content_mask, 2, 0));

  const PermutationMasks with_memory = build_permutation_masks(order, 3);
  CHECK(with_memory.query_mask.cols() == 7);
  for (Index i = 0; i < 4; ++i) {
    for (Index j = 0; j < 3; ++j) CHECK(visible(with_memory.query_mask, i, j));
  }
  const std::vector<Index> bad{0, 0, 1};
  CHECK_THROWS(build_permutation_masks(bad, 0));
}

TEST_CASE("window mask") {
  const AdditiveMask w = window_mask(6, 3);
  CHECK(visible(w, 2, 1));
  CHECK(visible(w, 2, 3));
  CHECK_FALSE(visible(w, 2, 4));
  CHECK(window_mask(6, 0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("self attention small cases") {
  const Model m(small());
  const auto& p = m.parameters();
  const auto& attn = m.layout().level0[0].attn;
  Rng rng(4);
  auto value_path = [&](const Mat& x) {
    const Mat v = (x * p[attn.value.weight].value()).rowwise() + Eigen::RowVectorXd(p[attn.value.bias].value());
    return Mat((v * p[attn.output.weight].value()).rowwise() + Eigen::RowVectorXd(p[attn.output.bias].value()));
  };

  const Mat one = rng.normal_matrix(1, 8);
  CHECK(max_abs(self_attention(p, attn, Array(one), nullptr, full_mask(1, 1), {}, 2, 16).value(),
                value_path(one)) < 1e-12);

  const Mat x = rng.normal_matrix(5, 8);
  AdditiveMask diag = Mat::Constant(5, 5, -std::numeric_limits<double>::infinity());
  diag.diagonal().setZero();
  CHECK(max_abs(self_attention(p, attn, Array(x), nullptr, diag, {}, 2, 16).value(), value_path(x)) < 1e-12);

  Mat twins(2, 8);
  twins.row(0) = one.row(0);
  twins.row(1) = one.row(0);
  // Relative bias is zero at init, so identical tokens give identical rows.
  const Mat y = self_attention(p, attn, Array(twins), nullptr, full_mask(2, 2), {}, 2, 16).value();
  CHECK(max_abs(y.row(0), y.row(1)) < 1e-12);
}

TEST_CASE("transformer layer is the identity with zero output projections") {
  Model m(small());
  auto& p = m.parameters();
  const auto& layer = m.layout().level0[0];
  zero(p, layer.attn.output.weight);
  zero(p, layer.attn.output.bias);
  zero(p, layer.mlp_out.weight);
  zero(p, layer.mlp_out.bias);
  const Mat x = Rng(6).normal_matrix(10, 8);
  CHECK(transformer_layer(p, layer, Array(x), nullptr, full_mask(10, 10), {}, 2, 16).value() == x);
}

TEST_CASE("project_input") {
  ModelConfig c = small();
  c.input_dim = 8;
  Model m(c);
  auto& p = m.parameters();
  const Mat x = Rng(2).normal_matrix(64, 8);
  p.set(m.layout().input_proj.weight.index, Mat::Identity(8, 8));
  CHECK(project_input(m, Array(x)).value() == x);
  zero(p, m.layout().input_proj.weight);
  CHECK(project_input(m, Array(x)).value().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward shapes and zero heads") {
  for (EncoderMode mode : {EncoderMode::kBase, EncoderMode::kSplit, EncoderMode::kRecurrence}) {
    Model m(small(mode));
    const RawPredictions raw = forward(m, Mat(Mat::Zero(64, 6)));
    REQUIRE(raw.logits.size() == 4);
    for (Index l = 0; l < 4; ++l) {
      CHECK(raw.logits[static_cast<std::size_t>(l)].rows() == 64 >> l);
      CHECK(raw.logits[static_cast<std::size_t>(l)].cols() == 3);
      CHECK(raw.offsets[static_cast<std::size_t>(l)].cols() == 2);
    }
    auto& p = m.parameters();
    zero(p, m.layout().cls_head.out.kernel);
    zero(p, m.layout().cls_head.out.bias);
    zero(p, m.layout().reg_head.out.kernel);
    zero(p, m.layout().reg_head.out.bias);
    const RawPredictions z = forward(m, Mat(Mat::Zero(64, 6)));
    for (const auto& a : z.logits) CHECK(a.value().cwiseAbs().maxCoeff() == 0.0);
    for (const auto& a : z.offsets) CHECK((a.value().array() - std::log(2.0)).abs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("class prior bias") {
  const Model m(small());
  const Mat b = m.parameters()[m.layout().cls_head.out.bias].value();
  CHECK(b(0, 0) == doctest::Approx(-std::log(0.99 / 0.01)));
}

TEST_CASE("single segment: content stream equals the masked full encoder") {
  // With L = T there is no memory; under the identity order the content
  // stream is causal, so the comparison uses the causal mask.
  ModelConfig c = small(EncoderMode::kRecurrence);
  c.input_len = 16;
  c.segment_len = 16;
  const Model m(c);
  const Array x(Rng(8).normal_matrix(16, 8));
  RecurrenceTrace trace;
  recurrent_encode(m, x, {}, &trace);
  const Array full = encode_masked(m, m.layout().level0, x, causal_with_memory_mask(16, 16));
  CHECK(max_abs(trace.content.back().value(), full.value()) < 1e-10);
  // A fully visible mask is a different computation.
  CHECK(max_abs(trace.content.back().value(), encode_masked(m, m.layout().level0, x, full_mask(16, 16)).value()) >
        1e-6);
}

TEST_CASE("recurrence memory is gradient-blocked and in global coordinates") {
  const Model m(recurrence_probe_config(64, 32, 1));
  const Array x(Rng(10).normal_matrix(64, 16), true);
  RecurrenceTrace trace;
  const Array out = recurrent_encode(m, x, {}, &trace);
  CHECK(trace.memory_len == std::vector<Index>{0, 32});
  // Loss on segment 1 only: the cache path into segment 0 carries nothing.
  const Mat g = backward(sum(slice_rows(out, 32, 32))).of(x);
  CHECK(g.topRows(32).cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.bottomRows(32).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("training permutations are seeded") {
  const Model m(recurrence_probe_config(64, 32, 2));
  const Array x(Rng(10).normal_matrix(64, 16));
  Rng a(1), b(1);
  RecurrenceTrace ta, tb;
  ForwardOptions oa{true, &a, nullptr, nullptr}, ob{true, &b, nullptr, nullptr};
  CHECK(recurrent_encode(m, x, oa, &ta).value() == recurrent_encode(m, x, ob, &tb).value());
  CHECK(ta.orders == tb.orders);
}

TEST_CASE("attention element counts") {
  ModelConfig c = small(EncoderMode::kBase);
  c.input_len = 128;
  c.segment_len = 32;
  c.encoder_layers = 1;
  const Array x(Rng(2).normal_matrix(128, 8));
  AttentionCounter base, split, rec;
  encode_level0(Model(c), x, {false, nullptr, &base, nullptr});
  c.encoder_mode = EncoderMode::kSplit;
  encode_level0(Model(c), x, {false, nullptr, &split, nullptr});
  c.encoder_mode = EncoderMode::kRecurrence;
  encode_level0(Model(c), x, {false, nullptr, &rec, nullptr});
  CHECK(base.level0_total() == 128 * 128);
  CHECK(split.level0_total() == 4 * 32 * 32);
  // First segment: null column; later segments: memory plus segment.
  const Index per_stream = 32 * 33 + 3 * 32 * 64;
  CHECK(rec.level0_content == per_stream);
  CHECK(rec.level0_query == per_stream);
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "xltal_test_model";
  std::filesystem::create_directories(dir);
  const Model m(small(EncoderMode::kRecurrence));
  save_checkpoint(dir / "a.ckpt", m);
  const Model back = load_checkpoint(dir / "a.ckpt");
  CHECK(to_json(back.config()) == to_json(m.config()));
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    CHECK(back.parameters().at(i).value() == m.parameters().at(i).value());
  }
  {
    std::ofstream out(dir / "a.ckpt", std::ios::binary | std::ios::app);
    out << "x";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), CheckpointError);
  ModelConfig c;
  CHECK_THROWS(update_from_json(c, nlohmann::json{{"embed_size", 3}}));
}
