#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "xltal/postprocess.hpp"

using namespace xltal;

namespace {

// Index i sits at i seconds.
FeatureSequence unit_sequence(Index len) {
  FeatureSequence s;
  s.video_id = "v";
  s.features = Mat::Zero(len, 1);
  s.window = 0.0;
  s.stride_frames = 30.0;
  return s;
}

RawPredictions one_hot(const PyramidGeometry& g, Index level, Index i, double b, double e) {
  RawPredictions raw;
  for (Index l = 0; l < g.levels; ++l) {
    Mat logits = Mat::Constant(g.length(l), 1, -50.0);
    Mat offsets = Mat::Ones(g.length(l), 2);
    if (l == level) {
      logits(i, 0) = 2.0;
      offsets(i, 0) = b;
      offsets(i, 1) = e;
    }
    raw.logits.push_back(Array(logits));
    raw.offsets.push_back(Array(offsets));
  }
  return raw;
}

Detection det(double s, double e, double score, int label = 0) { return {"v", s, e, label, score}; }

}  // namespace

TEST_CASE("decode formula") {
  const FeatureSequence seq = unit_sequence(32);
  const PyramidGeometry g{32, 3};
  auto a = decode(one_hot(g, 0, 10, 3, 5), g, seq, 0.01);
  REQUIRE(a.size() == 1);
  CHECK(a[0].start_s == doctest::Approx(7.0));
  CHECK(a[0].end_s == doctest::Approx(15.0));
  CHECK(a[0].score == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))));

  auto b = decode(one_hot(g, 2, 2, 1, 1), g, seq, 0.01);
  REQUIRE(b.size() == 1);
  CHECK(b[0].start_s == doctest::Approx(4.0));
  CHECK(b[0].end_s == doctest::Approx(12.0));

  CHECK(decode(one_hot(g, 0, 10, 3, 5), g, seq, 1.0).empty());

  auto clipped = decode(one_hot(g, 0, 2, 9, 100), g, seq, 0.01);
  REQUIRE(clipped.size() == 1);
  CHECK(clipped[0].start_s == 0.0);
  CHECK(clipped[0].end_s == doctest::Approx(31.0));
}

TEST_CASE("soft-nms") {
  const auto dup = soft_nms({det(1, 5, 0.9), det(1, 5, 0.8)}, 0.5);
  REQUIRE(dup.size() == 2);
  CHECK(dup[0].score == 0.9);
  CHECK(std::abs(dup[1].score - 0.8 * std::exp(-2.0)) <= 1e-12);
  CHECK(std::abs(dup[1].score - 0.1083) < 1e-4);

  const auto disjoint = soft_nms({det(0, 1, 0.3), det(2, 3, 0.7)}, 0.5);
  REQUIRE(disjoint.size() == 2);
  CHECK(disjoint[0].score == 0.7);
  CHECK(disjoint[1].score == 0.3);

  const std::vector<Detection> crowd{det(0, 4, 0.9), det(1, 5, 0.8), det(6, 9, 0.7), det(3, 7, 0.6)};
  const auto hard = soft_nms(crowd, 0.0);
  CHECK(hard.size() == 2);
  CHECK(soft_nms(hard, 0.0).size() == hard.size());

  // Plain NMS at 0.5: only [1, 5] overlaps [0, 4] that much (tIoU 0.6).
  const auto thresholded = soft_nms(crowd, 0.5, 0.5);
  CHECK(thresholded.size() == 3);

  const auto per_class = soft_nms({det(1, 5, 0.9, 0), det(1, 5, 0.8, 1)}, 0.5, std::nullopt, 1e-3, false);
  CHECK(per_class[1].score == 0.8);
}

TEST_CASE("top_k") {
  const std::vector<Detection> d{det(0, 1, 0.2), det(0, 1, 0.9), det(0, 1, 0.5)};
  CHECK(top_k(d, 10).size() == 3);
  const auto one = top_k(d, 1);
  REQUIRE(one.size() == 1);
  CHECK(one[0].score == 0.9);
}

TEST_CASE("postprocess keeps at most top_k per video") {
  const FeatureSequence seq = unit_sequence(64);
  const PyramidGeometry g{64, 1};
  RawPredictions raw;
  raw.logits.push_back(Array(Mat::Constant(64, 40, 1.0)));
  raw.offsets.push_back(Array(Mat::Constant(64, 2, 0.5)));
  PostprocessConfig c;
  c.top_k = 100;
  c.class_agnostic = false;
  CHECK(postprocess(raw, g, seq, c).size() == 100);
}

TEST_CASE("predictions file round trip") {
  const auto path = std::filesystem::temp_directory_path() / "xltal_test_predictions.json";
  PredictionMap m;
  m["a"] = {Detection{"a", 1.25, 3.5, 2, 0.75}};
  m["b"] = {};
  write_predictions(path, m);
  const PredictionMap back = read_predictions(path);
  REQUIRE(back.size() == 2);
  CHECK(back.at("a")[0].end_s == 3.5);
  CHECK(back.at("a")[0].label == 2);
  CHECK(back.at("b").empty());
}
