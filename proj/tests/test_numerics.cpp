#include <cmath>

#include "doctest.h"
#include "xltal/numerics.hpp"

using namespace xltal;

namespace {
const double kHidden = -std::numeric_limits<double>::infinity();
}

TEST_CASE("matmul hand cases") {
  const Array a = Array::from_rows({{1, 2}, {3, 4}});
  const Array ones = Array::from_rows({{1}, {1}});
  const Mat out = matmul(a, ones).value();
  CHECK(out(0, 0) == 3.0);
  CHECK(out(1, 0) == 7.0);
  CHECK(matmul(Array(Mat::Identity(2, 2)), a).value() == a.value());
  CHECK(matmul(Array::scalar(0.0), Array::scalar(5.0)).item() == 0.0);
  CHECK_THROWS_AS(matmul(a, Array::zeros(3, 1)), ShapeError);
}

TEST_CASE("masked softmax") {
  const Array uniform = masked_softmax(Array::row({0, 0, 0}), Mat::Zero(1, 3));
  for (Index j = 0; j < 3; ++j) CHECK(uniform.value()(0, j) == doctest::Approx(1.0 / 3.0));

  Mat hide_last = Mat::Zero(1, 2);
  hide_last(0, 1) = kHidden;
  const Mat single = masked_softmax(Array::row({10, 0}), hide_last).value();
  CHECK(single(0, 0) == 1.0);
  CHECK(single(0, 1) == 0.0);

  Mat mask = Mat::Zero(1, 3);
  mask(0, 2) = kHidden;
  const Mat y = masked_softmax(Array::row({1, 2, 3}), mask).value();
  const double e = std::exp(1.0);
  CHECK(y(0, 0) == doctest::Approx(1.0 / (1.0 + e)).epsilon(1e-12));
  CHECK(y(0, 1) == doctest::Approx(e / (1.0 + e)).epsilon(1e-12));
  CHECK(y(0, 2) == 0.0);
}

TEST_CASE("masked softmax shift invariance over visible logits") {
  Rng rng(3);
  Mat mask = Mat::Zero(4, 6);
  mask(0, 2) = mask(1, 0) = mask(3, 5) = kHidden;
  const Mat x = rng.normal_matrix(4, 6);
  Mat shifted = x;
  for (Index i = 0; i < 4; ++i) shifted.row(i).array() += rng.uniform(-5, 5);
  const Mat a = masked_softmax(Array(x), mask).value();
  const Mat b = masked_softmax(Array(shifted), mask).value();
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("masked softmax all-hidden rows") {
  Mat mask = Mat::Constant(2, 2, kHidden);
  mask(0, 0) = 0.0;
  CHECK_THROWS_AS(masked_softmax(Array(Mat::Zero(2, 2)), mask), NumericError);
  const Mat y = masked_softmax(Array(Mat::Zero(2, 2)), mask, AllHiddenRows::kZero).value();
  CHECK(y(1, 0) == 0.0);
  CHECK(y(1, 1) == 0.0);
  CHECK(y(0, 0) == 1.0);
}

TEST_CASE("layer norm") {
  const Array gain = Array::row({1, 1}), bias = Array::row({0, 0});
  const Mat y = layer_norm(Array::row({1, 3}), gain, bias, 1e-12).value();
  CHECK(y(0, 0) == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(y(0, 1) == doctest::Approx(1.0).epsilon(1e-9));
  const Mat constant = layer_norm(Array::row({4, 4, 4}), Array::row({1, 1, 1}), Array::row({0, 0, 0})).value();
  CHECK(constant.cwiseAbs().maxCoeff() == 0.0);
  const Mat zero_gain = layer_norm(Array::row({1, 5, 2}), Array::row({0, 0, 0}), Array::row({7, 8, 9})).value();
  CHECK(zero_gain(0, 0) == 7.0);
  CHECK(zero_gain(0, 2) == 9.0);
}

TEST_CASE("temporal conv1d") {
  const Array x = Array::from_rows({{1}, {2}, {3}, {4}});
  const Array kernel(Shape{3, 1, 1}, Mat::Ones(3, 1));
  const Mat y = temporal_conv1d(x, kernel, 2).value();
  REQUIRE(y.rows() == 2);
  CHECK(y(0, 0) == 3.0);
  CHECK(y(1, 0) == 9.0);

  Rng rng(1);
  const Array feats(rng.normal_matrix(5, 3));
  const Array identity(Shape{1, 3, 3}, Mat::Identity(3, 3));
  CHECK(temporal_conv1d(feats, identity, 1).value() == feats.value());

  for (Index t = 1; t <= 64; ++t) {
    for (Index s : {1, 2, 4}) {
      const Array in(Mat::Zero(t, 2));
      const Array k(Shape{3, 2, 1}, Mat::Ones(6, 1));
      CHECK(temporal_conv1d(in, k, s).rows() == (t + s - 1) / s);
    }
  }
}

TEST_CASE("finite difference oracle") {
  auto sq = [](const Mat& x) { return x.squaredNorm(); };
  const Mat g = finite_difference_gradient(sq, Array::row({1, 2}).value());
  CHECK(g(0, 0) == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(g(0, 1) == doctest::Approx(4.0).epsilon(1e-6));
  const Mat flat = finite_difference_gradient([](const Mat&) { return 3.0; }, Mat::Ones(1, 3));
  CHECK(flat.cwiseAbs().maxCoeff() == 0.0);
  const Mat prod = finite_difference_gradient([](const Mat& x) { return x(0, 0) * x(0, 1); },
                                              Array::row({3, 5}).value());
  CHECK(prod(0, 0) == doctest::Approx(5.0).epsilon(1e-6));
  CHECK(prod(0, 1) == doctest::Approx(3.0).epsilon(1e-6));
}

TEST_CASE("reverse mode matches finite differences on a composite") {
  Rng rng(9);
  const Mat w0 = rng.uniform_matrix(4, 3, -1, 1), x0 = rng.uniform_matrix(5, 4, -1, 1);
  auto f = [&](const Array& w) {
    return mean(gelu(layer_norm(matmul(Array(x0), w), Array::row({1, 2, 3}), Array::row({0, 1, 0}))));
  };
  const Array w(w0, true);
  const Mat analytic = backward(f(w)).of(w);
  const Mat numeric = finite_difference_gradient([&](const Mat& v) { return f(Array(v)).item(); }, w0);
  CHECK(max_relative_error(analytic, numeric) < 1e-5);
}

TEST_CASE("stop_gradient blocks every path") {
  Rng rng(2);
  const Array x(rng.normal_matrix(3, 2), true);
  const Array blocked = stop_gradient(matmul_nt(x, x));
  const Array y = sum(mul(gelu(blocked), blocked));
  const Gradients g = backward(add(y, sum(x)));
  CHECK(g.of(x) == Mat::Ones(3, 2));
}

TEST_CASE("gradients accumulate over shared inputs") {
  const Array x(Array::row({2, -1}).value(), true);
  const Mat g = backward(sum(mul(x, x))).of(x);
  CHECK(g(0, 0) == 4.0);
  CHECK(g(0, 1) == -2.0);
}

TEST_CASE("non-finite values are rejected") {
  Mat bad = Mat::Zero(1, 2);
  bad(0, 1) = std::nan("");
  CHECK_THROWS_AS(Array{bad}, NumericError);
  CHECK_THROWS_AS(backward(Array(Mat::Zero(2, 2), true)), ShapeError);
}

TEST_CASE("seeded randomness is reproducible") {
  Rng a(42), b(42);
  CHECK(a.normal_matrix(3, 3) == b.normal_matrix(3, 3));
  CHECK(a.permutation(10) == b.permutation(10));
  auto p = Rng(5).permutation(20);
  std::sort(p.begin(), p.end());
  for (Index i = 0; i < 20; ++i) CHECK(p[static_cast<std::size_t>(i)] == i);
  CHECK(mix_seed(1, 2) != mix_seed(2, 1));
}
