#include <cmath>
#include <limits>
#include <numbers>

#include "xltal/numerics.hpp"

namespace xltal {

namespace {

void require_same(const Array& a, const Array& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + " differ");
  }
}

Shape shape2(Index r, Index c) { return Shape{r, c}; }

}  // namespace

Array matmul(const Array& a, const Array& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner extents differ, " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  Mat out = a.value() * b.value();
  const Index out_rows = out.rows(), out_cols = out.cols();
  return Array::make(
      shape2(out_rows, out_cols), std::move(out), {a, b},
      [a, b](const Mat& g, GradAccumulator& acc) {
        if (acc.needs(0)) acc.add(0, g * b.value().transpose());
        if (acc.needs(1)) acc.add(1, a.value().transpose() * g);
      },
      "matmul");
}

Array matmul_nt(const Array& a, const Array& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: column extents differ, " + to_string(a.shape()) + " x " +
                     to_string(b.shape()) + "^T");
  }
  Mat out = a.value() * b.value().transpose();
  const Index out_rows = out.rows(), out_cols = out.cols();
  return Array::make(
      shape2(out_rows, out_cols), std::move(out), {a, b},
      [a, b](const Mat& g, GradAccumulator& acc) {
        if (acc.needs(0)) acc.add(0, g * b.value());
        if (acc.needs(1)) acc.add(1, g.transpose() * a.value());
      },
      "matmul_nt");
}

Array transpose(const Array& a) {
  Mat out = a.value().transpose();
  const Index out_rows = out.rows(), out_cols = out.cols();
  return Array::make(
      shape2(out_rows, out_cols), std::move(out), {a},
      [](const Mat& g, GradAccumulator& acc) { acc.add(0, g.transpose()); }, "transpose");
}

Array add(const Array& a, const Array& b) {
  require_same(a, b, "add");
  return Array::make(
      a.shape(), a.value() + b.value(), {a, b},
      [](const Mat& g, GradAccumulator& acc) {
        acc.add(0, g);
        acc.add(1, g);
      },
      "add");
}

Array sub(const Array& a, const Array& b) {
  require_same(a, b, "sub");
  return Array::make(
      a.shape(), a.value() - b.value(), {a, b},
      [](const Mat& g, GradAccumulator& acc) {
        acc.add(0, g);
        if (acc.needs(1)) acc.add(1, -g);
      },
      "sub");
}

Array mul(const Array& a, const Array& b) {
  require_same(a, b, "mul");
  return Array::make(
      a.shape(), a.value().cwiseProduct(b.value()), {a, b},
      [a, b](const Mat& g, GradAccumulator& acc) {
        if (acc.needs(0)) acc.add(0, g.cwiseProduct(b.value()));
        if (acc.needs(1)) acc.add(1, g.cwiseProduct(a.value()));
      },
      "mul");
}

Array scale(const Array& a, double s) {
  return Array::make(
      a.shape(), a.value() * s, {a},
      [s](const Mat& g, GradAccumulator& acc) { acc.add(0, g * s); }, "scale");
}

Array add_row(const Array& x, const Array& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw ShapeError("add_row: row " + to_string(row.shape()) + " does not fit " +
                     to_string(x.shape()));
  }
  Mat out = x.value().rowwise() + row.value().row(0);
  const Index out_rows = out.rows(), out_cols = out.cols();
  return Array::make(
      shape2(out_rows, out_cols), std::move(out), {x, row},
      [](const Mat& g, GradAccumulator& acc) {
        acc.add(0, g);
        if (acc.needs(1)) acc.add(1, g.colwise().sum());
      },
      "add_row");
}

Array broadcast_rows(const Array& row, Index n) {
  if (row.rows() != 1 || n < 1) throw ShapeError("broadcast_rows: needs a 1 x d row and n >= 1");
  Mat out = row.value().replicate(n, 1);
  return Array::make(
      shape2(n, row.cols()), std::move(out), {row},
      [](const Mat& g, GradAccumulator& acc) { acc.add(0, g.colwise().sum()); },
      "broadcast_rows");
}

Array gelu(const Array& x) {
  // exact form x * Phi(x)
  const Mat& v = x.value();
  Mat out = v.unaryExpr([](double t) { return 0.5 * t * std::erfc(-t / std::numbers::sqrt2); });
  return Array::make(
      x.shape(), std::move(out), {x},
      [x](const Mat& g, GradAccumulator& acc) {
        const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
        Mat d = x.value().unaryExpr([inv_sqrt_2pi](double t) {
          return 0.5 * std::erfc(-t / std::numbers::sqrt2) + t * inv_sqrt_2pi * std::exp(-0.5 * t * t);
        });
        acc.add(0, g.cwiseProduct(d));
      },
      "gelu");
}

double sigmoid_scalar(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double softplus_scalar(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

Array sigmoid(const Array& x) {
  Mat out = x.value().unaryExpr([](double t) { return sigmoid_scalar(t); });
  Mat s = out;
  return Array::make(
      x.shape(), std::move(out), {x},
      [s](const Mat& g, GradAccumulator& acc) {
        acc.add(0, g.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
      },
      "sigmoid");
}

Array softplus(const Array& x) {
  Mat out = x.value().unaryExpr([](double t) { return softplus_scalar(t); });
  return Array::make(
      x.shape(), std::move(out), {x},
      [x](const Mat& g, GradAccumulator& acc) {
        acc.add(0, g.cwiseProduct(x.value().unaryExpr([](double t) { return sigmoid_scalar(t); })));
      },
      "softplus");
}

Array sum(const Array& x) {
  const Index r = x.rows(), c = x.cols();
  return Array::make(
      shape2(1, 1), Mat::Constant(1, 1, x.value().sum()), {x},
      [r, c](const Mat& g, GradAccumulator& acc) { acc.add(0, Mat::Constant(r, c, g(0, 0))); },
      "sum");
}

Array mean(const Array& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Array slice_rows(const Array& x, Index begin, Index count) {
  if (begin < 0 || count < 1 || begin + count > x.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") outside " + to_string(x.shape()));
  }
  const Index r = x.rows(), c = x.cols();
  Mat out = x.value().middleRows(begin, count);
  return Array::make(
      shape2(count, c), std::move(out), {x},
      [r, c, begin, count](const Mat& g, GradAccumulator& acc) {
        Mat full = Mat::Zero(r, c);
        full.middleRows(begin, count) = g;
        acc.add(0, full);
      },
      "slice_rows");
}

Array slice_cols(const Array& x, Index begin, Index count) {
  if (begin < 0 || count < 1 || begin + count > x.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") outside " + to_string(x.shape()));
  }
  const Index r = x.rows(), c = x.cols();
  Mat out = x.value().middleCols(begin, count);
  return Array::make(
      shape2(r, count), std::move(out), {x},
      [r, c, begin, count](const Mat& g, GradAccumulator& acc) {
        Mat full = Mat::Zero(r, c);
        full.middleCols(begin, count) = g;
        acc.add(0, full);
      },
      "slice_cols");
}

Array concat_rows(std::span<const Array> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Index c = parts.front().cols();
  Index total = 0;
  for (const Array& p : parts) {
    if (p.cols() != c) throw ShapeError("concat_rows: column extents differ");
    total += p.rows();
  }
  Mat out(total, c);
  std::vector<Index> offsets;
  Index at = 0;
  for (const Array& p : parts) {
    offsets.push_back(at);
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Array> inputs(parts.begin(), parts.end());
  std::vector<Index> lengths;
  for (const Array& p : parts) lengths.push_back(p.rows());
  return Array::make(
      shape2(total, c), std::move(out), std::move(inputs),
      [offsets, lengths](const Mat& g, GradAccumulator& acc) {
        for (std::size_t i = 0; i < offsets.size(); ++i) {
          if (acc.needs(i)) acc.add(i, g.middleRows(offsets[i], lengths[i]));
        }
      },
      "concat_rows");
}

Array concat_cols(std::span<const Array> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Index r = parts.front().rows();
  Index total = 0;
  for (const Array& p : parts) {
    if (p.rows() != r) throw ShapeError("concat_cols: row extents differ");
    total += p.cols();
  }
  Mat out(r, total);
  std::vector<Index> offsets, widths;
  Index at = 0;
  for (const Array& p : parts) {
    offsets.push_back(at);
    widths.push_back(p.cols());
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Array> inputs(parts.begin(), parts.end());
  return Array::make(
      shape2(r, total), std::move(out), std::move(inputs),
      [offsets, widths](const Mat& g, GradAccumulator& acc) {
        for (std::size_t i = 0; i < offsets.size(); ++i) {
          if (acc.needs(i)) acc.add(i, g.middleCols(offsets[i], widths[i]));
        }
      },
      "concat_cols");
}

Array gather(const Array& table, const IndexMat& index) {
  const Index n = table.size();
  Mat out(index.rows(), index.cols());
  for (Index i = 0; i < index.size(); ++i) {
    const Index k = index.data()[i];
    if (k < 0 || k >= n) throw ShapeError("gather: index out of range");
    out.data()[i] = table.value().data()[k];
  }
  const Index tr = table.rows(), tc = table.cols();
  const Index out_rows = out.rows(), out_cols = out.cols();
  return Array::make(
      shape2(out_rows, out_cols), std::move(out), {table},
      [index, tr, tc](const Mat& g, GradAccumulator& acc) {
        Mat full = Mat::Zero(tr, tc);
        for (Index i = 0; i < index.size(); ++i) full.data()[index.data()[i]] += g.data()[i];
        acc.add(0, full);
      },
      "gather");
}

Array stop_gradient(const Array& x) { return Array(x.shape(), x.value(), false); }

Array layer_norm(const Array& x, const Array& gain, const Array& bias, double eps) {
  const Index d = x.cols();
  if (gain.size() != d || bias.size() != d || gain.rows() != 1 || bias.rows() != 1) {
    throw ShapeError("layer_norm: gain/bias must be 1 x " + std::to_string(d));
  }
  const Mat& v = x.value();
  Eigen::VectorXd mu = v.rowwise().mean();
  Mat centered = v.colwise() - mu;
  Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(d)) + eps).rsqrt().matrix();
  Mat xhat = centered.array().colwise() * inv_std.array();
  Mat out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
            bias.value().row(0).array();
  return Array::make(
      x.shape(), std::move(out), {x, gain, bias},
      [xhat, inv_std, gain, d](const Mat& g, GradAccumulator& acc) {
        if (acc.needs(0)) {
          Mat dxhat = g.array().rowwise() * gain.value().row(0).array();
          Eigen::VectorXd m1 = dxhat.rowwise().mean();
          Eigen::VectorXd m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
          Mat dx = dxhat;
          dx.colwise() -= m1;
          dx -= (xhat.array().colwise() * m2.array()).matrix();
          dx = dx.array().colwise() * inv_std.array();
          acc.add(0, dx);
        }
        if (acc.needs(1)) acc.add(1, g.cwiseProduct(xhat).colwise().sum());
        if (acc.needs(2)) acc.add(2, g.colwise().sum());
        (void)d;
      },
      "layer_norm");
}

Array masked_softmax(const Array& x, const AdditiveMask& mask, AllHiddenRows policy) {
  if (mask.rows() != x.rows() || mask.cols() != x.cols()) {
    throw ShapeError("masked_softmax: mask " + std::to_string(mask.rows()) + "x" +
                     std::to_string(mask.cols()) + " does not match " + to_string(x.shape()));
  }
  const Mat& v = x.value();
  Mat out = Mat::Zero(v.rows(), v.cols());
  for (Index i = 0; i < v.rows(); ++i) {
    double hi = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < v.cols(); ++j) {
      if (std::isfinite(mask(i, j))) hi = std::max(hi, v(i, j) + mask(i, j));
    }
    if (!std::isfinite(hi)) {
      if (policy == AllHiddenRows::kError) {
        throw NumericError("masked_softmax: row " + std::to_string(i) + " has no visible entry");
      }
      continue;
    }
    double total = 0.0;
    for (Index j = 0; j < v.cols(); ++j) {
      if (!std::isfinite(mask(i, j))) continue;
      out(i, j) = std::exp(v(i, j) + mask(i, j) - hi);
      total += out(i, j);
    }
    out.row(i) /= total;
  }
  Mat y = out;
  return Array::make(
      x.shape(), std::move(out), {x},
      [y](const Mat& g, GradAccumulator& acc) {
        Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
        Mat dx = y.cwiseProduct((g.colwise() - dot));
        acc.add(0, dx);
      },
      "masked_softmax");
}

Array temporal_conv1d(const Array& x, const Array& kernel, Index stride) {
  if (kernel.shape().size() != 3) {
    throw ShapeError("temporal_conv1d: kernel must be (w, d_in, d_out), got " +
                     to_string(kernel.shape()));
  }
  const Index w = kernel.shape()[0], d_in = kernel.shape()[1], d_out = kernel.shape()[2];
  if (w % 2 == 0) throw ShapeError("temporal_conv1d: kernel width must be odd");
  if (stride < 1) throw ShapeError("temporal_conv1d: stride must be positive");
  if (x.cols() != d_in) {
    throw ShapeError("temporal_conv1d: input has " + std::to_string(x.cols()) +
                     " channels, kernel expects " + std::to_string(d_in));
  }
  const Index t_in = x.rows();
  const Index t_out = (t_in + stride - 1) / stride;
  const Index pad = w / 2;
  // im2col: row o holds the w taps centred at o * stride, zero outside.
  Mat cols = Mat::Zero(t_out, w * d_in);
  for (Index o = 0; o < t_out; ++o) {
    for (Index k = 0; k < w; ++k) {
      const Index src = o * stride + k - pad;
      if (src >= 0 && src < t_in) cols.block(o, k * d_in, 1, d_in) = x.value().row(src);
    }
  }
  Mat out = cols * kernel.value();
  return Array::make(
      shape2(t_out, d_out), std::move(out), {x, kernel},
      [cols, kernel, t_in, t_out, w, d_in, pad, stride](const Mat& g, GradAccumulator& acc) {
        if (acc.needs(1)) acc.add(1, cols.transpose() * g);
        if (acc.needs(0)) {
          Mat dcols = g * kernel.value().transpose();
          Mat dx = Mat::Zero(t_in, d_in);
          for (Index o = 0; o < t_out; ++o) {
            for (Index k = 0; k < w; ++k) {
              const Index src = o * stride + k - pad;
              if (src >= 0 && src < t_in) dx.row(src) += dcols.block(o, k * d_in, 1, d_in);
            }
          }
          acc.add(0, dx);
        }
      },
      "temporal_conv1d");
}

}  // namespace xltal
