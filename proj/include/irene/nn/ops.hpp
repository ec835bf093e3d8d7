#pragma once

#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "irene/nn/tensor.hpp"

namespace irene::nn {

using SparseMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeMismatch(what);
}

enum class Broadcast { none, row, scalar };

inline Broadcast broadcast_kind(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::none;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::row;
  if (b.size() == 1) return Broadcast::scalar;
  throw ShapeMismatch(std::string(op) + ": cannot combine " + shape_str(a) + " with " + shape_str(b));
}

inline Mat reduce_to(const Mat& g, Broadcast k) {
  switch (k) {
    case Broadcast::row: return g.colwise().sum();
    case Broadcast::scalar: return Mat::Constant(1, 1, g.sum());
    default: return g;
  }
}

inline Mat expand(const Mat& b, Index rows, Index cols, Broadcast k) {
  switch (k) {
    case Broadcast::row: return b.replicate(rows, 1);
    case Broadcast::scalar: return Mat::Constant(rows, cols, b(0, 0));
    default: return b;
  }
}

inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace detail

/// a + b, where b may also be a row vector or a scalar broadcast over a.
inline Tensor add(const Tensor& a, const Tensor& b) {
  const auto k = detail::broadcast_kind(a.value(), b.value(), "add");
  Mat out = a.value() + detail::expand(b.value(), a.rows(), a.cols(), k);
  return make_result(std::move(out), "add", {&a, &b}, [k](Node& self) {
    if (wants_grad(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants_grad(self, 1)) self.parents[1]->accumulate(detail::reduce_to(self.grad, k));
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  const auto k = detail::broadcast_kind(a.value(), b.value(), "sub");
  Mat out = a.value() - detail::expand(b.value(), a.rows(), a.cols(), k);
  return make_result(std::move(out), "sub", {&a, &b}, [k](Node& self) {
    if (wants_grad(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants_grad(self, 1)) self.parents[1]->accumulate(-detail::reduce_to(self.grad, k));
  });
}

/// Elementwise product with the same broadcasting rules as add.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  const auto k = detail::broadcast_kind(a.value(), b.value(), "mul");
  Mat bx = detail::expand(b.value(), a.rows(), a.cols(), k);
  Mat out = a.value().cwiseProduct(bx);
  return make_result(std::move(out), "mul", {&a, &b}, [k, bx = std::move(bx)](Node& self) {
    if (wants_grad(self, 0)) self.parents[0]->accumulate(self.grad.cwiseProduct(bx));
    if (wants_grad(self, 1))
      self.parents[1]->accumulate(detail::reduce_to(self.grad.cwiseProduct(self.parents[0]->value), k));
  });
}

inline Tensor scale(const Tensor& a, double s) {
  return make_result(a.value() * s, "scale", {&a}, [s](Node& self) { self.parents[0]->accumulate(self.grad * s); });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require(a.cols() == b.rows(), "matmul: " + shape_str(a.value()) + " x " + shape_str(b.value()));
  Mat out = a.value() * b.value();
  return make_result(std::move(out), "matmul", {&a, &b}, [](Node& self) {
    const Mat& av = self.parents[0]->value;
    const Mat& bv = self.parents[1]->value;
    if (wants_grad(self, 0)) self.parents[0]->accumulate_product(self.grad * bv.transpose());
    if (wants_grad(self, 1)) self.parents[1]->accumulate_product(av.transpose() * self.grad);
  });
}

/// a * b^T.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require(a.cols() == b.cols(), "matmul_nt: " + shape_str(a.value()) + " x " + shape_str(b.value()) + "^T");
  Mat out = a.value() * b.value().transpose();
  return make_result(std::move(out), "matmul_nt", {&a, &b}, [](Node& self) {
    const Mat& av = self.parents[0]->value;
    const Mat& bv = self.parents[1]->value;
    if (wants_grad(self, 0)) self.parents[0]->accumulate_product(self.grad * bv);
    if (wants_grad(self, 1)) self.parents[1]->accumulate_product(self.grad.transpose() * av);
  });
}

/// x W + b with W stored as (in x out) and b as (1 x out).
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  detail::require(x.cols() == w.rows(), "linear: input " + shape_str(x.value()) + " vs weight " + shape_str(w.value()));
  detail::require(b.rows() == 1 && b.cols() == w.cols(), "linear: bias " + shape_str(b.value()));
  Mat out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return make_result(std::move(out), "linear", {&x, &w, &b}, [](Node& self) {
    const Mat& xv = self.parents[0]->value;
    const Mat& wv = self.parents[1]->value;
    if (wants_grad(self, 0)) self.parents[0]->accumulate_product(self.grad * wv.transpose());
    if (wants_grad(self, 1)) self.parents[1]->accumulate_product(xv.transpose() * self.grad);
    if (wants_grad(self, 2)) self.parents[2]->accumulate(self.grad.colwise().sum());
  });
}

inline Tensor relu(const Tensor& x) {
  Mat out = x.value().cwiseMax(0.0);
  return make_result(std::move(out), "relu", {&x}, [](Node& self) {
    const Mat& xv = self.parents[0]->value;
    self.parents[0]->accumulate(self.grad.cwiseProduct((xv.array() > 0.0).cast<double>().matrix()));
  });
}

inline Tensor elu(const Tensor& x, double alpha = 1.0) {
  Mat out = x.value().unaryExpr([alpha](double v) { return v > 0 ? v : alpha * std::expm1(v); });
  return make_result(std::move(out), "elu", {&x}, [alpha](Node& self) {
    const Mat& xv = self.parents[0]->value;
    Mat d = xv.unaryExpr([alpha](double v) { return v > 0 ? 1.0 : alpha * std::exp(v); });
    self.parents[0]->accumulate(self.grad.cwiseProduct(d));
  });
}

/// Tanh approximation of GELU.
inline Tensor gelu(const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double k = 0.044715;
  const Mat& xv = x.value();
  Mat t = xv.unaryExpr([](double v) { return std::tanh(c * (v + k * v * v * v)); });
  Mat out = (0.5 * xv.array() * (1.0 + t.array())).matrix();
  return make_result(std::move(out), "gelu", {&x}, [t = std::move(t)](Node& self) {
    const double c2 = c, k2 = k;
    const auto v = self.parents[0]->value.array();
    const auto ta = t.array();
    self.parents[0]->accumulate_expr(
        (self.grad.array() * (0.5 * (1.0 + ta) + 0.5 * v * (1.0 - ta * ta) * c2 * (1.0 + 3.0 * k2 * v * v))).matrix());
  });
}

inline Tensor sigmoid(const Tensor& x) {
  Mat out = x.value().unaryExpr([](double v) { return detail::sigmoid(v); });
  return make_result(std::move(out), "sigmoid", {&x}, [](Node& self) {
    const Mat& y = self.value;
    self.parents[0]->accumulate(self.grad.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

inline Tensor tanh(const Tensor& x) {
  Mat out = x.value().array().tanh().matrix();
  return make_result(std::move(out), "tanh", {&x}, [](Node& self) {
    const Mat& y = self.value;
    self.parents[0]->accumulate(self.grad.cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

/// Normalizes every row to zero mean and unit variance, then applies gamma and beta (both 1 x cols).
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  const Index n = x.cols();
  detail::require(gamma.rows() == 1 && gamma.cols() == n && beta.rows() == 1 && beta.cols() == n,
                  "layer_norm: gamma/beta must be 1x" + std::to_string(n));
  const Mat& xv = x.value();
  Mat xhat(xv.rows(), n);
  Eigen::VectorXd inv_std(xv.rows());
  for (Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Mat out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return make_result(std::move(out), "layer_norm", {&x, &gamma, &beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       const Mat& g = self.grad;
                       const Mat& gam = self.parents[1]->value;
                       if (wants_grad(self, 0)) {
                         const Index n = g.cols();
                         Mat dx(g.rows(), n);
                         for (Index r = 0; r < g.rows(); ++r) {
                           Eigen::RowVectorXd dxhat = g.row(r).cwiseProduct(gam.row(0));
                           const double m1 = dxhat.mean();
                           const double m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
                           dx.row(r) = inv_std(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2);
                         }
                         self.parents[0]->accumulate(dx);
                       }
                       if (wants_grad(self, 1)) self.parents[1]->accumulate(g.cwiseProduct(xhat).colwise().sum());
                       if (wants_grad(self, 2)) self.parents[2]->accumulate(g.colwise().sum());
                     });
}

namespace detail {

/// Row softmax; entries whose mask byte is nonzero are treated as -inf. Rows with every entry
/// masked produce zeros.
inline Mat softmax_rows(const Mat& x, const std::vector<char>* key_mask) {
  Mat out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < x.cols(); ++c)
      if (!key_mask || !(*key_mask)[static_cast<std::size_t>(c)]) mx = std::max(mx, x(r, c));
    if (mx == -std::numeric_limits<double>::infinity()) {
      out.row(r).setZero();
      continue;
    }
    double sum = 0.0;
    for (Index c = 0; c < x.cols(); ++c) {
      const double e = (key_mask && (*key_mask)[static_cast<std::size_t>(c)]) ? 0.0 : std::exp(x(r, c) - mx);
      out(r, c) = e;
      sum += e;
    }
    out.row(r) /= sum;
  }
  return out;
}

inline Mat softmax_backward(const Mat& y, const Mat& g) {
  Mat dx(y.rows(), y.cols());
  for (Index r = 0; r < y.rows(); ++r) {
    const double dot = y.row(r).dot(g.row(r));
    dx.row(r) = y.row(r).array() * (g.row(r).array() - dot);
  }
  return dx;
}

}  // namespace detail

/// Softmax along `axis` (1: across columns of each row, 0: down each column).
inline Tensor softmax(const Tensor& x, int axis = 1) {
  detail::require(axis == 0 || axis == 1, "softmax: axis must be 0 or 1");
  if (axis == 1) {
    Mat out = detail::softmax_rows(x.value(), nullptr);
    return make_result(std::move(out), "softmax", {&x},
                       [](Node& self) { self.parents[0]->accumulate(detail::softmax_backward(self.value, self.grad)); });
  }
  Mat out = detail::softmax_rows(x.value().transpose(), nullptr).transpose();
  return make_result(std::move(out), "softmax", {&x}, [](Node& self) {
    Mat yt = self.value.transpose(), gt = self.grad.transpose();
    self.parents[0]->accumulate(detail::softmax_backward(yt, gt).transpose());
  });
}

/// Row softmax that gives zero weight to the columns flagged in `key_mask`.
inline Tensor masked_softmax(const Tensor& x, const std::vector<char>& key_mask) {
  detail::require(static_cast<Index>(key_mask.size()) == x.cols(), "masked_softmax: mask length must equal columns");
  Mat out = detail::softmax_rows(x.value(), &key_mask);
  return make_result(std::move(out), "masked_softmax", {&x},
                     [](Node& self) { self.parents[0]->accumulate(detail::softmax_backward(self.value, self.grad)); });
}

/// Mean along `axis`: 0 collapses rows (result 1 x cols), 1 collapses columns (rows x 1).
inline Tensor mean_pool(const Tensor& x, int axis = 0) {
  detail::require(axis == 0 || axis == 1, "mean_pool: axis must be 0 or 1");
  detail::require(x.value().size() > 0, "mean_pool: empty input");
  if (axis == 0) {
    Mat out = x.value().colwise().mean();
    const Index n = x.rows();
    return make_result(std::move(out), "mean_pool", {&x}, [n](Node& self) {
      self.parents[0]->accumulate(self.grad.replicate(n, 1) / static_cast<double>(n));
    });
  }
  Mat out = x.value().rowwise().mean();
  const Index n = x.cols();
  return make_result(std::move(out), "mean_pool", {&x}, [n](Node& self) {
    self.parents[0]->accumulate(self.grad.replicate(1, n) / static_cast<double>(n));
  });
}

/// Mean of consecutive row blocks: rows [offsets[s], offsets[s+1]) form segment s.
inline Tensor segment_mean(const Tensor& x, const std::vector<Index>& offsets) {
  detail::require(offsets.size() >= 2 && offsets.front() == 0 && offsets.back() == x.rows(),
                  "segment_mean: offsets must start at 0 and end at the row count");
  const auto segs = static_cast<Index>(offsets.size() - 1);
  Mat out(segs, x.cols());
  for (Index s = 0; s < segs; ++s) {
    const Index a = offsets[static_cast<std::size_t>(s)], b = offsets[static_cast<std::size_t>(s + 1)];
    detail::require(b > a, "segment_mean: empty segment");
    out.row(s) = x.value().middleRows(a, b - a).colwise().mean();
  }
  return make_result(std::move(out), "segment_mean", {&x}, [offsets](Node& self) {
    Mat dx(self.parents[0]->value.rows(), self.grad.cols());
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      const Index a = offsets[s], b = offsets[s + 1];
      dx.middleRows(a, b - a) = self.grad.row(static_cast<Index>(s)).replicate(b - a, 1) / static_cast<double>(b - a);
    }
    self.parents[0]->accumulate(dx);
  });
}

inline Tensor sum(const Tensor& x) {
  const Index r = x.rows(), c = x.cols();
  return make_result(Mat::Constant(1, 1, x.value().sum()), "sum", {&x},
                     [r, c](Node& self) { self.parents[0]->accumulate(Mat::Constant(r, c, self.grad(0, 0))); });
}

inline Tensor mean(const Tensor& x) {
  detail::require(x.value().size() > 0, "mean: empty input");
  const Index r = x.rows(), c = x.cols();
  const double n = static_cast<double>(x.value().size());
  return make_result(Mat::Constant(1, 1, x.value().sum() / n), "mean", {&x},
                     [r, c, n](Node& self) { self.parents[0]->accumulate(Mat::Constant(r, c, self.grad(0, 0) / n)); });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  detail::require(!parts.empty(), "concat_cols: nothing to concatenate");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    detail::require(p.rows() == rows, "concat_cols: row counts differ");
    cols += p.cols();
  }
  Mat out(rows, cols);
  std::vector<Index> widths;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
    widths.push_back(p.cols());
  }
  return make_result(std::move(out), "concat_cols", parts, [widths](Node& self) {
    Index at = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (wants_grad(self, i)) self.parents[i]->accumulate(self.grad.middleCols(at, widths[i]));
      at += widths[i];
    }
  });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  detail::require(!parts.empty(), "concat_rows: nothing to concatenate");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    detail::require(p.cols() == cols, "concat_rows: column counts differ");
    rows += p.rows();
  }
  Mat out(rows, cols);
  std::vector<Index> heights;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
    heights.push_back(p.rows());
  }
  return make_result(std::move(out), "concat_rows", parts, [heights](Node& self) {
    Index at = 0;
    for (std::size_t i = 0; i < heights.size(); ++i) {
      if (wants_grad(self, i)) self.parents[i]->accumulate(self.grad.middleRows(at, heights[i]));
      at += heights[i];
    }
  });
}

inline Tensor slice_cols(const Tensor& x, Index start, Index len) {
  detail::require(start >= 0 && len >= 0 && start + len <= x.cols(), "slice_cols: range out of bounds");
  Mat out = x.value().middleCols(start, len);
  return make_result(std::move(out), "slice_cols", {&x}, [start, len](Node& self) {
    Node& p = *self.parents[0];
    if (p.grad.size() == 0) p.grad = Mat::Zero(p.value.rows(), p.value.cols());
    p.grad.middleCols(start, len) += self.grad;
  });
}

inline Tensor slice_rows(const Tensor& x, Index start, Index len) {
  detail::require(start >= 0 && len >= 0 && start + len <= x.rows(), "slice_rows: range out of bounds");
  Mat out = x.value().middleRows(start, len);
  return make_result(std::move(out), "slice_rows", {&x}, [start, len](Node& self) {
    Node& p = *self.parents[0];
    if (p.grad.size() == 0) p.grad = Mat::Zero(p.value.rows(), p.value.cols());
    p.grad.middleRows(start, len) += self.grad;
  });
}

inline Tensor gather_rows(const Tensor& x, const std::vector<Index>& idx) {
  Mat out(static_cast<Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    detail::require(idx[i] >= 0 && idx[i] < x.rows(), "gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = x.value().row(idx[i]);
  }
  return make_result(std::move(out), "gather_rows", {&x}, [idx](Node& self) {
    Node& p = *self.parents[0];
    if (p.grad.size() == 0) p.grad = Mat::Zero(p.value.rows(), p.value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) p.grad.row(idx[i]) += self.grad.row(static_cast<Index>(i));
  });
}

/// Stacks `n` copies of a single-row tensor.
inline Tensor repeat_rows(const Tensor& x, Index n) {
  detail::require(x.rows() == 1, "repeat_rows: input must be a single row");
  Mat out = x.value().replicate(n, 1);
  return make_result(std::move(out), "repeat_rows", {&x},
                     [](Node& self) { self.parents[0]->accumulate(self.grad.colwise().sum()); });
}

/// Constant sparse matrix times dense tensor.
inline Tensor spmm(const SparseMat& a, const Tensor& x) {
  detail::require(a.cols() == x.rows(), "spmm: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                            " times " + shape_str(x.value()));
  Mat out = a * x.value();
  return make_result(std::move(out), "spmm", {&x}, [a](Node& self) {
    self.parents[0]->accumulate_product(a.transpose() * self.grad);
  });
}

}  // namespace irene::nn
