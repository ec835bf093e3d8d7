#pragma once

#include <algorithm>
#include <numeric>
#include <utility>
#include <vector>

#include "irene/nn/ops.hpp"

namespace irene::nn {

/// Gate layout along the 4H axis: input, forget, cell candidate, output.
struct LstmParams {
  Tensor w_x;  // in x 4H
  Tensor w_h;  // H x 4H
  Tensor b;    // 1 x 4H

  Index hidden() const { return w_h.rows(); }
};

/// One LSTM step for a batch of rows, written with primitive ops.
inline std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h, const Tensor& c, const LstmParams& p) {
  const Index H = p.hidden();
  detail::require(p.w_h.cols() == 4 * H && p.w_x.cols() == 4 * H && p.b.cols() == 4 * H,
                  "lstm_cell: gate weights must have 4*hidden columns");
  detail::require(h.cols() == H && c.cols() == H && h.rows() == x.rows() && c.rows() == x.rows(),
                  "lstm_cell: state shape does not match the hidden size");
  const Tensor gates = add(linear(x, p.w_x, p.b), matmul(h, p.w_h));
  const Tensor i = sigmoid(slice_cols(gates, 0, H));
  const Tensor f = sigmoid(slice_cols(gates, H, H));
  const Tensor g = tanh(slice_cols(gates, 2 * H, H));
  const Tensor o = sigmoid(slice_cols(gates, 3 * H, H));
  Tensor c_next = add(mul(f, c), mul(i, g));
  Tensor h_next = mul(o, tanh(c_next));
  return {std::move(h_next), std::move(c_next)};
}

/// Runs an LSTM over each node's ordered neighbour list (rows of `x`) and returns the final hidden
/// state per node; nodes without neighbours get a zero row. All nodes advance together one
/// neighbour position per step, with a hand-written backward pass through time.
inline Tensor lstm_aggregate(const Tensor& x, const std::vector<std::vector<Index>>& neighbours, const LstmParams& p) {
  const Index N = static_cast<Index>(neighbours.size());
  const Index H = p.hidden();
  detail::require(x.rows() == N, "lstm_aggregate: one neighbour list per row of x is required");
  detail::require(p.w_x.rows() == x.cols() && p.w_x.cols() == 4 * H && p.w_h.cols() == 4 * H && p.b.cols() == 4 * H,
                  "lstm_aggregate: weight shapes do not match");

  std::vector<Index> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return neighbours[static_cast<std::size_t>(a)].size() > neighbours[static_cast<std::size_t>(b)].size();
  });
  const std::size_t steps = N ? neighbours[static_cast<std::size_t>(order[0])].size() : 0;
  for (const auto& nb : neighbours)
    for (Index j : nb) detail::require(j >= 0 && j < N, "lstm_aggregate: neighbour index out of range");

  struct Step {
    Index active;
    std::vector<Index> src;
    Mat i, f, g, o, c_prev, tanh_c, h_prev;
  };
  auto tape = std::make_shared<std::vector<Step>>();
  tape->reserve(steps);

  // only rows that appear as a neighbour are projected
  std::vector<Index> slot(static_cast<std::size_t>(N), -1);
  std::vector<Index> sources;
  for (const auto& nb : neighbours)
    for (Index j : nb)
      if (slot[static_cast<std::size_t>(j)] < 0) {
        slot[static_cast<std::size_t>(j)] = static_cast<Index>(sources.size());
        sources.push_back(j);
      }
  Mat xs(static_cast<Index>(sources.size()), x.cols());
  for (std::size_t k = 0; k < sources.size(); ++k) xs.row(static_cast<Index>(k)) = x.value().row(sources[k]);
  Mat proj;
  if (steps) proj = xs * p.w_x.value();
  Mat hs = Mat::Zero(N, H), cs = Mat::Zero(N, H);  // rows follow `order`
  std::size_t active = static_cast<std::size_t>(N);
  for (std::size_t t = 0; t < steps; ++t) {
    while (active > 0 && neighbours[static_cast<std::size_t>(order[active - 1])].size() <= t) --active;
    const auto A = static_cast<Index>(active);
    Step s;
    s.active = A;
    s.src.resize(active);
    Mat gates(A, 4 * H);
    for (std::size_t k = 0; k < active; ++k) {
      s.src[k] = slot[static_cast<std::size_t>(neighbours[static_cast<std::size_t>(order[k])][t])];
      gates.row(static_cast<Index>(k)) = proj.row(s.src[k]);
    }
    s.h_prev = hs.topRows(A);
    s.c_prev = cs.topRows(A);
    if (t > 0) gates.noalias() += s.h_prev * p.w_h.value();
    gates.rowwise() += p.b.value().row(0);
    s.i = gates.leftCols(H).unaryExpr([](double v) { return detail::sigmoid(v); });
    s.f = gates.middleCols(H, H).unaryExpr([](double v) { return detail::sigmoid(v); });
    s.g = gates.middleCols(2 * H, H).array().tanh().matrix();
    s.o = gates.rightCols(H).unaryExpr([](double v) { return detail::sigmoid(v); });
    Mat c_next = s.f.cwiseProduct(s.c_prev) + s.i.cwiseProduct(s.g);
    s.tanh_c = c_next.array().tanh().matrix();
    cs.topRows(A) = c_next;
    hs.topRows(A) = s.o.cwiseProduct(s.tanh_c);
    tape->push_back(std::move(s));
  }
  Mat out(N, H);
  for (Index k = 0; k < N; ++k) out.row(order[static_cast<std::size_t>(k)]) = hs.row(k);

  return make_result(std::move(out), "lstm_aggregate", {&x, &p.w_x, &p.w_h, &p.b},
                     [tape, order, sources, xs = std::move(xs), N, H](Node& self) {
                       const Mat& wx = self.parents[1]->value;
                       const Mat& wh = self.parents[2]->value;
                       Mat dh = Mat::Zero(N, H), dc = Mat::Zero(N, H);
                       for (Index k = 0; k < N; ++k) dh.row(k) = self.grad.row(order[static_cast<std::size_t>(k)]);
                       Mat dproj = Mat::Zero(static_cast<Index>(sources.size()), 4 * H);
                       // h_prev is zero at t=0, so only later steps feed dW_h
                       Index stacked = 0;
                       for (std::size_t t = 1; t < tape->size(); ++t) stacked += (*tape)[t].active;
                       Mat hstack(stacked, H), gstack(stacked, 4 * H);
                       Mat db = Mat::Zero(1, 4 * H);
                       for (std::size_t t = tape->size(); t-- > 0;) {
                         const Step& s = (*tape)[t];
                         const Index A = s.active;
                         Mat dht = dh.topRows(A);
                         Mat dct = dc.topRows(A).array() +
                                   dht.array() * s.o.array() * (1.0 - s.tanh_c.array().square());
                         Mat dgates(A, 4 * H);
                         dgates.leftCols(H) = (dct.array() * s.g.array() * s.i.array() * (1.0 - s.i.array())).matrix();
                         dgates.middleCols(H, H) =
                             (dct.array() * s.c_prev.array() * s.f.array() * (1.0 - s.f.array())).matrix();
                         dgates.middleCols(2 * H, H) = (dct.array() * s.i.array() * (1.0 - s.g.array().square())).matrix();
                         dgates.rightCols(H) =
                             (dht.array() * s.tanh_c.array() * s.o.array() * (1.0 - s.o.array())).matrix();
                         db += dgates.colwise().sum();
                         if (t > 0) {
                           stacked -= A;
                           hstack.middleRows(stacked, A) = s.h_prev;
                           gstack.middleRows(stacked, A) = dgates;
                           dh.topRows(A).noalias() = dgates * wh.transpose();
                           dc.topRows(A) = dct.cwiseProduct(s.f);
                         }
                         for (Index k = 0; k < A; ++k) dproj.row(s.src[static_cast<std::size_t>(k)]) += dgates.row(k);
                       }
                       if (tape->empty()) return;
                       if (wants_grad(self, 0)) {
                         const Mat ds = dproj * wx.transpose();
                         Mat dx = Mat::Zero(N, wx.rows());
                         for (std::size_t k = 0; k < sources.size(); ++k) dx.row(sources[k]) = ds.row(static_cast<Index>(k));
                         self.parents[0]->accumulate(dx);
                       }
                       if (wants_grad(self, 1)) self.parents[1]->accumulate_product(xs.transpose() * dproj);
                       if (wants_grad(self, 2)) self.parents[2]->accumulate_product(hstack.transpose() * gstack);
                       if (wants_grad(self, 3)) self.parents[3]->accumulate(db);
                     });
}

}  // namespace irene::nn
