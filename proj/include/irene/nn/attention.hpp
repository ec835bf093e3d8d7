#pragma once

#include <cmath>
#include <vector>

#include "irene/nn/ops.hpp"

namespace irene::nn {

struct AttentionParams {
  Tensor w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;  // d x d weights, 1 x d biases
};

/// Multi-head scaled dot-product self-attention over the rows of `x` (seq x d). `padding`, when
/// given, flags padded positions: they receive no attention and their output rows are zero.
/// `weights_out` optionally receives the per-head attention matrices.
inline Tensor multi_head_self_attention(const Tensor& x, const AttentionParams& p, int heads,
                                        const std::vector<char>& padding = {},
                                        std::vector<Tensor>* weights_out = nullptr) {
  const Index d = x.cols();
  detail::require(heads > 0 && d % heads == 0, "attention: model width must be divisible by the head count");
  detail::require(p.w_q.rows() == d && p.w_q.cols() == d, "attention: projection weights must be d x d");
  detail::require(padding.empty() || static_cast<Index>(padding.size()) == x.rows(),
                  "attention: padding mask length must equal the sequence length");
  const Index dh = d / heads;
  const std::vector<char> mask = padding.empty() ? std::vector<char>(static_cast<std::size_t>(x.rows()), 0) : padding;

  const Tensor q = scale(linear(x, p.w_q, p.b_q), 1.0 / std::sqrt(static_cast<double>(dh)));
  const Tensor k = linear(x, p.w_k, p.b_k);
  const Tensor v = linear(x, p.w_v, p.b_v);
  std::vector<Tensor> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const Tensor qh = slice_cols(q, h * dh, dh);
    const Tensor kh = slice_cols(k, h * dh, dh);
    const Tensor vh = slice_cols(v, h * dh, dh);
    const Tensor w = masked_softmax(matmul_nt(qh, kh), mask);
    if (weights_out) weights_out->push_back(w);
    outs.push_back(matmul(w, vh));
  }
  Tensor out = linear(heads == 1 ? outs.front() : concat_cols(outs), p.w_o, p.b_o);
  if (!padding.empty()) {
    Mat keep(out.rows(), 1);
    for (Index r = 0; r < out.rows(); ++r) keep(r, 0) = padding[static_cast<std::size_t>(r)] ? 0.0 : 1.0;
    out = mul(out, Tensor::constant(keep.replicate(1, d)));
  }
  return out;
}

}  // namespace irene::nn
