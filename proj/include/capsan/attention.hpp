#pragma once

#include <random>

#include "capsan/tensor.hpp"

namespace capsan {

// Per-head projection blocks for one attention sublayer. Heads are kept as
// separate d x d_head slices of a rank-3 tensor rather than one fused matrix.
struct MultiHeadProjection {
  int d_model = 0;
  int heads = 0;
  Tensor wq, wk, wv;  // (heads, d_model, d_head)
  Tensor wo;          // (d_model, d_model)
  Tensor bo;          // (1, d_model)

  static MultiHeadProjection init(int d_model, int heads, std::mt19937_64& rng);
  int d_head() const { return d_model / heads; }
};

// (L, d_model) -> (heads, L, d_head)
Tensor project_heads(const Tensor& x, const Tensor& w);

// Scaled dot-product logits: q (H, Lq, d_head), k (H, Lk, d_head) -> (H, Lq, Lk),
// scaled by 1/sqrt(d_head).
Tensor attention_logits(const Tensor& q, const Tensor& k);

// weights (H, Lq, Lk) x v (H, Lk, d_head) -> (H, Lq, d_head)
Tensor attend_heads(const Tensor& weights, const Tensor& v);

// (H, L, d_head) -> (L, H * d_head)
Tensor merge_heads(const Tensor& per_head);

// (1, L, L) upper-triangle flags marking future positions.
Tensor causal_mask(int len);

// softmax over keys, optional dropout on the weights, weighted sum, head merge,
// output projection. weights_out, when non-null, receives the post-softmax
// weights before dropout.
Tensor attend(const Tensor& logits_cube, const Tensor& v, const MultiHeadProjection& p,
              Tensor* weights_out = nullptr, double attn_dropout = 0.0,
              std::mt19937_64* rng = nullptr);

}  // namespace capsan
