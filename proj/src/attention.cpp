#include "capsan/attention.hpp"

#include <cmath>
#include <stdexcept>

#include "capsan/init.hpp"

namespace capsan {

MultiHeadProjection MultiHeadProjection::init(int d_model, int heads, std::mt19937_64& rng) {
  if (heads < 1 || d_model % heads != 0)
    throw std::invalid_argument("attention: head count " + std::to_string(heads) +
                                " does not divide width " + std::to_string(d_model));
  MultiHeadProjection p;
  p.d_model = d_model;
  p.heads = heads;
  const int dh = d_model / heads;
  p.wq = xavier_uniform({heads, d_model, dh}, d_model, dh, rng);
  p.wk = xavier_uniform({heads, d_model, dh}, d_model, dh, rng);
  p.wv = xavier_uniform({heads, d_model, dh}, d_model, dh, rng);
  p.wo = xavier_uniform({d_model, d_model}, d_model, d_model, rng);
  p.bo = Tensor::zeros({1, d_model}, true);
  return p;
}

Tensor project_heads(const Tensor& x, const Tensor& w) {
  if (x.rank() != 2 || w.rank() != 3 || x.dim(1) != w.dim(1))
    throw std::invalid_argument("project_heads: got input " + shape_str(x.shape()) +
                                " and weights " + shape_str(w.shape()));
  return matmul(reshape(x, {1, x.dim(0), x.dim(1)}), w);
}

Tensor attention_logits(const Tensor& q, const Tensor& k) {
  if (q.rank() != 3 || k.rank() != 3 || q.dim(2) != k.dim(2))
    throw std::invalid_argument("attention_logits: got q " + shape_str(q.shape()) + " and k " +
                                shape_str(k.shape()));
  return scale(matmul(q, transpose_last_two(k)), 1.0 / std::sqrt(static_cast<double>(q.dim(2))));
}

Tensor attend_heads(const Tensor& weights, const Tensor& v) { return matmul(weights, v); }

Tensor merge_heads(const Tensor& per_head) {
  const int h = per_head.dim(0), l = per_head.dim(1), dh = per_head.dim(2);
  return reshape(permute(per_head, {1, 0, 2}), {l, h * dh});
}

Tensor causal_mask(int len) {
  Tensor m = Tensor::zeros({1, len, len});
  for (int i = 0; i < len; ++i)
    for (int j = i + 1; j < len; ++j) m.at({0, i, j}) = 1.0;
  return m;
}

Tensor attend(const Tensor& logits_cube, const Tensor& v, const MultiHeadProjection& p,
              Tensor* weights_out, double attn_dropout, std::mt19937_64* rng) {
  Tensor weights = softmax_last_axis(logits_cube);
  if (weights_out) *weights_out = weights;
  weights = dropout(weights, attn_dropout, rng);
  Tensor merged = merge_heads(attend_heads(weights, v));
  return add(matmul(merged, p.wo), p.bo);
}

}  // namespace capsan
