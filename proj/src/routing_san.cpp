#include "capsan/routing_san.hpp"

#include <stdexcept>

#include "capsan/errors.hpp"
#include "capsan/init.hpp"

namespace capsan {

AcceptanceGate AcceptanceGate::init(int heads, std::mt19937_64& rng) {
  AcceptanceGate g;
  g.w = xavier_uniform({heads, heads}, heads, heads, rng);
  g.b = Tensor::zeros({1, heads}, true);
  return g;
}

namespace {

void check_cube(const Tensor& cube, const char* op) {
  if (cube.rank() != 3)
    throw std::invalid_argument(std::string(op) + ": expected a (H,L,K) cube, got " +
                                shape_str(cube.shape()));
}

}  // namespace

std::vector<Tensor> split_vertical(const Tensor& cube) {
  check_cube(cube, "split_vertical");
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(cube.dim(0)));
  for (int h = 0; h < cube.dim(0); ++h)
    out.push_back(reshape(slice(cube, 0, h, 1), {cube.dim(1), cube.dim(2)}));
  return out;
}

std::vector<Tensor> split_horizontal(const Tensor& cube) {
  check_cube(cube, "split_horizontal");
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(cube.dim(1)));
  for (int l = 0; l < cube.dim(1); ++l)
    out.push_back(reshape(slice(cube, 1, l, 1), {cube.dim(0), cube.dim(2)}));
  return out;
}

Tensor vertical_routing(const Tensor& cube, const AcceptanceGate& gate, int iterations,
                        bool detach_coupling) {
  check_cube(cube, "vertical_routing");
  const int h = cube.dim(0), l = cube.dim(1), k = cube.dim(2);
  // Head h votes its attention vector e_{l,h} toward output capsule l, so the
  // cube itself is the (M=H, N=L, K) vote set.
  RoutingResult res = dynamic_routing({cube, iterations}, detach_coupling);
  Tensor b_sum = reduce_sum(res.b, 1);
  Tensor gate_logits = add(reshape(matmul(gate.w, reshape(b_sum, {h, 1})), {1, h}), gate.b);
  Tensor lambda = softmax_last_axis(gate_logits);
  return mul(reshape(lambda, {h, 1, 1}), reshape(res.omega, {1, l, k}));
}

Tensor horizontal_routing(const Tensor& cube, int iterations, bool detach_coupling) {
  check_cube(cube, "horizontal_routing");
  const int h = cube.dim(0), l = cube.dim(1), k = cube.dim(2);
  std::vector<Tensor> slabs;
  slabs.reserve(static_cast<std::size_t>(l));
  for (int pos = 0; pos < l; ++pos) {
    // Token t <= pos votes its attention vector e_{t,h} toward output capsule h.
    Tensor votes = permute(slice(cube, 1, 0, pos + 1), {1, 0, 2});
    RoutingResult res = dynamic_routing({votes, iterations}, detach_coupling);
    slabs.push_back(reshape(res.omega, {h, 1, k}));
  }
  return concat(slabs, 1);
}

Tensor capsule_san_forward(const Tensor& x, const MultiHeadProjection& p,
                           const AcceptanceGate* gate, const RoutingFlags& flags, bool causal,
                           Tensor* weights_out, double attn_dropout, std::mt19937_64* rng) {
  if (flags.vertical && causal)
    throw ConfigError("vertical routing is not available under causal masking");
  if (flags.vertical && gate == nullptr)
    throw std::logic_error("capsule_san_forward: vertical routing needs a gate");

  Tensor q = project_heads(x, p.wq);
  Tensor k = project_heads(x, p.wk);
  Tensor v = project_heads(x, p.wv);
  Tensor cube = attention_logits(q, k);

  Tensor mask;
  Tensor base = cube;
  if (causal) {
    mask = causal_mask(x.dim(0));
    // Future positions are zeroed, not -1e9, so they drop out of vote norms
    // and dot products instead of dominating them.
    base = masked_fill(cube, mask, 0.0);
  }

  Tensor logits = base;
  if (flags.vertical) logits = add(logits, vertical_routing(base, *gate, flags.iterations, flags.detach_coupling));
  if (flags.horizontal)
    logits = add(logits, horizontal_routing(base, flags.iterations, flags.detach_coupling));
  if (causal) logits = masked_fill(logits, mask, kMaskSentinel);

  return attend(logits, v, p, weights_out, attn_dropout, rng);
}

}  // namespace capsan
