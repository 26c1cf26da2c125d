#pragma once

#include <random>

#include "capsan/attention.hpp"
#include "capsan/routing.hpp"
#include "capsan/tensor.hpp"

namespace capsan {

// Per-layer head gate deciding how strongly each head absorbs the shared
// vertically-routed capsule.
struct AcceptanceGate {
  Tensor w;  // (heads, heads)
  Tensor b;  // (1, heads)

  static AcceptanceGate init(int heads, std::mt19937_64& rng);
};

struct RoutingFlags {
  bool vertical = false;
  bool horizontal = false;
  int iterations = 3;
  bool detach_coupling = false;
};

// Head-wise capsules: slab h is the (L, K) matrix of head h's attention vectors.
std::vector<Tensor> split_vertical(const Tensor& cube);
// Token-wise capsules: slab l is the (H, K) matrix of token l's attention
// vectors across heads.
std::vector<Tensor> split_horizontal(const Tensor& cube);

// Routes the H head capsules to L output capsules, then gates the shared
// (L, K) result per head. Returns a cube shaped like the input.
Tensor vertical_routing(const Tensor& cube, const AcceptanceGate& gate, int iterations,
                        bool detach_coupling = false);

// Positional routing: output slab at position l is routed from the token
// capsules at positions <= l only. Returns a cube shaped like the input.
Tensor horizontal_routing(const Tensor& cube, int iterations, bool detach_coupling = false);

// Full sublayer: logits cube, optional routing offsets added pre-softmax,
// masked attention when causal. gate may be null when vertical routing is off.
// Requesting vertical routing together with causal masking is rejected, since
// the routing softmax would leak information across positions.
Tensor capsule_san_forward(const Tensor& x, const MultiHeadProjection& p,
                           const AcceptanceGate* gate, const RoutingFlags& flags, bool causal,
                           Tensor* weights_out = nullptr, double attn_dropout = 0.0,
                           std::mt19937_64* rng = nullptr);

}  // namespace capsan
