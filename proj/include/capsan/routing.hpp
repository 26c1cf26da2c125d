#pragma once

#include "capsan/tensor.hpp"

namespace capsan {

// M input capsules each casting one K-dimensional vote per output capsule.
struct VoteSet {
  Tensor votes;  // (M, N, K)
  int iterations = 3;
};

struct RoutingResult {
  Tensor omega;     // (N, K) output capsules
  Tensor b;         // (M, N) accumulated vote weights after the final update
  Tensor coupling;  // (M, N) softmax weights used in the final iteration
};

// Norm-bounded rescaling along the last axis: s * ||s||^2 / ((1 + ||s||^2)(||s|| + eps)).
Tensor squash_last_axis(const Tensor& s);

// Routing-by-agreement. The iteration loop is laid out in the graph, so
// gradients flow through every coupling softmax unless detach_coupling cuts
// them at the softmax inputs.
RoutingResult dynamic_routing(const VoteSet& vote_set, bool detach_coupling = false);

}  // namespace capsan
