#include "capsan/routing.hpp"

#include <stdexcept>

namespace capsan {

Tensor squash_last_axis(const Tensor& s) {
  Tensor norm = l2_norm(s, -1, true);
  Tensor norm_sq = mul(norm, norm);
  Tensor coef = div(norm_sq, mul(add_scalar(norm_sq, 1.0), add_scalar(norm, 1e-12)));
  return mul(s, coef);
}

RoutingResult dynamic_routing(const VoteSet& vote_set, bool detach_coupling) {
  const Tensor& v = vote_set.votes;
  if (v.rank() != 3)
    throw std::invalid_argument("dynamic_routing: votes must be (M,N,K), got " +
                                shape_str(v.shape()));
  if (vote_set.iterations < 1)
    throw std::invalid_argument("dynamic_routing: iteration count must be >= 1, got " +
                                std::to_string(vote_set.iterations));
  const int m = v.dim(0), n = v.dim(1), k = v.dim(2);

  RoutingResult res;
  res.b = Tensor::zeros({m, n});
  for (int it = 0; it < vote_set.iterations; ++it) {
    res.coupling = softmax_last_axis(detach_coupling ? detach(res.b) : res.b);
    Tensor weighted = mul(reshape(res.coupling, {m, n, 1}), v);
    Tensor s = reduce_sum(weighted, 0);
    res.omega = squash_last_axis(s);
    Tensor agreement = reduce_sum(mul(v, reshape(res.omega, {1, n, k})), 2);
    res.b = add(res.b, agreement);
  }
  return res;
}

}  // namespace capsan
