#include "capsan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "capsan/errors.hpp"
#include "capsan/kernels.hpp"

namespace capsan {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int e : s) n *= static_cast<std::size_t>(e);
  return n;
}

namespace {

thread_local int g_no_grad_depth = 0;

void check_shape(const Shape& s, const char* op) {
  for (int e : s) {
    if (e <= 0) throw std::invalid_argument(std::string(op) + ": non-positive extent in shape " + shape_str(s));
  }
}

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[i] = st[i + 1] * static_cast<std::size_t>(s[i + 1]);
  return st;
}

// Per-output-dim operand strides for same-rank broadcasting; stride 0 where the
// operand extent is 1.
struct BroadcastPair {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;
};

BroadcastPair broadcast_pair(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size())
    throw std::invalid_argument(std::string(op) + ": rank mismatch between shapes " + shape_str(a) +
                                " and " + shape_str(b));
  BroadcastPair bp;
  bp.out.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || a[i] == 1 || b[i] == 1) {
      bp.out[i] = std::max(a[i], b[i]);
    } else {
      throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) +
                                  " and " + shape_str(b));
    }
  }
  auto sa = row_major_strides(a);
  auto sb = row_major_strides(b);
  bp.stride_a.resize(a.size());
  bp.stride_b.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    bp.stride_a[i] = (a[i] == 1 && bp.out[i] != 1) ? 0 : sa[i];
    bp.stride_b[i] = (b[i] == 1 && bp.out[i] != 1) ? 0 : sb[i];
  }
  return bp;
}

// Calls fn(out_index, a_index, b_index) for every element of the broadcast shape.
template <typename Fn>
void for_each_broadcast(const BroadcastPair& bp, Fn&& fn) {
  const std::size_t n = shape_numel(bp.out);
  const int rank = static_cast<int>(bp.out.size());
  if (rank == 0) {
    fn(0, 0, 0);
    return;
  }
  std::vector<int> coord(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t io = 0; io < n; ++io) {
    fn(io, ia, ib);
    for (int d = rank - 1; d >= 0; --d) {
      ++coord[d];
      ia += bp.stride_a[d];
      ib += bp.stride_b[d];
      if (coord[d] < bp.out[d]) break;
      ia -= bp.stride_a[d] * static_cast<std::size_t>(bp.out[d]);
      ib -= bp.stride_b[d] * static_cast<std::size_t>(bp.out[d]);
      coord[d] = 0;
    }
  }
}

Tensor make_op(const char* op, Shape shape, std::vector<double> value,
               std::vector<std::shared_ptr<Node>> parents,
               std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool rg = false;
  if (grad_enabled()) {
    for (const auto& p : parents) rg = rg || p->requires_grad;
  }
  n->requires_grad = rg;
  if (rg) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor(n);
}

int normalize_axis(int axis, int rank, const char* op) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank)
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                " out of range for rank " + std::to_string(rank));
  return a;
}

}  // namespace

bool grad_enabled() { return g_no_grad_depth == 0; }
NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

Graph Graph::trace(Node* root) {
  Graph g;
  std::unordered_set<Node*> visited;
  // Iterative post-order; routing graphs get deep enough that recursion is unsafe.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      g.order.push_back(node);
      stack.pop_back();
    }
  }
  return g;
}

Node* Graph::first_nonfinite() const {
  for (Node* n : order) {
    for (double v : n->value) {
      if (!std::isfinite(v)) return n;
    }
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// Tensor basics
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double v, bool requires_grad) {
  check_shape(shape, "tensor");
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->value.assign(shape_numel(shape), v);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data, bool requires_grad) {
  check_shape(shape, "tensor");
  if (shape_numel(shape) != data.size())
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " wants " +
                                std::to_string(shape_numel(shape)) + " values, got " +
                                std::to_string(data.size()));
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::scalar(double v) { return from_data({1}, {v}); }

int Tensor::dim(int axis) const {
  return node_->shape[static_cast<std::size_t>(normalize_axis(axis, rank(), "dim"))];
}

double Tensor::item() const {
  if (size() != 1) throw std::logic_error("item: tensor has " + std::to_string(size()) + " elements");
  return node_->value[0];
}

double Tensor::at(const std::vector<int>& idx) const {
  return const_cast<Tensor*>(this)->at(idx);
}

double& Tensor::at(const std::vector<int>& idx) {
  const Shape& s = node_->shape;
  if (idx.size() != s.size()) throw std::invalid_argument("at: index rank mismatch");
  auto st = row_major_strides(s);
  std::size_t off = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= s[i]) throw std::out_of_range("at: index out of bounds");
    off += st[i] * static_cast<std::size_t>(idx[i]);
  }
  return node_->value[off];
}

Tensor& Tensor::set_requires_grad(bool rg) {
  if (rg && !node_->parents.empty())
    throw std::logic_error("set_requires_grad: only leaf tensors can be toggled");
  node_->requires_grad = rg;
  return *this;
}

const std::vector<double>& Tensor::grad() const {
  if (!node_->has_grad)
    throw std::logic_error("grad: not populated; run backward() on a reachable scalar first");
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->grad.clear();
  node_->has_grad = false;
}

void Tensor::backward() {
  if (size() != 1)
    throw std::logic_error("backward: root must be scalar, got shape " + shape_str(node_->shape));
  if (node_->backward_done)
    throw std::logic_error("backward: graph already consumed; rebuild it before differentiating again");
  node_->backward_done = true;
  if (!node_->requires_grad) return;

  Graph g = Graph::trace(node_.get());
  // Existing grads are kept so separate backwards accumulate linearly.
  for (Node* n : g.order) {
    if (n->requires_grad && !n->has_grad) {
      n->grad.assign(n->numel(), 0.0);
      n->has_grad = true;
    }
  }
  node_->grad[0] += 1.0;
  for (auto it = g.order.rbegin(); it != g.order.rend(); ++it) {
    Node* n = *it;
    if (n->requires_grad && n->backward_fn) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// elementwise / broadcast arithmetic
// ---------------------------------------------------------------------------

namespace {

template <typename FwdFn, typename BwdFn>
Tensor broadcast_binary(const char* op, const Tensor& a, const Tensor& b, FwdFn fwd, BwdFn bwd) {
  BroadcastPair bp = broadcast_pair(a.shape(), b.shape(), op);
  std::vector<double> out(shape_numel(bp.out));
  const auto& av = a.data();
  const auto& bv = b.data();
  for_each_broadcast(bp, [&](std::size_t io, std::size_t ia, std::size_t ib) {
    out[io] = fwd(av[ia], bv[ib]);
  });
  return make_op(op, bp.out, std::move(out), {a.node(), b.node()}, [bp, bwd](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for_each_broadcast(bp, [&](std::size_t io, std::size_t ia, std::size_t ib) {
      const double g = self.grad[io];
      double da, db;
      bwd(pa.value[ia], pb.value[ib], g, da, db);
      if (pa.requires_grad) pa.grad[ia] += da;
      if (pb.requires_grad) pb.grad[ib] += db;
    });
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return broadcast_binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return broadcast_binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return broadcast_binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& da, double& db) {
        da = g * y;
        db = g * x;
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return broadcast_binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double x, double y, double g, double& da, double& db) {
        da = g / y;
        db = -g * x / (y * y);
      });
}

Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.data());
  for (double& v : out) v *= s;
  return make_op("scale", x.shape(), std::move(out), {x.node()}, [s](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < self.numel(); ++i) p.grad[i] += self.grad[i] * s;
  });
}

Tensor add_scalar(const Tensor& x, double s) {
  std::vector<double> out(x.data());
  for (double& v : out) v += s;
  return make_op("add_scalar", x.shape(), std::move(out), {x.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < self.numel(); ++i) p.grad[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace {

// Maps a flat output batch index to element offsets in a and b.
struct BatchPlan {
  Shape out_batch;
  std::vector<std::size_t> a_off, b_off;  // per output batch slice
  int m = 0, k = 0, n = 0;
};

BatchPlan matmul_plan(const Shape& sa, const Shape& sb) {
  if (sa.size() < 2 || sb.size() < 2)
    throw std::invalid_argument("matmul: operands must have rank >= 2, got " + shape_str(sa) +
                                " and " + shape_str(sb));
  BatchPlan plan;
  plan.m = sa[sa.size() - 2];
  plan.k = sa[sa.size() - 1];
  const int kb = sb[sb.size() - 2];
  plan.n = sb[sb.size() - 1];
  if (plan.k != kb)
    throw std::invalid_argument("matmul: inner extents differ between shapes " + shape_str(sa) +
                                " and " + shape_str(sb));

  const int ba_rank = static_cast<int>(sa.size()) - 2;
  const int bb_rank = static_cast<int>(sb.size()) - 2;
  const int batch_rank = std::max(ba_rank, bb_rank);
  Shape abatch(batch_rank, 1), bbatch(batch_rank, 1);
  for (int i = 0; i < ba_rank; ++i) abatch[batch_rank - ba_rank + i] = sa[i];
  for (int i = 0; i < bb_rank; ++i) bbatch[batch_rank - bb_rank + i] = sb[i];
  plan.out_batch.resize(batch_rank);
  for (int i = 0; i < batch_rank; ++i) {
    if (abatch[i] == bbatch[i] || abatch[i] == 1 || bbatch[i] == 1) {
      plan.out_batch[i] = std::max(abatch[i], bbatch[i]);
    } else {
      throw std::invalid_argument("matmul: batch extents incompatible between shapes " +
                                  shape_str(sa) + " and " + shape_str(sb));
    }
  }

  const std::size_t a_slice = static_cast<std::size_t>(plan.m) * plan.k;
  const std::size_t b_slice = static_cast<std::size_t>(plan.k) * plan.n;
  auto sta = row_major_strides(abatch);
  auto stb = row_major_strides(bbatch);
  const std::size_t batches = shape_numel(plan.out_batch);
  plan.a_off.resize(batches);
  plan.b_off.resize(batches);
  std::vector<int> coord(batch_rank, 0);
  for (std::size_t bi = 0; bi < batches; ++bi) {
    std::size_t ia = 0, ib = 0;
    for (int d = 0; d < batch_rank; ++d) {
      if (abatch[d] != 1) ia += sta[d] * static_cast<std::size_t>(coord[d]);
      if (bbatch[d] != 1) ib += stb[d] * static_cast<std::size_t>(coord[d]);
    }
    plan.a_off[bi] = ia * a_slice;
    plan.b_off[bi] = ib * b_slice;
    for (int d = batch_rank - 1; d >= 0; --d) {
      if (++coord[d] < plan.out_batch[d]) break;
      coord[d] = 0;
    }
  }
  return plan;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  BatchPlan plan = matmul_plan(a.shape(), b.shape());
  Shape out_shape = plan.out_batch;
  out_shape.push_back(plan.m);
  out_shape.push_back(plan.n);

  const std::size_t o_slice = static_cast<std::size_t>(plan.m) * plan.n;
  std::vector<double> out(shape_numel(out_shape));
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  for (std::size_t bi = 0; bi < plan.a_off.size(); ++bi) {
    kernels::gemm_nn(ap + plan.a_off[bi], bp + plan.b_off[bi], out.data() + bi * o_slice, plan.m,
                     plan.k, plan.n, false);
  }

  return make_op("matmul", std::move(out_shape), std::move(out), {a.node(), b.node()},
                 [plan, o_slice](Node& self) {
                   Node& pa = *self.parents[0];
                   Node& pb = *self.parents[1];
                   for (std::size_t bi = 0; bi < plan.a_off.size(); ++bi) {
                     const double* g = self.grad.data() + bi * o_slice;
                     if (pa.requires_grad) {
                       // dA = dC * B^T
                       kernels::gemm_nt(g, pb.value.data() + plan.b_off[bi],
                                        pa.grad.data() + plan.a_off[bi], plan.m, plan.n, plan.k,
                                        true);
                     }
                     if (pb.requires_grad) {
                       // dB = A^T * dC
                       kernels::gemm_tn(pa.value.data() + plan.a_off[bi], g,
                                        pb.grad.data() + plan.b_off[bi], plan.m, plan.k, plan.n,
                                        true);
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// shape surgery
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, const Shape& new_shape) {
  check_shape(new_shape, "reshape");
  if (shape_numel(new_shape) != x.size())
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                shape_str(new_shape));
  return make_op("reshape", new_shape, x.data(), {x.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < self.numel(); ++i) p.grad[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const int rank = x.rank();
  if (static_cast<int>(perm.size()) != rank)
    throw std::invalid_argument("permute: perm rank mismatch for shape " + shape_str(x.shape()));
  std::vector<bool> seen(rank, false);
  Shape out_shape(rank);
  for (int i = 0; i < rank; ++i) {
    int p = normalize_axis(perm[i], rank, "permute");
    if (seen[p]) throw std::invalid_argument("permute: duplicate axis");
    seen[p] = true;
    out_shape[i] = x.shape()[p];
  }

  auto in_strides = row_major_strides(x.shape());
  std::vector<std::size_t> src_stride(rank);
  for (int i = 0; i < rank; ++i) src_stride[i] = in_strides[static_cast<std::size_t>(perm[i] < 0 ? perm[i] + rank : perm[i])];

  const std::size_t n = x.size();
  std::vector<std::size_t> src_index(n);
  {
    std::vector<int> coord(rank, 0);
    std::size_t is = 0;
    for (std::size_t io = 0; io < n; ++io) {
      src_index[io] = is;
      for (int d = rank - 1; d >= 0; --d) {
        ++coord[d];
        is += src_stride[d];
        if (coord[d] < out_shape[d]) break;
        is -= src_stride[d] * static_cast<std::size_t>(out_shape[d]);
        coord[d] = 0;
      }
    }
  }

  std::vector<double> out(n);
  const auto& xv = x.data();
  for (std::size_t io = 0; io < n; ++io) out[io] = xv[src_index[io]];

  return make_op("permute", std::move(out_shape), std::move(out), {x.node()},
                 [src_index = std::move(src_index)](Node& self) {
                   Node& p = *self.parents[0];
                   for (std::size_t io = 0; io < self.numel(); ++io)
                     p.grad[src_index[io]] += self.grad[io];
                 });
}

Tensor transpose_last_two(const Tensor& x) {
  if (x.rank() < 2)
    throw std::invalid_argument("transpose_last_two: rank must be >= 2, got shape " +
                                shape_str(x.shape()));
  std::vector<int> perm(x.rank());
  for (int i = 0; i < x.rank(); ++i) perm[i] = i;
  std::swap(perm[x.rank() - 2], perm[x.rank() - 1]);
  return permute(x, perm);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const int rank = parts[0].rank();
  const int ax = normalize_axis(axis, rank, "concat");
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const Tensor& t : parts) {
    if (t.rank() != rank) throw std::invalid_argument("concat: rank mismatch");
    for (int d = 0; d < rank; ++d) {
      if (d != ax && t.shape()[d] != parts[0].shape()[d])
        throw std::invalid_argument("concat: shapes " + shape_str(parts[0].shape()) + " and " +
                                    shape_str(t.shape()) + " differ off-axis");
    }
    out_shape[ax] += t.shape()[ax];
  }

  // outer x axis x inner layout
  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < ax; ++d) outer *= static_cast<std::size_t>(out_shape[d]);
  for (int d = ax + 1; d < rank; ++d) inner *= static_cast<std::size_t>(out_shape[d]);

  std::vector<double> out(shape_numel(out_shape));
  const std::size_t out_row = static_cast<std::size_t>(out_shape[ax]) * inner;
  std::vector<std::size_t> part_axis(parts.size());
  std::vector<std::shared_ptr<Node>> parent_nodes;
  parent_nodes.reserve(parts.size());
  std::size_t axis_base = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const Tensor& t = parts[pi];
    part_axis[pi] = static_cast<std::size_t>(t.shape()[ax]);
    const std::size_t trow = part_axis[pi] * inner;
    const auto& tv = t.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(tv.begin() + static_cast<std::ptrdiff_t>(o * trow),
                tv.begin() + static_cast<std::ptrdiff_t>((o + 1) * trow),
                out.begin() + static_cast<std::ptrdiff_t>(o * out_row + axis_base * inner));
    }
    axis_base += part_axis[pi];
    parent_nodes.push_back(t.node());
  }

  return make_op("concat", std::move(out_shape), std::move(out), std::move(parent_nodes),
                 [outer, inner, out_row, part_axis](Node& self) {
                   std::size_t axis_base = 0;
                   for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
                     Node& p = *self.parents[pi];
                     const std::size_t trow = part_axis[pi] * inner;
                     if (p.requires_grad) {
                       for (std::size_t o = 0; o < outer; ++o) {
                         const double* g = self.grad.data() + o * out_row + axis_base * inner;
                         double* pg = p.grad.data() + o * trow;
                         for (std::size_t i = 0; i < trow; ++i) pg[i] += g[i];
                       }
                     }
                     axis_base += part_axis[pi];
                   }
                 });
}

Tensor stack(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("stack: no inputs");
  const int rank = parts[0].rank();
  int ax = axis < 0 ? axis + rank + 1 : axis;
  if (ax < 0 || ax > rank) throw std::invalid_argument("stack: axis out of range");
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const Tensor& t : parts) {
    Shape s = t.shape();
    s.insert(s.begin() + ax, 1);
    expanded.push_back(reshape(t, s));
  }
  return concat(expanded, ax);
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
  const int rank = x.rank();
  const int ax = normalize_axis(axis, rank, "slice");
  if (start < 0 || len <= 0 || start + len > x.shape()[ax])
    throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") out of bounds for shape " +
                                shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape[ax] = len;

  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < ax; ++d) outer *= static_cast<std::size_t>(x.shape()[d]);
  for (int d = ax + 1; d < rank; ++d) inner *= static_cast<std::size_t>(x.shape()[d]);
  const std::size_t in_row = static_cast<std::size_t>(x.shape()[ax]) * inner;
  const std::size_t out_row = static_cast<std::size_t>(len) * inner;
  const std::size_t skip = static_cast<std::size_t>(start) * inner;

  std::vector<double> out(shape_numel(out_shape));
  const auto& xv = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(xv.begin() + static_cast<std::ptrdiff_t>(o * in_row + skip),
              xv.begin() + static_cast<std::ptrdiff_t>(o * in_row + skip + out_row),
              out.begin() + static_cast<std::ptrdiff_t>(o * out_row));
  }

  return make_op("slice", std::move(out_shape), std::move(out), {x.node()},
                 [outer, in_row, out_row, skip](Node& self) {
                   Node& p = *self.parents[0];
                   for (std::size_t o = 0; o < outer; ++o) {
                     const double* g = self.grad.data() + o * out_row;
                     double* pg = p.grad.data() + o * in_row + skip;
                     for (std::size_t i = 0; i < out_row; ++i) pg[i] += g[i];
                   }
                 });
}

// ---------------------------------------------------------------------------
// reductions and nonlinearities
// ---------------------------------------------------------------------------

Tensor reduce_sum(const Tensor& x, int axis, bool keepdim) {
  const int rank = x.rank();
  const int ax = normalize_axis(axis, rank, "reduce_sum");
  Shape out_shape;
  for (int d = 0; d < rank; ++d) {
    if (d == ax) {
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(x.shape()[d]);
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);

  std::size_t outer = 1, inner = 1;
  const std::size_t extent = static_cast<std::size_t>(x.shape()[ax]);
  for (int d = 0; d < ax; ++d) outer *= static_cast<std::size_t>(x.shape()[d]);
  for (int d = ax + 1; d < rank; ++d) inner *= static_cast<std::size_t>(x.shape()[d]);

  std::vector<double> out(outer * inner, 0.0);
  const auto& xv = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t e = 0; e < extent; ++e) {
      const double* src = xv.data() + (o * extent + e) * inner;
      double* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }

  return make_op("reduce_sum", std::move(out_shape), std::move(out), {x.node()},
                 [outer, inner, extent](Node& self) {
                   Node& p = *self.parents[0];
                   for (std::size_t o = 0; o < outer; ++o) {
                     const double* g = self.grad.data() + o * inner;
                     for (std::size_t e = 0; e < extent; ++e) {
                       double* pg = p.grad.data() + (o * extent + e) * inner;
                       for (std::size_t i = 0; i < inner; ++i) pg[i] += g[i];
                     }
                   }
                 });
}

Tensor reduce_sum_all(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_op("reduce_sum_all", {1}, {total}, {x.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    const double g = self.grad[0];
    for (double& pg : p.grad) pg += g;
  });
}

Tensor l2_norm(const Tensor& x, int axis, bool keepdim) {
  const int rank = x.rank();
  const int ax = normalize_axis(axis, rank, "l2_norm");
  Shape out_shape;
  for (int d = 0; d < rank; ++d) {
    if (d == ax) {
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(x.shape()[d]);
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);

  std::size_t outer = 1, inner = 1;
  const std::size_t extent = static_cast<std::size_t>(x.shape()[ax]);
  for (int d = 0; d < ax; ++d) outer *= static_cast<std::size_t>(x.shape()[d]);
  for (int d = ax + 1; d < rank; ++d) inner *= static_cast<std::size_t>(x.shape()[d]);

  std::vector<double> out(outer * inner, 0.0);
  const auto& xv = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t e = 0; e < extent; ++e) {
      const double* src = xv.data() + (o * extent + e) * inner;
      double* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i] * src[i];
    }
  }
  for (double& v : out) v = std::sqrt(v);

  return make_op("l2_norm", std::move(out_shape), std::move(out), {x.node()},
                 [outer, inner, extent](Node& self) {
                   // d||x||/dx = x/||x||; the tiny floor keeps the zero vector finite.
                   Node& p = *self.parents[0];
                   for (std::size_t o = 0; o < outer; ++o) {
                     for (std::size_t i = 0; i < inner; ++i) {
                       const double norm = self.value[o * inner + i];
                       const double g = self.grad[o * inner + i] / (norm + 1e-12);
                       for (std::size_t e = 0; e < extent; ++e) {
                         const std::size_t pi = (o * extent + e) * inner + i;
                         p.grad[pi] += g * p.value[pi];
                       }
                     }
                   }
                 });
}

Tensor sqrt_elem(const Tensor& x) {
  std::vector<double> out(x.data());
  for (double& v : out) v = std::sqrt(v);
  return make_op("sqrt", x.shape(), std::move(out), {x.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < self.numel(); ++i)
      p.grad[i] += self.grad[i] * 0.5 / (self.value[i] + 1e-12);
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return make_op("relu", x.shape(), std::move(out), {x.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < self.numel(); ++i)
      if (p.value[i] > 0.0) p.grad[i] += self.grad[i];
  });
}

Tensor softmax_last_axis(const Tensor& x) {
  const int width = x.shape().back();
  if (width < 1) throw std::invalid_argument("softmax: empty last axis");
  const int rows = static_cast<int>(x.size()) / width;
  std::vector<double> out(x.size());
  kernels::softmax_rows(x.data().data(), out.data(), rows, width);
  return make_op("softmax", x.shape(), std::move(out), {x.node()}, [rows, width](Node& self) {
    Node& p = *self.parents[0];
    kernels::softmax_rows_grad(self.value.data(), self.grad.data(), p.grad.data(), rows, width,
                               true);
  });
}

Tensor masked_fill(const Tensor& x, const Tensor& mask, double sentinel) {
  BroadcastPair bp = broadcast_pair(x.shape(), mask.shape(), "masked_fill");
  if (bp.out != x.shape())
    throw std::invalid_argument("masked_fill: mask " + shape_str(mask.shape()) +
                                " does not broadcast onto " + shape_str(x.shape()));
  std::vector<double> out(x.size());
  const auto& xv = x.data();
  const auto& mv = mask.data();
  for_each_broadcast(bp, [&](std::size_t io, std::size_t ia, std::size_t ib) {
    out[io] = mv[ib] != 0.0 ? sentinel : xv[ia];
  });
  return make_op("masked_fill", x.shape(), std::move(out), {x.node(), mask.node()},
                 [bp](Node& self) {
                   Node& p = *self.parents[0];
                   const Node& m = *self.parents[1];
                   if (!p.requires_grad) return;
                   for_each_broadcast(bp, [&](std::size_t io, std::size_t ia, std::size_t ib) {
                     if (m.value[ib] == 0.0) p.grad[ia] += self.grad[io];
                   });
                 });
}

Tensor detach(const Tensor& x) {
  auto n = std::make_shared<Node>();
  n->op = "detach";
  n->shape = x.shape();
  n->value = x.data();
  return Tensor(n);
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw std::invalid_argument("gather_rows: table must be rank 2");
  const int rows = table.shape()[0];
  const int width = table.shape()[1];
  if (ids.empty()) throw std::invalid_argument("gather_rows: empty index list");
  for (int id : ids) {
    if (id < 0 || id >= rows)
      throw std::invalid_argument("gather_rows: index " + std::to_string(id) +
                                  " out of range for table with " + std::to_string(rows) + " rows");
  }
  std::vector<double> out(ids.size() * static_cast<std::size_t>(width));
  const auto& tv = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy(tv.begin() + static_cast<std::ptrdiff_t>(ids[i]) * width,
              tv.begin() + static_cast<std::ptrdiff_t>(ids[i] + 1) * width,
              out.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  return make_op("gather_rows", {static_cast<int>(ids.size()), width}, std::move(out),
                 {table.node()}, [ids, width](Node& self) {
                   Node& p = *self.parents[0];
                   for (std::size_t i = 0; i < ids.size(); ++i) {
                     const double* g = self.grad.data() + i * static_cast<std::size_t>(width);
                     double* pg = p.grad.data() + static_cast<std::size_t>(ids[i]) * width;
                     for (int j = 0; j < width; ++j) pg[j] += g[j];
                   }
                 });
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64* rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (rate == 0.0 || rng == nullptr) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.size());
  for (double& m : mask) {
    const double u = static_cast<double>((*rng)() >> 11) * 0x1.0p-53;
    m = u >= rate ? keep_scale : 0.0;
  }
  std::vector<double> out(x.size());
  const auto& xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  return make_op("dropout", x.shape(), std::move(out), {x.node()},
                 [mask = std::move(mask)](Node& self) {
                   Node& p = *self.parents[0];
                   for (std::size_t i = 0; i < self.numel(); ++i)
                     p.grad[i] += self.grad[i] * mask[i];
                 });
}

std::pair<Tensor, int> cross_entropy_sum(const Tensor& logits, const std::vector<int>& targets,
                                         int pad_id, double smoothing) {
  if (logits.rank() != 2) throw std::invalid_argument("cross_entropy: logits must be rank 2");
  if (smoothing < 0.0 || smoothing >= 1.0)
    throw std::invalid_argument("cross_entropy: smoothing must be in [0,1)");
  const int L = logits.shape()[0];
  const int V = logits.shape()[1];
  if (static_cast<int>(targets.size()) != L)
    throw std::invalid_argument("cross_entropy: got " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(L) + " logit rows");
  const auto& xv = logits.data();
  const double hot = 1.0 - smoothing;
  const double uni = smoothing / V;
  double total = 0.0;
  int count = 0;
  for (int r = 0; r < L; ++r) {
    const int t = targets[r];
    if (t == pad_id) continue;
    if (t < 0 || t >= V)
      throw std::invalid_argument("cross_entropy: target " + std::to_string(t) +
                                  " out of range for vocab " + std::to_string(V));
    const double* row = xv.data() + static_cast<std::size_t>(r) * V;
    double mx = row[0];
    for (int j = 1; j < V; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0, mean = 0.0;
    for (int j = 0; j < V; ++j) {
      sum += std::exp(row[j] - mx);
      mean += row[j];
    }
    total += mx + std::log(sum) - hot * row[t] - uni * mean;
    ++count;
  }

  Tensor loss = make_op("cross_entropy", {1}, {total}, {logits.node()},
                        [targets, pad_id, L, V, hot, uni](Node& self) {
                          Node& p = *self.parents[0];
                          const double g = self.grad[0];
                          for (int r = 0; r < L; ++r) {
                            const int t = targets[r];
                            if (t == pad_id) continue;
                            const double* row = p.value.data() + static_cast<std::size_t>(r) * V;
                            double* grow = p.grad.data() + static_cast<std::size_t>(r) * V;
                            double mx = row[0];
                            for (int j = 1; j < V; ++j) mx = std::max(mx, row[j]);
                            double sum = 0.0;
                            for (int j = 0; j < V; ++j) sum += std::exp(row[j] - mx);
                            const double inv = 1.0 / sum;
                            for (int j = 0; j < V; ++j)
                              grow[j] += g * (std::exp(row[j] - mx) * inv - uni);
                            grow[t] -= g * hot;
                          }
                        });
  return {loss, count};
}

Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& targets, int pad_id,
                          double smoothing) {
  auto [sum, count] = cross_entropy_sum(logits, targets, pad_id, smoothing);
  if (count == 0) throw InputError("cross_entropy: no non-pad targets");
  return scale(sum, 1.0 / count);
}

}  // namespace capsan
