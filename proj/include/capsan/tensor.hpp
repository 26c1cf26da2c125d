#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace capsan {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Sentinel written into pre-softmax logits by causal masks. Finite on purpose:
// exp(sentinel - rowmax) underflows to exactly zero without producing NaN.
inline constexpr double kMaskSentinel = -1e9;

// One executed operation (or leaf) in the differentiation graph.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated by backward(); same extent as value
  bool has_grad = false;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad, accumulates into parents' grad.
  std::function<void(Node&)> backward_fn;
  bool backward_done = false;

  std::size_t numel() const { return value.size(); }
};

// Topologically ordered record of the operations reachable from a root.
struct Graph {
  std::vector<Node*> order;  // parents before children

  static Graph trace(Node* root);
  // First node (in execution order) holding a non-finite value, or nullptr.
  Node* first_nonfinite() const;
};

bool grad_enabled();

// Scoped switch that disables graph recording (forward-only evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Dense row-major n-d array of doubles, optionally tracked by the
// differentiation graph. Cheap to copy; copies share the underlying node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double v, bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int axis) const;  // negative axes count from the back
  std::size_t size() const { return node_->value.size(); }

  std::vector<double>& data() { return node_->value; }
  const std::vector<double>& data() const { return node_->value; }
  double item() const;
  double at(const std::vector<int>& idx) const;
  double& at(const std::vector<int>& idx);

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool rg);

  bool has_grad() const { return node_->has_grad; }
  const std::vector<double>& grad() const;
  void zero_grad();

  // Reverse-mode pass from a scalar root. A second call on the same root
  // without rebuilding the graph is a contract violation.
  void backward();

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// --- arithmetic (same-rank broadcasting: extents must match or be 1) --------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// --- linear algebra ----------------------------------------------------------
// a [..., m, k] x b [..., k, n] -> [..., m, n]; leading extents broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

// --- shape surgery -----------------------------------------------------------
Tensor reshape(const Tensor& x, const Shape& new_shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor transpose_last_two(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor stack(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, int start, int len);

// --- reductions / nonlinearities ---------------------------------------------
Tensor reduce_sum(const Tensor& x, int axis, bool keepdim = false);
Tensor reduce_sum_all(const Tensor& x);
Tensor l2_norm(const Tensor& x, int axis, bool keepdim = false);
Tensor sqrt_elem(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor softmax_last_axis(const Tensor& x);
Tensor masked_fill(const Tensor& x, const Tensor& mask, double sentinel);
Tensor detach(const Tensor& x);
Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);
Tensor dropout(const Tensor& x, double rate, std::mt19937_64* rng);

// Sum of per-token negative log-likelihood over non-pad targets, plus the
// count of tokens that entered the sum. logits: [L, V]. smoothing > 0 mixes
// the one-hot target with the uniform distribution at that rate.
std::pair<Tensor, int> cross_entropy_sum(const Tensor& logits, const std::vector<int>& targets,
                                         int pad_id, double smoothing = 0.0);
Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& targets, int pad_id,
                          double smoothing = 0.0);

}  // namespace capsan
