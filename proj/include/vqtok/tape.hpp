#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace vqtok {

using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Shape mismatches between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Param;  // nn.hpp

/// Handle into a Tape. Cheap to copy; valid until Tape::reset().
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode autodiff over float32 matrices. The graph is rebuilt every
/// step: leaves are created from inputs and parameters, ops append nodes, and
/// backward() walks the node list in reverse. Nodes whose inputs all have
/// requires_grad == false skip gradient work entirely, which is what makes
/// frozen-encoder passes cheap.
///
/// All accumulation is sequential float32; the same graph evaluated twice
/// produces bit-identical values and gradients.
class Tape {
 public:
  Tape() { nodes_.reserve(256); }

  void reset() {
    nodes_.clear();
    param_leaves_.clear();
  }

  /// In inference mode parameter leaves are plain constants: no gradient
  /// bookkeeping anywhere in the graph.
  void set_inference(bool on) { inference_ = on; }
  bool inference() const { return inference_; }

  int size() const { return static_cast<int>(nodes_.size()); }

  // ---- leaves ----
  Var input(Mat v) { return push(std::move(v), false); }
  /// Leaf that accumulates gradient (for inputs probed in tests).
  Var input_grad(Mat v) { return push(std::move(v), true); }
  /// Leaf bound to a persistent parameter; grads flush into p.grad on
  /// backward() iff the parameter is trainable.
  Var param(Param& p);

  const Mat& val(Var v) const { return nodes_[check(v)].value; }
  /// Gradient of a leaf created with input_grad/param. Zero matrix until
  /// backward() has run.
  const Mat& grad(Var v) const;

  // ---- arithmetic ----
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, float s);
  /// a + r broadcast over rows; r is 1 x cols (bias).
  Var add_rowvec(Var a, Var r);
  /// a with the rows-per-tile block `tile` (n x cols) added to each of
  /// `tiles` consecutive row blocks. Positional-embedding add.
  Var add_rowtile(Var a, Var tile, int tiles);

  // ---- activations ----
  Var tanh_act(Var a);
  Var gelu(Var a);  // exact erf form
  Var relu(Var a);
  Var leaky_relu(Var a, float slope);

  // ---- linear algebra ----
  Var matmul(Var a, Var b);
  Var softmax_rows(Var a);
  /// Per-row layernorm with affine gamma/beta (each 1 x cols).
  Var layer_norm(Var x, Var gamma, Var beta, float eps = 1e-5f);

  // ---- data movement ----
  /// out.row(i) = a.row(idx[i]); backward scatter-adds.
  Var gather_rows(Var a, std::shared_ptr<const std::vector<int>> idx);
  /// Bijective element permutation: out.flat[i] = a.flat[map[i]], reshaped to
  /// rows x cols. Used for patch regrouping.
  Var reindex(Var a, int rows, int cols, std::shared_ptr<const std::vector<int>> map);
  Var slice_cols(Var a, int c0, int len);

  // ---- reductions ----
  Var sum_all(Var a);   // 1x1
  Var mean_all(Var a);  // 1x1
  /// Mean over consecutive row blocks of size `block` (token pooling).
  Var row_block_mean(Var a, int block);

  // ---- composites ----
  Var square(Var a) { return mul(a, a); }
  Var mse(Var a, Var b) { return mean_all(square(sub(a, b))); }
  /// Mean over rows of squared row L2 norms: sum(a^2) / rows.
  Var row_sqnorm_mean(Var a) {
    return scale(sum_all(square(a)), 1.0f / static_cast<float>(val(a).rows()));
  }
  /// Value of a, cut out of the gradient graph.
  Var detach(Var a) { return input(val(a)); }
  /// Values of q, gradients of z: z + detach(q - z).
  Var straight_through(Var z, Var q) { return add(z, detach(sub(q, z))); }

  // ---- attention ----
  /// Scaled scores between per-image, per-head slices of q and k, both
  /// (batch*n) x (heads*dh). Output is (batch*heads*n) x n. causal masks
  /// j > i with -1e30 before softmax.
  Var attn_scores(Var q, Var k, int batch, int n, int heads, bool causal);
  /// probs (batch*heads*n) x n applied to v (batch*n) x (heads*dh).
  Var attn_apply(Var probs, Var v, int batch, int n, int heads);

  // ---- losses ----
  /// Mean masked cross entropy: rows of `logits` are positions, targets[i] is
  /// the class index, mask[i] in {0,1} selects rows. Mean over selected rows.
  Var cross_entropy_rows(Var logits, std::shared_ptr<const std::vector<int>> targets,
                         std::shared_ptr<const std::vector<float>> mask);

  /// Backpropagate from a 1x1 scalar node, then flush param gradients.
  void backward(Var root);

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    bool grad_live = false;
    std::function<void(Tape&)> backprop;
  };

  std::vector<Node> nodes_;
  std::vector<std::pair<int, Param*>> param_leaves_;
  bool inference_ = false;

  int check(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
      throw std::invalid_argument("tape: invalid Var handle");
    return v.id;
  }

  Var push(Mat v, bool requires_grad) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
  }

  bool wants(int id) const { return nodes_[id].requires_grad; }

  /// Accumulate g into node id's gradient if it participates in the graph.
  void acc(int id, const Mat& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.grad_live) {
      n.grad = g;
      n.grad_live = true;
    } else {
      n.grad += g;
    }
  }

  const Mat& g(int id) const { return nodes_[id].grad; }
  bool has_grad(int id) const { return nodes_[id].grad_live; }

  Var op(Mat value, std::initializer_list<Var> parents, std::function<void(Tape&)> backprop) {
    bool rg = false;
    for (Var p : parents) rg = rg || wants(check(p));
    Var out = push(std::move(value), rg);
    if (rg) nodes_[out.id].backprop = std::move(backprop);
    return out;
  }
};

}  // namespace vqtok
