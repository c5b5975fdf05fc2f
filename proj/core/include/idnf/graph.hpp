#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "idnf/tensor.hpp"

namespace idnf {

using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

// Closed op set of the tape. Everything the flow computes is composed from
// these primitives, so one reverse rule and one tangent rule per op is the
// complete differentiation contract.
enum class Op : std::uint8_t {
  kLeaf,        // input / constant / parameter
  kMatMul,      // A (m x k) * B (k x n)
  kAdd,         // elementwise, equal shapes
  kSub,         //
  kMul,         //
  kDiv,         //
  kScale,       // x * compile-time-constant c
  kScalarMul,   // broadcast (1x1 node) * x
  kSigmoid,     //
  kSoftplus,    //
  kConcatRows,  // [a; b], equal column counts
  kSliceRows,   // rows [r0, r1) of x
  kSum,         // sum of all entries -> 1x1
  kLog,         // elementwise, requires positive input
  kSqrt,        // elementwise, requires positive input
};

const char* op_name(Op op);

struct Node {
  Op op = Op::kLeaf;
  bool trainable = false;
  NodeId a = kNoNode;
  NodeId b = kNoNode;
  double c = 0.0;          // kScale factor
  std::int32_t r0 = 0;     // kSliceRows range
  std::int32_t r1 = 0;
  Matrix value;
};

// Append-only tape of tensor ops, rebuilt per training step (define-by-run).
// Values are computed eagerly as nodes are recorded. Reverse mode
// (`gradient`) produces plain tensors; forward mode (`directional_derivative`)
// produces *nodes*, built from the same op set, so any scalar assembled from
// a directional derivative (a log-determinant, say) stays differentiable with
// respect to the parameters upstream of it.
//
// A Graph is confined to one thread. Distinct graphs are independent.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  // -- leaves -------------------------------------------------------------
  NodeId leaf(const Tensor& t, bool trainable = false) { return leaf(t.mat(), trainable); }
  NodeId leaf(Matrix m, bool trainable = false);
  NodeId constant(Matrix m) { return leaf(std::move(m), false); }
  NodeId scalar_constant(double x) { return constant(Matrix::Constant(1, 1, x)); }

  // -- ops ----------------------------------------------------------------
  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId scale(NodeId x, double c);
  NodeId scalar_mul(NodeId s, NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId softplus(NodeId x);
  NodeId concat_rows(NodeId a, NodeId b);
  NodeId slice_rows(NodeId x, std::int32_t r0, std::int32_t r1);
  NodeId sum(NodeId x);
  NodeId log(NodeId x);
  NodeId sqrt(NodeId x);

  // -- evaluation ---------------------------------------------------------
  const Matrix& value(NodeId id) const { return node(id).value; }
  Tensor tensor(NodeId id) const { return Tensor(node(id).value); }
  double scalar(NodeId id) const;

  void set_leaf(NodeId id, const Matrix& m);
  void set_leaf(NodeId id, const Tensor& t) { set_leaf(id, t.mat()); }

  // Replays every recorded op in order from current leaf values. Identical
  // leaves reproduce identical values.
  void recompute();

  // -- differentiation ----------------------------------------------------
  // Reverse mode: d(scalar)/d(param) for each param leaf. Params with no
  // path to the scalar get zero gradients. scalar_node must be 1x1.
  std::vector<Tensor> gradient(NodeId scalar_node, const std::vector<NodeId>& params) const;

  // Forward mode: appends nodes computing J * direction, where J is the
  // Jacobian of `output` w.r.t. `input`, and returns the result node.
  // Throws if `input` is not an ancestor of `output`.
  NodeId directional_derivative(NodeId output, NodeId input, const Tensor& direction);

  // Same, but seeded with an existing node (used to iterate J^k v products
  // and to keep tangents differentiable end to end).
  NodeId directional_derivative(NodeId output, NodeId input, NodeId direction);

  // -- introspection ------------------------------------------------------
  std::size_t size() const { return nodes_.size(); }
  Op op(NodeId id) const { return node(id).op; }
  bool trainable(NodeId id) const { return node(id).trainable; }

 private:
  const Node& node(NodeId id) const;
  Node& node(NodeId id);
  NodeId push(Node n);
  void compute(Node& n) const;

  // Tangent-rule helpers that reuse derivative subexpressions shared by
  // several tangent passes over the same primal nodes.
  NodeId sigmoid_of(NodeId x);
  NodeId sigmoid_prime_of(NodeId s);

  std::vector<Node> nodes_;
  std::unordered_map<NodeId, NodeId> sigmoid_memo_;
  std::unordered_map<NodeId, NodeId> sigmoid_prime_memo_;
};

// Numerical gradient audit. `build` must be a pure function of the parameter
// leaves it is handed; it is re-invoked on a fresh graph for every
// finite-difference probe. Returns the max over all parameter entries of
//   |ad - fd| / max(|ad|, |fd|, 1e-6)
// comparing reverse-mode gradients against central differences with the
// given step.
using ScalarBuilder = std::function<NodeId(Graph&, const std::vector<NodeId>&)>;
double check_gradient(const ScalarBuilder& build, const std::vector<Tensor>& point, double step);

}  // namespace idnf
