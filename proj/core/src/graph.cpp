#include "idnf/graph.hpp"

#include <cmath>
#include <string>

#include "idnf/errors.hpp"
#include "idnf/math.hpp"

namespace idnf {

namespace {

Matrix cw_sigmoid(const Matrix& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

Matrix cw_softplus(const Matrix& x) {
  return x.unaryExpr([](double v) { return softplus(v); });
}

[[noreturn]] void shape_fail(const char* op, const Matrix& a, const Matrix& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kMatMul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kScale: return "scale";
    case Op::kScalarMul: return "scalar_mul";
    case Op::kSigmoid: return "sigmoid";
    case Op::kSoftplus: return "softplus";
    case Op::kConcatRows: return "concat_rows";
    case Op::kSliceRows: return "slice_rows";
    case Op::kSum: return "sum";
    case Op::kLog: return "log";
    case Op::kSqrt: return "sqrt";
  }
  return "?";
}

const Node& Graph::node(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
    throw ShapeError("Graph: invalid node id " + std::to_string(id));
  return nodes_[static_cast<std::size_t>(id)];
}

Node& Graph::node(NodeId id) {
  return const_cast<Node&>(static_cast<const Graph*>(this)->node(id));
}

NodeId Graph::push(Node n) {
  compute(n);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::leaf(Matrix m, bool trainable) {
  Node n;
  n.op = Op::kLeaf;
  n.trainable = trainable;
  n.value = std::move(m);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

double Graph::scalar(NodeId id) const {
  const Matrix& v = value(id);
  if (v.rows() != 1 || v.cols() != 1)
    throw ShapeError("Graph::scalar: node is " + shape_str(v) + ", expected (1x1)");
  return v(0, 0);
}

void Graph::set_leaf(NodeId id, const Matrix& m) {
  Node& n = node(id);
  if (n.op != Op::kLeaf) throw ShapeError("set_leaf: node is not a leaf");
  if (n.value.rows() != m.rows() || n.value.cols() != m.cols())
    shape_fail("set_leaf", n.value, m);
  n.value = m;
}

void Graph::recompute() {
  for (Node& n : nodes_)
    if (n.op != Op::kLeaf) compute(n);
}

// Eager forward evaluation of one node. Domain checks live here so that any
// path through the engine (build, recompute) enforces them identically.
void Graph::compute(Node& n) const {
  const auto& A = [&]() -> const Matrix& { return value(n.a); };
  const auto& B = [&]() -> const Matrix& { return value(n.b); };
  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kMatMul:
      if (A().cols() != B().rows()) shape_fail("matmul", A(), B());
      n.value.noalias() = A() * B();
      break;
    case Op::kAdd:
      if (A().rows() != B().rows() || A().cols() != B().cols()) shape_fail("add", A(), B());
      n.value = A() + B();
      break;
    case Op::kSub:
      if (A().rows() != B().rows() || A().cols() != B().cols()) shape_fail("sub", A(), B());
      n.value = A() - B();
      break;
    case Op::kMul:
      if (A().rows() != B().rows() || A().cols() != B().cols()) shape_fail("mul", A(), B());
      n.value = A().cwiseProduct(B());
      break;
    case Op::kDiv:
      if (A().rows() != B().rows() || A().cols() != B().cols()) shape_fail("div", A(), B());
      if ((B().array() == 0.0).any()) throw DomainError("div: divisor entry is zero");
      n.value = A().cwiseQuotient(B());
      break;
    case Op::kScale:
      n.value = n.c * A();
      break;
    case Op::kScalarMul:
      if (A().rows() != 1 || A().cols() != 1)
        throw ShapeError(std::string("scalar_mul: scale operand is ") + shape_str(A()) +
                         ", expected (1x1)");
      n.value = A()(0, 0) * B();
      break;
    case Op::kSigmoid:
      n.value = cw_sigmoid(A());
      break;
    case Op::kSoftplus:
      n.value = cw_softplus(A());
      break;
    case Op::kConcatRows: {
      if (A().cols() != B().cols()) shape_fail("concat_rows", A(), B());
      Matrix out(A().rows() + B().rows(), A().cols());
      out.topRows(A().rows()) = A();
      out.bottomRows(B().rows()) = B();
      n.value = std::move(out);
      break;
    }
    case Op::kSliceRows:
      if (n.r0 < 0 || n.r1 > A().rows() || n.r0 >= n.r1)
        throw ShapeError("slice_rows: range [" + std::to_string(n.r0) + ", " +
                         std::to_string(n.r1) + ") invalid for " + shape_str(A()));
      n.value = A().middleRows(n.r0, n.r1 - n.r0);
      break;
    case Op::kSum:
      n.value = Matrix::Constant(1, 1, A().sum());
      break;
    case Op::kLog:
      if ((A().array() <= 0.0).any())
        throw DomainError("log: input entry <= 0 (min = " + std::to_string(A().minCoeff()) + ")");
      n.value = A().array().log().matrix();
      break;
    case Op::kSqrt:
      if ((A().array() <= 0.0).any())
        throw DomainError("sqrt: input entry <= 0 (min = " + std::to_string(A().minCoeff()) + ")");
      n.value = A().array().sqrt().matrix();
      break;
  }
}

NodeId Graph::matmul(NodeId a, NodeId b) { return push({Op::kMatMul, false, a, b}); }
NodeId Graph::add(NodeId a, NodeId b) { return push({Op::kAdd, false, a, b}); }
NodeId Graph::sub(NodeId a, NodeId b) { return push({Op::kSub, false, a, b}); }
NodeId Graph::mul(NodeId a, NodeId b) { return push({Op::kMul, false, a, b}); }
NodeId Graph::div(NodeId a, NodeId b) { return push({Op::kDiv, false, a, b}); }

NodeId Graph::scale(NodeId x, double c) {
  Node n{Op::kScale, false, x, kNoNode};
  n.c = c;
  return push(std::move(n));
}

NodeId Graph::scalar_mul(NodeId s, NodeId x) { return push({Op::kScalarMul, false, s, x}); }
NodeId Graph::sigmoid(NodeId x) { return push({Op::kSigmoid, false, x}); }
NodeId Graph::softplus(NodeId x) { return push({Op::kSoftplus, false, x}); }
NodeId Graph::concat_rows(NodeId a, NodeId b) { return push({Op::kConcatRows, false, a, b}); }

NodeId Graph::slice_rows(NodeId x, std::int32_t r0, std::int32_t r1) {
  Node n{Op::kSliceRows, false, x, kNoNode};
  n.r0 = r0;
  n.r1 = r1;
  return push(std::move(n));
}

NodeId Graph::sum(NodeId x) { return push({Op::kSum, false, x}); }
NodeId Graph::log(NodeId x) { return push({Op::kLog, false, x}); }
NodeId Graph::sqrt(NodeId x) { return push({Op::kSqrt, false, x}); }

// ---------------------------------------------------------------------------
// Reverse mode
// ---------------------------------------------------------------------------

std::vector<Tensor> Graph::gradient(NodeId scalar_node,
                                    const std::vector<NodeId>& params) const {
  const Matrix& s = value(scalar_node);
  if (s.rows() != 1 || s.cols() != 1)
    throw ShapeError("gradient: node is " + shape_str(s) + ", expected scalar (1x1)");

  std::vector<Matrix> adj(nodes_.size());
  std::vector<bool> seen(nodes_.size(), false);
  auto acc = [&](NodeId id, auto&& contribution) {
    auto i = static_cast<std::size_t>(id);
    if (!seen[i]) {
      adj[i] = std::forward<decltype(contribution)>(contribution);
      seen[i] = true;
    } else {
      adj[i] += contribution;
    }
  };

  acc(scalar_node, Matrix::Constant(1, 1, 1.0));

  for (NodeId id = scalar_node; id >= 0; --id) {
    const auto i = static_cast<std::size_t>(id);
    if (!seen[i]) continue;
    const Node& n = nodes_[i];
    const Matrix& G = adj[i];
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kMatMul:
        acc(n.a, G * value(n.b).transpose());
        acc(n.b, value(n.a).transpose() * G);
        break;
      case Op::kAdd:
        acc(n.a, G);
        acc(n.b, G);
        break;
      case Op::kSub:
        acc(n.a, G);
        acc(n.b, -G);
        break;
      case Op::kMul:
        acc(n.a, G.cwiseProduct(value(n.b)));
        acc(n.b, G.cwiseProduct(value(n.a)));
        break;
      case Op::kDiv:
        acc(n.a, G.cwiseQuotient(value(n.b)));
        acc(n.b, (-G.cwiseProduct(n.value)).cwiseQuotient(value(n.b)));
        break;
      case Op::kScale:
        acc(n.a, n.c * G);
        break;
      case Op::kScalarMul:
        acc(n.a, Matrix::Constant(1, 1, G.cwiseProduct(value(n.b)).sum()));
        acc(n.b, value(n.a)(0, 0) * G);
        break;
      case Op::kSigmoid:
        // sigma' = sigma * (1 - sigma), from the cached output.
        acc(n.a, G.cwiseProduct(n.value - n.value.cwiseProduct(n.value)));
        break;
      case Op::kSoftplus:
        acc(n.a, G.cwiseProduct(cw_sigmoid(value(n.a))));
        break;
      case Op::kConcatRows:
        acc(n.a, G.topRows(value(n.a).rows()));
        acc(n.b, G.bottomRows(value(n.b).rows()));
        break;
      case Op::kSliceRows: {
        Matrix g = Matrix::Zero(value(n.a).rows(), value(n.a).cols());
        g.middleRows(n.r0, n.r1 - n.r0) = G;
        acc(n.a, std::move(g));
        break;
      }
      case Op::kSum:
        acc(n.a, Matrix::Constant(value(n.a).rows(), value(n.a).cols(), G(0, 0)));
        break;
      case Op::kLog:
        acc(n.a, G.cwiseQuotient(value(n.a)));
        break;
      case Op::kSqrt:
        acc(n.a, 0.5 * G.cwiseQuotient(n.value));
        break;
    }
  }

  std::vector<Tensor> out;
  out.reserve(params.size());
  for (NodeId p : params) {
    const Node& pn = node(p);
    auto i = static_cast<std::size_t>(p);
    if (p <= scalar_node && seen[i])
      out.emplace_back(adj[i]);
    else
      out.emplace_back(Matrix::Zero(pn.value.rows(), pn.value.cols()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward mode (tangents recorded as ordinary nodes)
// ---------------------------------------------------------------------------

NodeId Graph::sigmoid_of(NodeId x) {
  auto it = sigmoid_memo_.find(x);
  if (it != sigmoid_memo_.end()) return it->second;
  NodeId s = sigmoid(x);
  sigmoid_memo_.emplace(x, s);
  return s;
}

NodeId Graph::sigmoid_prime_of(NodeId s) {
  auto it = sigmoid_prime_memo_.find(s);
  if (it != sigmoid_prime_memo_.end()) return it->second;
  NodeId p = sub(s, mul(s, s));
  sigmoid_prime_memo_.emplace(s, p);
  return p;
}

NodeId Graph::directional_derivative(NodeId output, NodeId input, const Tensor& direction) {
  const Matrix& x = value(input);
  if (direction.rows() != x.rows() || direction.cols() != x.cols())
    throw ShapeError("directional_derivative: direction " + shape_str(direction.mat()) +
                     " does not match input " + shape_str(x));
  return directional_derivative(output, input, constant(direction.mat()));
}

NodeId Graph::directional_derivative(NodeId output, NodeId input, NodeId direction) {
  node(output);  // validate ids
  node(input);
  {
    const Matrix& x = value(input);
    const Matrix& d = value(direction);
    if (d.rows() != x.rows() || d.cols() != x.cols())
      throw ShapeError("directional_derivative: direction " + shape_str(d) +
                       " does not match input " + shape_str(x));
  }

  // tangent[i] == kNoNode means dI/d(input) == 0 identically; only ids up to
  // `output` are consulted, so nodes appended below never need entries.
  std::vector<NodeId> tangent(static_cast<std::size_t>(output) + 1, kNoNode);
  tangent[static_cast<std::size_t>(input)] = direction;

  struct NodeFields {
    Op op;
    NodeId a, b;
    double c;
    std::int32_t r0, r1;
  };

  for (NodeId id = input + 1; id <= output; ++id) {
    const auto i = static_cast<std::size_t>(id);
    // Snapshot fields (not the value): push() may reallocate nodes_.
    const NodeFields n{nodes_[i].op, nodes_[i].a, nodes_[i].b,
                       nodes_[i].c,  nodes_[i].r0, nodes_[i].r1};
    NodeId ta = (n.a >= 0 && n.a <= output) ? tangent[static_cast<std::size_t>(n.a)] : kNoNode;
    NodeId tb = (n.b >= 0 && n.b <= output) ? tangent[static_cast<std::size_t>(n.b)] : kNoNode;
    if (ta == kNoNode && tb == kNoNode) continue;

    NodeId t = kNoNode;
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kMatMul: {
        NodeId left = (ta != kNoNode) ? matmul(ta, n.b) : kNoNode;
        NodeId right = (tb != kNoNode) ? matmul(n.a, tb) : kNoNode;
        t = (left != kNoNode && right != kNoNode) ? add(left, right)
                                                  : (left != kNoNode ? left : right);
        break;
      }
      case Op::kAdd:
        t = (ta != kNoNode && tb != kNoNode) ? add(ta, tb) : (ta != kNoNode ? ta : tb);
        break;
      case Op::kSub:
        if (ta != kNoNode && tb != kNoNode)
          t = sub(ta, tb);
        else if (ta != kNoNode)
          t = ta;
        else
          t = scale(tb, -1.0);
        break;
      case Op::kMul: {
        NodeId left = (ta != kNoNode) ? mul(ta, n.b) : kNoNode;
        NodeId right = (tb != kNoNode) ? mul(n.a, tb) : kNoNode;
        t = (left != kNoNode && right != kNoNode) ? add(left, right)
                                                  : (left != kNoNode ? left : right);
        break;
      }
      case Op::kDiv:
        // d(a/b) = (da - (a/b) db) / b, reusing this node as a/b.
        if (ta != kNoNode && tb != kNoNode)
          t = div(sub(ta, mul(id, tb)), n.b);
        else if (ta != kNoNode)
          t = div(ta, n.b);
        else
          t = scale(div(mul(id, tb), n.b), -1.0);
        break;
      case Op::kScale:
        t = scale(ta, n.c);
        break;
      case Op::kScalarMul: {
        NodeId left = (ta != kNoNode) ? scalar_mul(ta, n.b) : kNoNode;
        NodeId right = (tb != kNoNode) ? scalar_mul(n.a, tb) : kNoNode;
        t = (left != kNoNode && right != kNoNode) ? add(left, right)
                                                  : (left != kNoNode ? left : right);
        break;
      }
      case Op::kSigmoid:
        t = mul(sigmoid_prime_of(id), ta);
        break;
      case Op::kSoftplus:
        t = mul(sigmoid_of(n.a), ta);
        break;
      case Op::kConcatRows: {
        if (ta == kNoNode)
          ta = constant(Matrix::Zero(value(n.a).rows(), value(n.a).cols()));
        if (tb == kNoNode)
          tb = constant(Matrix::Zero(value(n.b).rows(), value(n.b).cols()));
        t = concat_rows(ta, tb);
        break;
      }
      case Op::kSliceRows:
        t = slice_rows(ta, n.r0, n.r1);
        break;
      case Op::kSum:
        t = sum(ta);
        break;
      case Op::kLog:
        t = div(ta, n.a);
        break;
      case Op::kSqrt:
        t = scale(div(ta, id), 0.5);
        break;
    }
    tangent[i] = t;
  }

  NodeId result = tangent[static_cast<std::size_t>(output)];
  if (result == kNoNode)
    throw ShapeError("directional_derivative: input node " + std::to_string(input) +
                     " is not an ancestor of output node " + std::to_string(output));
  return result;
}

// ---------------------------------------------------------------------------
// Finite-difference audit
// ---------------------------------------------------------------------------

double check_gradient(const ScalarBuilder& build, const std::vector<Tensor>& point,
                      double step) {
  if (step <= 0.0) throw DomainError("check_gradient: step must be positive");

  auto eval = [&](const std::vector<Matrix>& values) {
    Graph g;
    std::vector<NodeId> params;
    params.reserve(values.size());
    for (const Matrix& v : values) params.push_back(g.leaf(v, true));
    NodeId s = build(g, params);
    return g.scalar(s);
  };

  std::vector<Matrix> values;
  values.reserve(point.size());
  for (const Tensor& t : point) values.push_back(t.mat());

  Graph g;
  std::vector<NodeId> params;
  for (const Matrix& v : values) params.push_back(g.leaf(v, true));
  NodeId s = build(g, params);
  std::vector<Tensor> grads = g.gradient(s, params);

  double max_err = 0.0;
  for (std::size_t p = 0; p < values.size(); ++p) {
    for (Eigen::Index i = 0; i < values[p].rows(); ++i) {
      for (Eigen::Index j = 0; j < values[p].cols(); ++j) {
        const double saved = values[p](i, j);
        values[p](i, j) = saved + step;
        const double fp = eval(values);
        values[p](i, j) = saved - step;
        const double fm = eval(values);
        values[p](i, j) = saved;
        const double fd = (fp - fm) / (2.0 * step);
        const double ad = grads[p](i, j);
        const double err =
            std::fabs(ad - fd) / std::fmax(std::fmax(std::fabs(ad), std::fabs(fd)), 1e-6);
        max_err = std::fmax(max_err, err);
      }
    }
  }
  return max_err;
}

}  // namespace idnf
