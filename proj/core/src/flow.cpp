#include "idnf/flow.hpp"

#include <bit>
#include <cmath>
#include <limits>
#include <string>

#include "idnf/errors.hpp"
#include "idnf/math.hpp"

namespace idnf {

namespace {

// sigma estimate from the persisted left iterate alone: |W^T u|. This is the
// same quantity the in-graph normalization encodes as u^T (W v), so frozen
// and trainable bindings agree on the normalized weights.
double persisted_sigma(const Matrix& W, const Vector& u) {
  return (W.transpose() * u).norm();
}

Matrix frozen_normalized(const Matrix& W, const Vector& u, double coeff) {
  return spectral_normalize(W, persisted_sigma(W, u), coeff);
}

struct LayerBinding {
  NodeId W_hat = kNoNode;
  NodeId beta_raw = kNoNode;
  NodeId eta1_raw = kNoNode;
  NodeId eta2_raw = kNoNode;
};

struct BlockBinding {
  std::vector<LayerBinding> layers;
  NodeId proj_hat = kNoNode;
};

// Leaf creation order here must mirror parameter_views(); optimizer state,
// checkpoints and gradient vectors are all aligned by that order.
BlockBinding bind_block(Graph& g, const DenseBlock& blk, double coeff, WeightBinding binding,
                        std::vector<BoundParam>* params, const std::string& prefix) {
  const bool learnable = blk.mode == ConcatMode::kLearnable;
  BlockBinding bb;
  bb.layers.reserve(blk.layers.size());
  for (std::size_t i = 0; i < blk.layers.size(); ++i) {
    const DenseLayerParams& layer = blk.layers[i];
    const std::string lp = prefix + ".layer" + std::to_string(i);
    LayerBinding lb;
    if (binding == WeightBinding::kTrainable) {
      NodeId w = g.leaf(layer.W, true);
      params->push_back({lp + ".W", w});
      lb.W_hat = normalized_weight_node(g, w, layer.u, coeff);
      if (learnable) {
        lb.eta1_raw = g.leaf(Matrix::Constant(1, 1, layer.eta1_raw), true);
        params->push_back({lp + ".eta1_raw", lb.eta1_raw});
        lb.eta2_raw = g.leaf(Matrix::Constant(1, 1, layer.eta2_raw), true);
        params->push_back({lp + ".eta2_raw", lb.eta2_raw});
      }
      lb.beta_raw = g.leaf(Matrix::Constant(1, 1, layer.beta_raw), true);
      params->push_back({lp + ".beta_raw", lb.beta_raw});
    } else {
      lb.W_hat = g.constant(frozen_normalized(layer.W, layer.u, coeff));
      if (learnable) {
        lb.eta1_raw = g.scalar_constant(layer.eta1_raw);
        lb.eta2_raw = g.scalar_constant(layer.eta2_raw);
      }
      lb.beta_raw = g.scalar_constant(layer.beta_raw);
    }
    bb.layers.push_back(lb);
  }

  if (binding == WeightBinding::kTrainable) {
    NodeId w = g.leaf(blk.proj_W, true);
    params->push_back({prefix + ".proj.W", w});
    bb.proj_hat = normalized_weight_node(g, w, blk.proj_u, coeff);
  } else {
    bb.proj_hat = g.constant(frozen_normalized(blk.proj_W, blk.proj_u, coeff));
  }
  return bb;
}

NodeId block_g_node(Graph& g, const DenseBlock& blk, const BlockBinding& bb, NodeId x,
                    double concat_multiplier) {
  NodeId h = x;
  for (std::size_t i = 0; i < blk.layers.size(); ++i) {
    const LayerBinding& lb = bb.layers[i];
    h = dense_layer_node(g, h, lb.W_hat, lb.beta_raw, lb.eta1_raw, lb.eta2_raw, blk.mode,
                         concat_multiplier);
  }
  return g.matmul(bb.proj_hat, h);
}

// det over rows A[i][j] (each a 1 x B node), expanded along the last row with
// minors memoized per column subset. Cost is O(d * 2^d) row ops; d <= 8.
NodeId determinant_rows(Graph& g, const std::vector<std::vector<NodeId>>& A) {
  const int d = static_cast<int>(A.size());
  const std::uint32_t full = (1u << d) - 1u;
  std::vector<NodeId> det(full + 1, kNoNode);
  for (std::uint32_t mask = 1; mask <= full; ++mask) {
    const int r = std::popcount(mask) - 1;
    NodeId acc = kNoNode;
    bool acc_negated = false;
    int pos = 0;
    for (int j = 0; j < d; ++j) {
      if (!(mask & (1u << j))) continue;
      NodeId term = (r == 0) ? A[0][j] : g.mul(A[r][j], det[mask ^ (1u << j)]);
      const bool negative = ((r + pos) % 2) != 0;
      if (acc == kNoNode) {
        acc = term;
        acc_negated = negative;
      } else if (negative == acc_negated) {
        acc = g.add(acc, term);
      } else if (!acc_negated) {
        acc = g.sub(acc, term);
      } else {
        acc = g.sub(term, acc);
        acc_negated = false;
      }
      ++pos;
    }
    det[mask] = acc_negated ? g.scale(acc, -1.0) : acc;
  }
  return det[full];
}

// Per-example ln det(I + J_g) for one block: d forward-mode passes give the
// Jacobian columns, then the closed-form determinant of I + J_g.
NodeId exact_logdet_node(Graph& g, NodeId g_out, NodeId x, int block_index) {
  const int d = static_cast<int>(g.value(x).rows());
  const auto B = g.value(x).cols();
  if (d > 8)
    throw DomainError("logdet_exact: dimension " + std::to_string(d) +
                      " exceeds the exact-path limit of 8");

  std::vector<NodeId> jac_cols(static_cast<std::size_t>(d));
  for (int k = 0; k < d; ++k) {
    Matrix dir = Matrix::Zero(d, B);
    dir.row(k).setOnes();
    jac_cols[static_cast<std::size_t>(k)] = g.directional_derivative(g_out, x, g.constant(dir));
  }

  NodeId ones_row = g.constant(Matrix::Ones(1, B));
  std::vector<std::vector<NodeId>> A(static_cast<std::size_t>(d),
                                     std::vector<NodeId>(static_cast<std::size_t>(d)));
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      NodeId entry = g.slice_rows(jac_cols[static_cast<std::size_t>(j)], i, i + 1);
      if (i == j) entry = g.add(entry, ones_row);
      A[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = entry;
    }
  }

  NodeId det = determinant_rows(g, A);
  const double min_det = g.value(det).minCoeff();
  if (min_det <= 0.0)
    throw ContractViolation("block " + std::to_string(block_index) +
                            ": det(I + J_g) = " + std::to_string(min_det) +
                            " <= 0; a weight escaped its Lipschitz bound");
  return g.log(det);
}

Matrix standard_normal_columns(int rows, int cols, RandomSource& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
  return m;
}

constexpr int kInverseChunk = 512;

}  // namespace

// ---------------------------------------------------------------------------
// FlowModel
// ---------------------------------------------------------------------------

FlowModel FlowModel::create(int dim, int n_blocks, int depth, int growth, ConcatMode mode,
                            double coeff, double concat_multiplier, RandomSource& rng) {
  if (dim < 1 || depth < 1 || growth < 1 || n_blocks < 0)
    throw ConfigError("FlowModel::create: dim/depth/growth must be positive");
  LipschitzBudget{coeff, 2.0}.validate();

  const double raw_one = softplus_inverse(1.0);
  FlowModel m;
  m.dim = dim;
  m.coeff = coeff;
  m.concat_multiplier = concat_multiplier;
  m.blocks.reserve(static_cast<std::size_t>(n_blocks));
  for (int b = 0; b < n_blocks; ++b) {
    DenseBlock blk;
    blk.mode = mode;
    blk.layers.reserve(static_cast<std::size_t>(depth));
    for (int i = 0; i < depth; ++i) {
      const int fan_in = dim + i * growth;
      DenseLayerParams layer;
      layer.W = standard_normal_columns(growth, fan_in, rng) / std::sqrt(double(fan_in));
      layer.u = standard_normal_columns(growth, 1, rng).col(0).normalized();
      layer.eta1_raw = raw_one;
      layer.eta2_raw = raw_one;
      layer.beta_raw = raw_one;
      blk.layers.push_back(std::move(layer));
    }
    // Zero projection: the fresh flow is exactly the identity, so early
    // training starts from a well-conditioned map.
    blk.proj_W = Matrix::Zero(dim, dim + depth * growth);
    blk.proj_u = standard_normal_columns(dim, 1, rng).col(0).normalized();
    m.blocks.push_back(std::move(blk));
  }
  return m;
}

void FlowModel::power_iteration_step() {
  for (DenseBlock& blk : blocks) {
    for (DenseLayerParams& layer : blk.layers)
      layer.u = spectral_norm_estimate(layer.W, std::move(layer.u), 1).second;
    blk.proj_u = spectral_norm_estimate(blk.proj_W, std::move(blk.proj_u), 1).second;
  }
}

void FlowModel::refresh_spectral_state(int n_iters) {
  for (DenseBlock& blk : blocks) {
    for (DenseLayerParams& layer : blk.layers)
      layer.u = spectral_norm_converge(layer.W, std::move(layer.u), n_iters).second;
    blk.proj_u = spectral_norm_converge(blk.proj_W, std::move(blk.proj_u), n_iters).second;
  }
}

void ParamView::set(const Matrix& m) const {
  if (scalar) {
    if (m.rows() != 1 || m.cols() != 1)
      throw ShapeError("ParamView::set: expected (1x1) for scalar parameter " + name);
    *scalar = m(0, 0);
  } else {
    if (m.rows() != matrix->rows() || m.cols() != matrix->cols())
      throw ShapeError("ParamView::set: shape mismatch for parameter " + name);
    *matrix = m;
  }
}

std::vector<ParamView> parameter_views(FlowModel& model) {
  std::vector<ParamView> out;
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    DenseBlock& blk = model.blocks[b];
    const std::string bp = "block" + std::to_string(b);
    for (std::size_t i = 0; i < blk.layers.size(); ++i) {
      DenseLayerParams& layer = blk.layers[i];
      const std::string lp = bp + ".layer" + std::to_string(i);
      out.push_back({lp + ".W", nullptr, &layer.W});
      if (blk.mode == ConcatMode::kLearnable) {
        out.push_back({lp + ".eta1_raw", &layer.eta1_raw, nullptr});
        out.push_back({lp + ".eta2_raw", &layer.eta2_raw, nullptr});
      }
      out.push_back({lp + ".beta_raw", &layer.beta_raw, nullptr});
    }
    out.push_back({bp + ".proj.W", nullptr, &blk.proj_W});
  }
  return out;
}

FlowGraph build_flow_graph(FlowModel& model, const Matrix& x_cols, WeightBinding binding,
                           bool with_logdet, bool with_nll) {
  if (x_cols.rows() != model.dim)
    throw ShapeError("build_flow_graph: input has " + std::to_string(x_cols.rows()) +
                     " rows, model dim is " + std::to_string(model.dim));
  const auto B = x_cols.cols();

  FlowGraph fg;
  fg.x = fg.g.leaf(x_cols);
  NodeId cur = fg.x;
  NodeId logdet_total = kNoNode;
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    const DenseBlock& blk = model.blocks[b];
    BlockBinding bb = bind_block(fg.g, blk, model.coeff, binding, &fg.params,
                                 "block" + std::to_string(b));
    NodeId gout = block_g_node(fg.g, blk, bb, cur, model.concat_multiplier);
    if (with_logdet) {
      NodeId ld = exact_logdet_node(fg.g, gout, cur, static_cast<int>(b));
      logdet_total = logdet_total == kNoNode ? ld : fg.g.add(logdet_total, ld);
    }
    cur = fg.g.add(cur, gout);
  }
  fg.z = cur;
  if (with_logdet && logdet_total == kNoNode)
    logdet_total = fg.g.constant(Matrix::Zero(1, B));
  fg.logdet = logdet_total;

  if (with_nll) {
    if (!with_logdet) throw ShapeError("build_flow_graph: NLL requires the logdet");
    Graph& g = fg.g;
    NodeId half_sq = g.scale(g.sum(g.mul(fg.z, fg.z)), 0.5);
    NodeId norm_const =
        g.scalar_constant(static_cast<double>(B) * 0.5 * model.dim * kLn2Pi);
    NodeId total = g.sub(g.add(norm_const, half_sq), g.sum(fg.logdet));
    fg.mean_nll = g.scale(total, 1.0 / static_cast<double>(B));
  }
  return fg;
}

// ---------------------------------------------------------------------------
// Block-level ops
// ---------------------------------------------------------------------------

namespace {

struct FrozenBlockGraph {
  Graph g;
  NodeId x = kNoNode;
  NodeId g_out = kNoNode;
};

FrozenBlockGraph frozen_block_graph(const DenseBlock& blk, double coeff,
                                    double concat_multiplier, Eigen::Index cols) {
  FrozenBlockGraph fb;
  fb.x = fb.g.leaf(Matrix::Zero(blk.dim(), cols));
  BlockBinding bb = bind_block(fb.g, blk, coeff, WeightBinding::kFrozen, nullptr, "block");
  fb.g_out = block_g_node(fb.g, blk, bb, fb.x, concat_multiplier);
  return fb;
}

}  // namespace

Matrix g_forward(const Matrix& x_cols, const DenseBlock& block, double coeff,
                 double concat_multiplier) {
  FrozenBlockGraph fb = frozen_block_graph(block, coeff, concat_multiplier, x_cols.cols());
  fb.g.set_leaf(fb.x, x_cols);
  fb.g.recompute();
  return fb.g.value(fb.g_out);
}

Tensor g_forward(const Tensor& x, const DenseBlock& block, double coeff,
                 double concat_multiplier) {
  return Tensor(g_forward(x.mat(), block, coeff, concat_multiplier));
}

Tensor block_forward(const Tensor& x, const DenseBlock& block, double coeff,
                     double concat_multiplier) {
  return Tensor(x.mat() + g_forward(x.mat(), block, coeff, concat_multiplier));
}

LogDetResult logdet_exact(const Tensor& x, const DenseBlock& block, double coeff,
                          double concat_multiplier) {
  if (x.cols() != 1) throw ShapeError("logdet_exact: expected a single point (d x 1)");
  FrozenBlockGraph fb = frozen_block_graph(block, coeff, concat_multiplier, x.cols());
  fb.g.set_leaf(fb.x, x.mat());
  fb.g.recompute();
  NodeId ld = exact_logdet_node(fb.g, fb.g_out, fb.x, 0);
  LogDetResult r;
  r.value = fb.g.value(ld)(0, 0);
  r.method = LogDetResult::Method::kExact;
  r.terms_used = block.dim();
  r.probes_used = block.dim();
  return r;
}

LogDetResult logdet_series(const Tensor& x, const DenseBlock& block, int n_terms, int n_probes,
                           RandomSource& rng, double coeff, double concat_multiplier,
                           TraceMode trace) {
  if (n_terms < 1) throw DomainError("logdet_series: n_terms must be >= 1");
  if (trace == TraceMode::kHutchinson && n_probes < 1)
    throw DomainError("logdet_series: n_probes must be >= 1");
  if (x.cols() != 1) throw ShapeError("logdet_series: expected a single point (d x 1)");

  const int d = block.dim();
  const int cols = trace == TraceMode::kExactBasis ? d : n_probes;

  // One column per probe, all at the same input point.
  Matrix x_rep = x.mat().replicate(1, cols);
  FrozenBlockGraph fb = frozen_block_graph(block, coeff, concat_multiplier, cols);
  fb.g.set_leaf(fb.x, x_rep);
  fb.g.recompute();

  Matrix probes(d, cols);
  if (trace == TraceMode::kExactBasis) {
    probes = Matrix::Identity(d, d);
  } else {
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < d; ++i) probes(i, j) = rng.rademacher();
  }

  NodeId tangent = fb.g.constant(probes);
  double value = 0.0;
  double sign = 1.0;
  for (int k = 1; k <= n_terms; ++k) {
    tangent = fb.g.directional_derivative(fb.g_out, fb.x, tangent);  // J^k applied to probes
    const Matrix& tk = fb.g.value(tangent);
    double trace_k;
    if (trace == TraceMode::kExactBasis) {
      trace_k = 0.0;
      for (int j = 0; j < d; ++j) trace_k += tk(j, j);  // e_j^T J^k e_j
    } else {
      trace_k = probes.cwiseProduct(tk).sum() / static_cast<double>(cols);
    }
    value += sign * trace_k / static_cast<double>(k);
    sign = -sign;
  }

  LogDetResult r;
  r.value = value;
  r.method = LogDetResult::Method::kSeries;
  r.terms_used = n_terms;
  r.probes_used = cols;
  return r;
}

Matrix block_inverse(const Matrix& y_cols, const DenseBlock& block, double coeff,
                     double concat_multiplier, int max_iter, double tol,
                     int* iterations_used) {
  if (max_iter < 1) throw DomainError("block_inverse: max_iter must be >= 1");
  if (tol <= 0.0) throw DomainError("block_inverse: tol must be positive");

  FrozenBlockGraph fb = frozen_block_graph(block, coeff, concat_multiplier, y_cols.cols());
  Matrix xk = y_cols;
  double residual = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    fb.g.set_leaf(fb.x, xk);
    fb.g.recompute();
    Matrix x_next = y_cols - fb.g.value(fb.g_out);
    residual = (x_next - xk).colwise().norm().maxCoeff();
    xk = std::move(x_next);
    if (residual < tol) {
      if (iterations_used) *iterations_used = it + 1;
      return xk;
    }
  }
  throw ConvergenceError("block_inverse: no convergence after " + std::to_string(max_iter) +
                             " iterations (last step norm " + std::to_string(residual) + ")",
                         residual);
}

Tensor block_inverse(const Tensor& y, const DenseBlock& block, double coeff,
                     double concat_multiplier, int max_iter, double tol,
                     int* iterations_used) {
  return Tensor(
      block_inverse(y.mat(), block, coeff, concat_multiplier, max_iter, tol, iterations_used));
}

// ---------------------------------------------------------------------------
// Model-level ops
// ---------------------------------------------------------------------------

FlowForwardResult flow_forward(const Tensor& x, FlowModel& model, LogDetMethod method,
                               int series_terms, int series_probes, RandomSource* rng) {
  if (x.cols() != 1) throw ShapeError("flow_forward: expected a single point (d x 1)");
  FlowForwardResult out;
  out.method = method;
  if (method == LogDetMethod::kExact) {
    FlowGraph fg = build_flow_graph(model, x.mat(), WeightBinding::kFrozen, true, false);
    out.z = fg.g.tensor(fg.z);
    out.total_logdet = fg.g.value(fg.logdet)(0, 0);
    return out;
  }
  if (!rng) throw DomainError("flow_forward: series method requires an RNG");
  Matrix cur = x.mat();
  double logdet = 0.0;
  for (const DenseBlock& blk : model.blocks) {
    logdet += logdet_series(Tensor(cur), blk, series_terms, series_probes, *rng, model.coeff,
                            model.concat_multiplier)
                  .value;
    cur = cur + g_forward(cur, blk, model.coeff, model.concat_multiplier);
  }
  out.z = Tensor(cur);
  out.total_logdet = logdet;
  return out;
}

namespace {

Matrix flow_inverse_chunk(const Matrix& z_cols, const FlowModel& model, int max_iter,
                          double tol) {
  Matrix cur = z_cols;
  for (auto it = model.blocks.rbegin(); it != model.blocks.rend(); ++it)
    cur = block_inverse(cur, *it, model.coeff, model.concat_multiplier, max_iter, tol);
  return cur;
}

}  // namespace

Tensor flow_inverse(const Tensor& z, const FlowModel& model, int max_iter, double tol) {
  const Matrix& zc = z.mat();
  Matrix out(zc.rows(), zc.cols());
  for (Eigen::Index c0 = 0; c0 < zc.cols(); c0 += kInverseChunk) {
    const auto n = std::min<Eigen::Index>(kInverseChunk, zc.cols() - c0);
    out.middleCols(c0, n) = flow_inverse_chunk(zc.middleCols(c0, n), model, max_iter, tol);
  }
  return Tensor(std::move(out));
}

double log_likelihood(const Tensor& x, FlowModel& model) {
  if (x.cols() != 1) throw ShapeError("log_likelihood: expected a single point (d x 1)");
  return log_likelihood_batch(x.mat(), model)(0);
}

Eigen::RowVectorXd log_likelihood_batch(const Matrix& x_cols, FlowModel& model) {
  FlowGraph fg = build_flow_graph(model, x_cols, WeightBinding::kFrozen, true, false);
  const Matrix& z = fg.g.value(fg.z);
  const Matrix& ld = fg.g.value(fg.logdet);
  const double c = 0.5 * model.dim * kLn2Pi;
  Eigen::RowVectorXd out(x_cols.cols());
  for (Eigen::Index j = 0; j < x_cols.cols(); ++j)
    out(j) = -c - 0.5 * z.col(j).squaredNorm() + ld(0, j);
  return out;
}

Matrix sample(const FlowModel& model, int n, RandomSource& rng, int max_iter, double tol) {
  if (n < 0) throw DomainError("sample: n must be >= 0");
  Matrix z = standard_normal_columns(model.dim, n, rng);
  Matrix x(model.dim, n);
  for (Eigen::Index c0 = 0; c0 < n; c0 += kInverseChunk) {
    const auto cols = std::min<Eigen::Index>(kInverseChunk, n - c0);
    x.middleCols(c0, cols) = flow_inverse_chunk(z.middleCols(c0, cols), model, max_iter, tol);
  }
  return x.transpose();  // points as rows
}

}  // namespace idnf
