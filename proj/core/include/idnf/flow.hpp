#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "idnf/graph.hpp"
#include "idnf/lipschitz.hpp"
#include "idnf/rng.hpp"
#include "idnf/tensor.hpp"

namespace idnf {

// Invertible residual unit F(x) = x + g(x), where g stacks `depth` dense
// layers (each concatenating its input with a LipSwish-transformed copy,
// widening by `growth`) and a final linear projection back to R^d. With every
// weight spectrally bounded below 1 and each concatenation normalized,
// Lip(g) < 1 and F is invertible by fixed-point iteration.
struct DenseBlock {
  std::vector<DenseLayerParams> layers;
  Matrix proj_W;  // d x (d + depth*growth)
  Vector proj_u;  // power-iteration state of proj_W
  ConcatMode mode = ConcatMode::kLearnable;

  int dim() const { return static_cast<int>(proj_W.rows()); }
  int depth() const { return static_cast<int>(layers.size()); }
  int growth() const { return layers.empty() ? 0 : static_cast<int>(layers[0].W.rows()); }
};

// A stack of DenseBlocks mapping data x to latent z (blocks applied in
// order), with a standard Gaussian base on R^d. Sampling applies the
// inverses in reverse order.
struct FlowModel {
  int dim = 2;
  double coeff = 0.98;             // spectral bound per weight
  double concat_multiplier = 1.0;  // optional extra contraction on each layer
  std::vector<DenseBlock> blocks;

  // Fresh model: layer weights ~ N(0, 1/fan_in), projections zero (so the
  // initial flow is the identity), eta and beta raws set so softplus gives
  // exactly 1, u states random unit vectors.
  static FlowModel create(int dim, int n_blocks, int depth, int growth, ConcatMode mode,
                          double coeff, double concat_multiplier, RandomSource& rng);

  // One power-iteration round on every weight's persisted u.
  void power_iteration_step();

  // Converged re-estimate of every u (used before evaluation/checkpointing
  // so the normalized weights honor the bound tightly). n_iters is the
  // minimum round count; iteration continues until the estimate stagnates.
  void refresh_spectral_state(int n_iters = 100);
};

struct LogDetResult {
  double value = 0.0;  // nats
  enum class Method { kExact, kSeries } method = Method::kExact;
  int terms_used = 0;
  int probes_used = 0;
};

enum class LogDetMethod { kExact, kSeries };
enum class TraceMode { kHutchinson, kExactBasis };

// ---------------------------------------------------------------------------
// Graph construction
// ---------------------------------------------------------------------------

// Canonical traversal of trainable parameters ("block0.layer0.W",
// "block0.layer0.eta1_raw", ..., "block0.proj.W"). Fixed-mode models skip
// the eta raws. Every consumer (graph binding, optimizer, checkpoints)
// shares this order.
struct ParamView {
  std::string name;
  double* scalar = nullptr;  // exactly one of {scalar, matrix} is set
  Matrix* matrix = nullptr;

  Matrix get() const { return scalar ? Matrix::Constant(1, 1, *scalar) : *matrix; }
  void set(const Matrix& m) const;
  Eigen::Index rows() const { return scalar ? 1 : matrix->rows(); }
  Eigen::Index cols() const { return scalar ? 1 : matrix->cols(); }
};

std::vector<ParamView> parameter_views(FlowModel& model);

enum class WeightBinding {
  kTrainable,  // raw weights as trainable leaves + in-graph normalization
  kFrozen,     // pre-normalized weights as constants
};

struct BoundParam {
  std::string name;
  NodeId node;
};

// One evaluation of the flow over a batch (columns of x_cols are examples).
struct FlowGraph {
  Graph g;
  NodeId x = kNoNode;        // d x B leaf
  NodeId z = kNoNode;        // d x B
  NodeId logdet = kNoNode;   // 1 x B, exact per-example ln det(I + J_g) summed over blocks
  NodeId mean_nll = kNoNode; // scalar
  std::vector<BoundParam> params;  // trainable binding only, in parameter_views order
};

FlowGraph build_flow_graph(FlowModel& model, const Matrix& x_cols, WeightBinding binding,
                           bool with_logdet, bool with_nll);

// ---------------------------------------------------------------------------
// Block-level operations
// ---------------------------------------------------------------------------

// g(x): layer composition then projection. x may carry one point (d x 1) or
// a batch as columns.
Matrix g_forward(const Matrix& x_cols, const DenseBlock& block, double coeff,
                 double concat_multiplier = 1.0);
Tensor g_forward(const Tensor& x, const DenseBlock& block, double coeff,
                 double concat_multiplier = 1.0);

// F(x) = x + g(x).
Tensor block_forward(const Tensor& x, const DenseBlock& block, double coeff,
                     double concat_multiplier = 1.0);

// ln det(I + J_g(x)) by materializing J_g column-wise with forward-mode
// passes over the recorded block (d <= 8). det(I + J_g) <= 0 throws
// ContractViolation: a contractive g cannot produce it.
LogDetResult logdet_exact(const Tensor& x, const DenseBlock& block, double coeff,
                          double concat_multiplier = 1.0);

// Truncated power series sum_k (-1)^(k+1)/k tr(J_g^k), with the trace taken
// either exactly (basis probes) or by Hutchinson estimation with n_probes
// Rademacher vectors. Probe powers are iterated directional derivatives.
LogDetResult logdet_series(const Tensor& x, const DenseBlock& block, int n_terms, int n_probes,
                           RandomSource& rng, double coeff, double concat_multiplier = 1.0,
                           TraceMode trace = TraceMode::kHutchinson);

// Banach fixed-point inversion: x_{k+1} = y - g(x_k) until the step norm
// drops below tol (per column, batched). Throws ConvergenceError with the
// last residual if max_iter is exhausted.
Matrix block_inverse(const Matrix& y_cols, const DenseBlock& block, double coeff,
                     double concat_multiplier = 1.0, int max_iter = 200, double tol = 1e-8,
                     int* iterations_used = nullptr);
Tensor block_inverse(const Tensor& y, const DenseBlock& block, double coeff,
                     double concat_multiplier = 1.0, int max_iter = 200, double tol = 1e-8,
                     int* iterations_used = nullptr);

// ---------------------------------------------------------------------------
// Model-level operations
// ---------------------------------------------------------------------------

struct FlowForwardResult {
  Tensor z;
  double total_logdet = 0.0;
  LogDetMethod method = LogDetMethod::kExact;
};

FlowForwardResult flow_forward(const Tensor& x, FlowModel& model,
                               LogDetMethod method = LogDetMethod::kExact,
                               int series_terms = 10, int series_probes = 64,
                               RandomSource* rng = nullptr);

Tensor flow_inverse(const Tensor& z, const FlowModel& model, int max_iter = 200,
                    double tol = 1e-8);

// ln p(x) = ln N(z; 0, I) + total logdet, in nats.
double log_likelihood(const Tensor& x, FlowModel& model);

// Batched log-likelihood, one entry per column of x_cols.
Eigen::RowVectorXd log_likelihood_batch(const Matrix& x_cols, FlowModel& model);

// Draws z ~ N(0, I_d) and inverts the flow; returns points as rows (n x d).
Matrix sample(const FlowModel& model, int n, RandomSource& rng, int max_iter = 200,
              double tol = 1e-8);

}  // namespace idnf
