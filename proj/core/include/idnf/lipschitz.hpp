#pragma once

#include <utility>

#include "idnf/graph.hpp"
#include "idnf/tensor.hpp"

namespace idnf {

// Target contraction per constrained linear map, plus the norm order used by
// the concatenation bound.
struct LipschitzBudget {
  double coeff = 0.98;  // in (0, 1)
  double p = 2.0;       // >= 1

  void validate() const;
};

enum class ConcatMode { kFixed, kLearnable };

// One dense layer: h -> [eta1_hat * h ; eta2_hat * lipswish(W_hat h)], with
// (eta1_hat, eta2_hat) either the fixed (1/sqrt(2), 1/sqrt(2)) point or the
// softplus-then-unit-circle normalization of two raw scalars. W is the raw
// trainable matrix; u is the persisted power-iteration state that tracks its
// leading left singular vector.
struct DenseLayerParams {
  Matrix W;             // growth x fan_in
  double eta1_raw = 0;  // softplus(raw) > 0 always
  double eta2_raw = 0;
  double beta_raw = 0;  // LipSwish slope parameter, softplus(raw) = beta
  Vector u;             // unit vector, length = rows of W
};

// -- spectral normalization ---------------------------------------------

// Power iteration for the largest singular value. Runs n_iters rounds of
//   v = normalize(W^T u);  sigma = |W v|;  u = W v / sigma
// and returns the final (sigma, u). sigma approaches |W|_2 from below and is
// non-decreasing over rounds. A zero matrix yields sigma = 0 with u unchanged.
std::pair<double, Vector> spectral_norm_estimate(const Matrix& W, Vector u, int n_iters);

// W * min(1, coeff / sigma). sigma = 0 returns W unchanged.
Matrix spectral_normalize(const Matrix& W, double sigma, double coeff);

// Runs spectral_norm_estimate rounds until the estimate stagnates (relative
// gain below rel_tol), with at least min_iters and at most max_iters rounds.
// The Rayleigh sequence is monotone, so stagnation certifies convergence even
// when the top singular values cluster and a fixed iteration budget cannot.
std::pair<double, Vector> spectral_norm_converge(const Matrix& W, Vector u, int min_iters = 100,
                                                 int max_iters = 20000, double rel_tol = 1e-11);

// Records the soft normalization in-graph so gradients flow through the
// scale factor: with v = normalize(W^T u) held constant,
//   sigma = u^T (W v)   ( = |W^T u|, whose exact W-gradient is u v^T )
//   W_hat = W * min(1, coeff / sigma).
// u is read, not updated; call spectral_norm_estimate to advance the state.
NodeId normalized_weight_node(Graph& g, NodeId W, const Vector& u, double coeff);

// -- activations and concatenation ---------------------------------------

// x * sigmoid(softplus(beta_raw) * x) / 1.1, slope bounded by 1 for any beta.
double lipswish(double x, double beta_raw);

// beta_raw node -> LipSwish of x applied elementwise.
NodeId lipswish_node(Graph& g, NodeId x, NodeId beta_raw);

// softplus, then projection onto the unit quarter-circle:
//   eta_i = softplus(eta_i_raw),  eta_i_hat = eta_i / sqrt(eta1^2 + eta2^2).
// Both outputs are in (0, 1) and their squares sum to 1.
std::pair<double, double> normalize_concat(double eta1_raw, double eta2_raw);

// (K1^p + K2^p)^(1/p): Lipschitz bound of a concatenation of a K1- and a
// K2-Lipschitz map under the p-norm. Factored so the equal-K case returns
// K * 2^(1/p) exactly.
double lipschitz_bound_concat(double k1, double k2, double p);

// -- layer forward ---------------------------------------------------------

// Graph form of the layer. W_hat must already carry the spectral bound.
// In fixed mode the concatenation is divided by sqrt(2); in learnable mode
// eta raws are normalized in-graph instead. concat_multiplier (usually 1)
// scales the whole layer output.
NodeId dense_layer_node(Graph& g, NodeId h_in, NodeId W_hat, NodeId beta_raw, NodeId eta1_raw,
                        NodeId eta2_raw, ConcatMode mode, double concat_multiplier = 1.0);

// Value-level convenience: runs the same graph computation on one input.
// layer.W is taken as already normalized.
Tensor dense_layer_forward(const Tensor& h_in, const DenseLayerParams& layer,
                           const LipschitzBudget& budget, ConcatMode mode,
                           double concat_multiplier = 1.0);

}  // namespace idnf
