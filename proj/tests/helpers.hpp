#pragma once

// Shared model-construction utilities for the flow tests.

#include <cmath>
#include <vector>

#include "idnf/flow.hpp"
#include "idnf/math.hpp"
#include "idnf/rng.hpp"
#include "oracles.hpp"

namespace helpers {

using idnf::ConcatMode;
using idnf::DenseBlock;
using idnf::DenseLayerParams;
using idnf::FlowModel;
using idnf::Matrix;
using idnf::RandomSource;
using idnf::Vector;

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, RandomSource& rng,
                            double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

inline Vector random_unit(Eigen::Index n, RandomSource& rng) {
  return random_matrix(n, 1, rng).col(0).normalized();
}

// Block computing exactly g(x) = A x: one fixed-mode layer with zero weights
// (so the transformed half is zero) and a projection that undoes the sqrt(2)
// division. Requires |A|_2 < coeff / sqrt(2) so the projection passes through
// the spectral normalization unscaled.
inline DenseBlock linear_block(const Matrix& A) {
  const auto d = A.rows();
  DenseBlock blk;
  blk.mode = ConcatMode::kFixed;
  DenseLayerParams layer;
  layer.W = Matrix::Zero(d, d);
  layer.u = Vector::Ones(d).normalized();
  layer.beta_raw = idnf::softplus_inverse(1.0);
  layer.eta1_raw = layer.eta2_raw = idnf::softplus_inverse(1.0);
  blk.layers.push_back(std::move(layer));
  blk.proj_W = Matrix::Zero(d, 2 * d);
  blk.proj_W.leftCols(d) = std::sqrt(2.0) * A;
  blk.proj_u = Vector::Ones(d).normalized();
  return blk;
}

// Random block with raw weights and converged power-iteration states; the
// forward paths apply the spectral bound themselves.
inline DenseBlock random_block(int d, int depth, int growth, ConcatMode mode,
                               RandomSource& rng) {
  DenseBlock blk;
  blk.mode = mode;
  for (int i = 0; i < depth; ++i) {
    const int fan_in = d + i * growth;
    DenseLayerParams layer;
    layer.W = random_matrix(growth, fan_in, rng, 2.0 / std::sqrt(double(fan_in)));
    layer.u = random_unit(growth, rng);
    layer.u = idnf::spectral_norm_estimate(layer.W, layer.u, 100).second;
    layer.beta_raw = idnf::softplus_inverse(1.0);
    layer.eta1_raw = rng.uniform(-0.5, 1.5);
    layer.eta2_raw = rng.uniform(-0.5, 1.5);
    blk.layers.push_back(std::move(layer));
  }
  blk.proj_W = random_matrix(d, d + depth * growth, rng, 0.5);
  blk.proj_u = random_unit(d, rng);
  blk.proj_u = idnf::spectral_norm_estimate(blk.proj_W, blk.proj_u, 100).second;
  return blk;
}

inline FlowModel random_model(int d, int n_blocks, int depth, int growth, ConcatMode mode,
                              double coeff, RandomSource& rng) {
  FlowModel m;
  m.dim = d;
  m.coeff = coeff;
  for (int b = 0; b < n_blocks; ++b) m.blocks.push_back(random_block(d, depth, growth, mode, rng));
  return m;
}

// Max relative error between reverse-mode gradients of the mean NLL and
// central finite differences over every parameter entry. The graph is
// rebuilt per probe exactly as the training step builds it.
inline double model_nll_gradcheck(FlowModel& model, const Matrix& x_cols, double step) {
  using idnf::build_flow_graph;
  using idnf::FlowGraph;
  using idnf::NodeId;

  FlowGraph fg = build_flow_graph(model, x_cols, idnf::WeightBinding::kTrainable, true, true);
  std::vector<NodeId> nodes;
  nodes.reserve(fg.params.size());
  for (const auto& p : fg.params) nodes.push_back(p.node);
  std::vector<idnf::Tensor> grads = fg.g.gradient(fg.mean_nll, nodes);

  auto nll_value = [&]() {
    FlowGraph f = build_flow_graph(model, x_cols, idnf::WeightBinding::kTrainable, true, true);
    return f.g.scalar(f.mean_nll);
  };

  std::vector<idnf::ParamView> views = idnf::parameter_views(model);
  double worst = 0.0;
  for (std::size_t p = 0; p < views.size(); ++p) {
    Matrix val = views[p].get();
    for (Eigen::Index i = 0; i < val.rows(); ++i) {
      for (Eigen::Index j = 0; j < val.cols(); ++j) {
        const double saved = val(i, j);
        val(i, j) = saved + step;
        views[p].set(val);
        const double fp = nll_value();
        val(i, j) = saved - step;
        views[p].set(val);
        const double fm = nll_value();
        val(i, j) = saved;
        views[p].set(val);
        const double fd = (fp - fm) / (2.0 * step);
        const double ad = grads[p](i, j);
        worst = std::fmax(worst, oracle::rel_err(ad, fd));
      }
    }
  }
  return worst;
}

// Largest normalized spectral norm across all weights, measured by the SVD
// oracle against the same persisted-state normalization the forward pass uses.
inline double max_normalized_spectral_norm(const FlowModel& model) {
  double worst = 0.0;
  auto check = [&](const Matrix& W, const Vector& u) {
    Matrix w_hat = idnf::spectral_normalize(W, (W.transpose() * u).norm(), model.coeff);
    if (w_hat.size() > 0 && !w_hat.isZero(0.0))
      worst = std::fmax(worst, oracle::spectral_norm(w_hat));
  };
  for (const DenseBlock& blk : model.blocks) {
    for (const DenseLayerParams& layer : blk.layers) check(layer.W, layer.u);
    check(blk.proj_W, blk.proj_u);
  }
  return worst;
}

}  // namespace helpers
