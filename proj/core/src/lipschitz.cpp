#include "idnf/lipschitz.hpp"

#include <cmath>
#include <string>

#include "idnf/errors.hpp"
#include "idnf/math.hpp"

namespace idnf {

void LipschitzBudget::validate() const {
  if (!(coeff > 0.0 && coeff < 1.0))
    throw ConfigError("LipschitzBudget: coeff must be in (0,1), got " + std::to_string(coeff));
  if (!(p >= 1.0))
    throw ConfigError("LipschitzBudget: p must be >= 1, got " + std::to_string(p));
}

std::pair<double, Vector> spectral_norm_estimate(const Matrix& W, Vector u, int n_iters) {
  if (n_iters < 1) throw DomainError("spectral_norm_estimate: n_iters must be >= 1");
  if (u.size() != W.rows())
    throw ShapeError("spectral_norm_estimate: u has length " + std::to_string(u.size()) +
                     ", expected " + std::to_string(W.rows()));
  if (u.norm() == 0.0) throw DomainError("spectral_norm_estimate: u must be nonzero");
  if (W.isZero(0.0)) return {0.0, std::move(u)};

  double sigma = 0.0;
  for (int it = 0; it < n_iters; ++it) {
    Vector v = W.transpose() * u;
    double vn = v.norm();
    if (vn == 0.0) {
      // u landed exactly in the left null space; re-seed deterministically.
      u = Vector::Ones(W.rows()).normalized();
      v = W.transpose() * u;
      vn = v.norm();
      if (vn == 0.0) return {0.0, std::move(u)};
    }
    v /= vn;
    Vector wv = W * v;
    sigma = wv.norm();
    if (sigma == 0.0) return {0.0, std::move(u)};
    u = wv / sigma;
  }
  return {sigma, std::move(u)};
}

Matrix spectral_normalize(const Matrix& W, double sigma, double coeff) {
  if (sigma < 0.0) throw DomainError("spectral_normalize: sigma must be >= 0");
  if (sigma <= coeff) return W;
  return W * (coeff / sigma);
}

std::pair<double, Vector> spectral_norm_converge(const Matrix& W, Vector u, int min_iters,
                                                 int max_iters, double rel_tol) {
  if (min_iters < 1 || max_iters < min_iters)
    throw DomainError("spectral_norm_converge: need 1 <= min_iters <= max_iters");
  double sigma = 0.0;
  double prev = -1.0;
  for (int it = 0; it < max_iters; ++it) {
    auto [s, u_next] = spectral_norm_estimate(W, std::move(u), 1);
    sigma = s;
    u = std::move(u_next);
    if (sigma == 0.0) break;
    if (it + 1 >= min_iters && sigma - prev <= rel_tol * sigma) break;
    prev = sigma;
  }
  return {sigma, std::move(u)};
}

NodeId normalized_weight_node(Graph& g, NodeId W, const Vector& u, double coeff) {
  const Matrix& w_val = g.value(W);
  if (u.size() != w_val.rows())
    throw ShapeError("normalized_weight_node: u has length " + std::to_string(u.size()) +
                     ", expected " + std::to_string(w_val.rows()));

  Vector v = w_val.transpose() * u;
  double vn = v.norm();
  if (vn == 0.0) return W;  // zero (or null-aligned) matrix is already contractive
  v /= vn;

  NodeId u_const = g.constant(u);
  NodeId v_const = g.constant(v);
  NodeId sigma = g.sum(g.mul(u_const, g.matmul(W, v_const)));
  if (g.scalar(sigma) <= coeff) return W;  // min(1, coeff/sigma) branch: no scaling
  return g.scalar_mul(g.div(g.scalar_constant(coeff), sigma), W);
}

double lipswish(double x, double beta_raw) {
  return x * sigmoid(softplus(beta_raw) * x) / 1.1;
}

NodeId lipswish_node(Graph& g, NodeId x, NodeId beta_raw) {
  NodeId beta = g.softplus(beta_raw);
  NodeId s = g.sigmoid(g.scalar_mul(beta, x));
  return g.scale(g.mul(x, s), 1.0 / 1.1);
}

std::pair<double, double> normalize_concat(double eta1_raw, double eta2_raw) {
  double e1 = softplus(eta1_raw);
  double e2 = softplus(eta2_raw);
  double n = std::sqrt(e1 * e1 + e2 * e2);
  return {e1 / n, e2 / n};
}

double lipschitz_bound_concat(double k1, double k2, double p) {
  if (k1 < 0.0 || k2 < 0.0) throw DomainError("lipschitz_bound_concat: constants must be >= 0");
  if (!(p >= 1.0)) throw DomainError("lipschitz_bound_concat: p must be >= 1");
  double m = std::fmax(k1, k2);
  if (m == 0.0) return 0.0;
  double a = k1 / m, b = k2 / m;
  if (p == 2.0) return m * std::sqrt(a * a + b * b);
  return m * std::pow(std::pow(a, p) + std::pow(b, p), 1.0 / p);
}

NodeId dense_layer_node(Graph& g, NodeId h_in, NodeId W_hat, NodeId beta_raw, NodeId eta1_raw,
                        NodeId eta2_raw, ConcatMode mode, double concat_multiplier) {
  const Matrix& w = g.value(W_hat);
  const Matrix& h = g.value(h_in);
  if (w.cols() != h.rows())
    throw ShapeError("dense_layer: weight " + shape_str(w) + " does not accept input " +
                     shape_str(h));

  NodeId transformed = lipswish_node(g, g.matmul(W_hat, h_in), beta_raw);

  NodeId out;
  if (mode == ConcatMode::kFixed) {
    out = g.scale(g.concat_rows(h_in, transformed), 1.0 / std::sqrt(2.0));
  } else {
    NodeId e1 = g.softplus(eta1_raw);
    NodeId e2 = g.softplus(eta2_raw);
    NodeId norm = g.sqrt(g.add(g.mul(e1, e1), g.mul(e2, e2)));
    out = g.concat_rows(g.scalar_mul(g.div(e1, norm), h_in),
                        g.scalar_mul(g.div(e2, norm), transformed));
  }
  if (concat_multiplier != 1.0) out = g.scale(out, concat_multiplier);
  return out;
}

Tensor dense_layer_forward(const Tensor& h_in, const DenseLayerParams& layer,
                           const LipschitzBudget& budget, ConcatMode mode,
                           double concat_multiplier) {
  budget.validate();
  Graph g;
  NodeId h = g.leaf(h_in);
  NodeId w = g.constant(layer.W);
  NodeId beta = g.scalar_constant(layer.beta_raw);
  NodeId e1 = mode == ConcatMode::kLearnable ? g.scalar_constant(layer.eta1_raw) : kNoNode;
  NodeId e2 = mode == ConcatMode::kLearnable ? g.scalar_constant(layer.eta2_raw) : kNoNode;
  NodeId out = dense_layer_node(g, h, w, beta, e1, e2, mode, concat_multiplier);
  return g.tensor(out);
}

}  // namespace idnf
