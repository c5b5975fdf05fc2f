#include "idnf/optimizer.hpp"

#include <cmath>
#include <string>

#include "idnf/errors.hpp"

namespace idnf {

OptimState OptimState::zeros_like(const std::vector<ParamView>& params) {
  OptimState s;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const ParamView& p : params) {
    s.m.push_back(Matrix::Zero(p.rows(), p.cols()));
    s.v.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
  return s;
}

void adam_step(const std::vector<ParamView>& params, const std::vector<Tensor>& grads,
               OptimState& state, const AdamHyper& hyper) {
  if (params.size() != grads.size() || params.size() != state.m.size() ||
      params.size() != state.v.size())
    throw ShapeError("adam_step: parameter/gradient/state counts disagree");

  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].mat().allFinite())
      throw ContractViolation("adam_step: non-finite gradient for parameter '" +
                              params[i].name + "'");
    if (grads[i].rows() != params[i].rows() || grads[i].cols() != params[i].cols())
      throw ShapeError("adam_step: gradient shape mismatch for parameter '" + params[i].name +
                       "'");
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double corr1 = 1.0 - std::pow(hyper.beta1, t);
  const double corr2 = 1.0 - std::pow(hyper.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = grads[i].mat();
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g.cwiseProduct(g);
    Matrix m_hat = state.m[i] / corr1;
    Matrix v_hat = state.v[i] / corr2;
    Matrix update =
        hyper.lr * m_hat.cwiseQuotient(v_hat.cwiseSqrt() + Matrix::Constant(
                                            v_hat.rows(), v_hat.cols(), hyper.eps));
    params[i].set(params[i].get() - update);
  }
}

}  // namespace idnf
