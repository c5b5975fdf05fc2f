#pragma once

#include <cstdint>
#include <vector>

#include "idnf/flow.hpp"
#include "idnf/tensor.hpp"

namespace idnf {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimState {
  std::vector<Matrix> m;  // first moments, aligned with the parameter list
  std::vector<Matrix> v;  // second moments
  std::int64_t step = 0;

  static OptimState zeros_like(const std::vector<ParamView>& params);
};

// One bias-corrected Adam update, applied in place through the views.
// A non-finite gradient aborts with a diagnostic naming the parameter.
void adam_step(const std::vector<ParamView>& params, const std::vector<Tensor>& grads,
               OptimState& state, const AdamHyper& hyper);

}  // namespace idnf
