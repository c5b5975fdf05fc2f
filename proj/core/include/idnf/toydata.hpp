#pragma once

#include <cstdint>
#include <string>

#include "idnf/flow.hpp"
#include "idnf/rng.hpp"
#include "idnf/tensor.hpp"

namespace idnf {

// Generator constants for the 2-D benchmark distributions. Defaults follow
// the parameterization the flow literature settled on; every constant is
// exposed through the run configuration.
struct ToyParams {
  double circles_factor = 0.5;   // inner/outer radius ratio
  double circles_noise = 0.08;   // isotropic Gaussian noise before scaling
  double circles_scale = 3.0;
  double moons_noise = 0.1;
  double moons_scale = 2.0;
  double moons_shift_x = -1.0;
  double moons_shift_y = -0.2;
  double checker_scale = 2.0;    // board spans [-2,2]^2 before scaling
};

struct ToyDataset {
  std::string name;
  Matrix points;  // n x 2, points as rows
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(points.rows()); }
};

// Names: two_circles | checkerboard | two_moons | gaussian (the last is a
// plain standard normal, kept as a calibration baseline). Draws consume the
// rng stream; identical (name, n, seed) reproduces identical bytes.
ToyDataset generate(const std::string& name, int n, RandomSource& rng,
                    const ToyParams& params = {});

// Mean negative log-likelihood of the model over the dataset, in nats.
double nll_nats(FlowModel& model, const ToyDataset& data);

// Two-column CSV with header "x1,x2".
void write_csv(const ToyDataset& data, const std::string& path);

}  // namespace idnf
