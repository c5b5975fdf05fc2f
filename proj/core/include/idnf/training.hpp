#pragma once

#include <functional>
#include <vector>

#include "idnf/checkpoint.hpp"
#include "idnf/config.hpp"
#include "idnf/flow.hpp"
#include "idnf/optimizer.hpp"

namespace idnf {

struct EvalRecord {
  std::int64_t iteration = 0;
  double train_nll = 0.0;  // batch NLL at this step
  double test_nll = 0.0;   // held-out fresh draw
  double seconds = 0.0;    // wall time since training start
};

struct TrainResult {
  Checkpoint checkpoint;
  FlowModel model;  // final state (spectral states refreshed)
  std::vector<EvalRecord> evals;
  std::vector<double> loss_history;  // one batch NLL per iteration
};

using EvalCallback = std::function<void(const EvalRecord&)>;

// Maximum-likelihood training: fresh generator batches, one power-iteration
// round per step before the forward pass, Adam on the exact-log-det NLL,
// periodic evaluation on a fixed test draw. Deterministic given the config.
// The latest checkpoint is written at every eval point to checkpoint_file
// (resolved runtime location; defaults to config.checkpoint_path, empty
// disables writes). The config echo embedded in the checkpoint keeps the
// configured path, so the artifact location cannot perturb its bytes. A
// non-finite loss aborts (ContractViolation) leaving the last written
// checkpoint in place.
TrainResult train(const TrainConfig& config, const EvalCallback& on_eval = {},
                  const std::string& checkpoint_file = {});

struct EtaRow {
  int block = 0;
  int layer = 0;
  double eta1_hat = 0.0;
  double eta2_hat = 0.0;
  bool transformed_dominant = false;  // eta2_hat > eta1_hat
};

struct EtaReport {
  std::vector<EtaRow> rows;   // blocks x depth rows
  bool fixed_mode = false;    // constant 1/sqrt(2) entries, reported with a notice
};

EtaReport eta_report(const FlowModel& model);

// Max over sampled pairs of |g(v)-g(w)| / |v-w|: an empirical lower bound on
// Lip(g). Pairs mix independent draws across scales 1e-3..1e3 with local
// perturbation pairs.
double empirical_lipschitz(const DenseBlock& block, int n_pairs, RandomSource& rng, double coeff,
                           double concat_multiplier = 1.0);

}  // namespace idnf
