#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "idnf/config.hpp"
#include "idnf/flow.hpp"
#include "idnf/optimizer.hpp"

namespace idnf {

// Versioned binary container (magic "IDNF1", all integers and doubles
// little-endian): config echo, trainable parameters, spectral-state buffers,
// Adam moments, and the data-stream RNG state. Matrices are written row-major.
struct Checkpoint {
  std::string config_echo;  // canonical key=value text of the TrainConfig
  std::int64_t iteration = 0;
  std::vector<std::pair<std::string, Matrix>> params;   // canonical order
  std::vector<std::pair<std::string, Matrix>> buffers;  // power-iteration u states
  std::vector<std::pair<std::string, Matrix>> opt_m;
  std::vector<std::pair<std::string, Matrix>> opt_v;
  std::int64_t opt_step = 0;
  std::string rng_state;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

// Deterministic model construction from a config (seeded init + converged
// spectral states). train() and checkpoint restoration share this path.
FlowModel model_from_config(const TrainConfig& config);

Checkpoint make_checkpoint(FlowModel& model, const TrainConfig& config, const OptimState& opt,
                           const std::string& rng_state, std::int64_t iteration);

struct RestoredRun {
  TrainConfig config;
  FlowModel model;
  OptimState opt;
  std::string rng_state;
  std::int64_t iteration = 0;
};

RestoredRun restore(const Checkpoint& ckpt);

// Seed-stream purposes, shared by train() and restore().
inline constexpr std::uint64_t kStreamInit = 0;
inline constexpr std::uint64_t kStreamData = 1;
inline constexpr std::uint64_t kStreamTest = 2;

}  // namespace idnf
