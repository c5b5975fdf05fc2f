#pragma once

#include <cstdint>
#include <string>

#include "idnf/lipschitz.hpp"
#include "idnf/toydata.hpp"

namespace idnf {

// Everything a training run depends on. The canonical key=value echo of this
// struct is embedded in checkpoints, so a checkpoint alone reproduces its
// model architecture, data pipeline and seeds.
struct TrainConfig {
  std::string dataset = "two_moons";
  std::int64_t iterations = 50000;
  int batch_size = 256;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double coeff = 0.98;  // spectral bound per weight
  int depth = 4;
  int growth = 90;
  int blocks = 10;
  ConcatMode mode = ConcatMode::kLearnable;
  std::uint64_t seed = 1;
  std::int64_t eval_every = 2500;
  int test_points = 10000;
  double concat_multiplier = 1.0;
  double grad_clip = 0.0;  // 0 disables; otherwise clips the global grad norm
  std::string checkpoint_path = "model.ckpt";
  ToyParams toy;

  void validate() const;
};

// CLI-facing superset: artifact directory and the density/sample commands'
// grid settings.
struct RunConfig {
  TrainConfig train;
  std::string out_dir = ".";
  double density_x1_min = -6.0;
  double density_x1_max = 6.0;
  double density_x2_min = -6.0;
  double density_x2_max = 6.0;
  int density_resolution = 300;
  int sample_count = 10000;

  void validate() const;
};

// Canonical serialization: every TrainConfig key, fixed order, one per line.
std::string to_key_values(const TrainConfig& config);

// Strict parsers: unknown keys, malformed lines and bad values throw
// ConfigError naming the offending line. '#' starts a comment.
// `require_dataset` demands an explicit dataset key (the CLI contract).
TrainConfig train_config_from_string(const std::string& text, const std::string& origin,
                                     bool require_dataset = false);
RunConfig run_config_from_string(const std::string& text, const std::string& origin,
                                 bool require_dataset = true);
RunConfig run_config_from_file(const std::string& path);

const char* mode_name(ConcatMode mode);
ConcatMode mode_from_name(const std::string& name);

}  // namespace idnf
