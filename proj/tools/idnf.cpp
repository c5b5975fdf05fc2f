// idnf: train and inspect invertible-DenseNet normalizing flows on 2-D toys.

#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "idnf/checkpoint.hpp"
#include "idnf/config.hpp"
#include "idnf/errors.hpp"
#include "idnf/flow.hpp"
#include "idnf/math.hpp"
#include "idnf/toydata.hpp"
#include "idnf/training.hpp"

namespace fs = std::filesystem;
using idnf::Matrix;

namespace {

constexpr int kUsageError = 2;

struct GlobalArgs {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
};

// All artifacts stay inside --out; relative paths may not escape it.
fs::path artifact_path(const GlobalArgs& g, const std::string& rel) {
  fs::path p(rel);
  if (p.is_absolute()) throw idnf::ConfigError("artifact path must be relative: " + rel);
  for (const auto& part : p)
    if (part == "..") throw idnf::ConfigError("artifact path may not escape the output directory: " + rel);
  fs::create_directories(g.out_dir);
  return fs::path(g.out_dir) / p;
}

std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

int worker_count(int n_chunks) {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  if (const char* env = std::getenv("IDNF_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) hw = std::min<unsigned>(hw, static_cast<unsigned>(v));
  }
  return static_cast<int>(std::min<unsigned>(hw, static_cast<unsigned>(std::max(n_chunks, 1))));
}

// Runs fn(chunk_index) over [0, n_chunks) on up to IDNF_THREADS workers.
// Chunk outputs land in caller-indexed slots, so scheduling cannot change
// the result.
void parallel_chunks(int n_chunks, const std::function<void(int)>& fn) {
  const int workers = worker_count(n_chunks);
  if (workers <= 1) {
    for (int c = 0; c < n_chunks; ++c) fn(c);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int c = next.fetch_add(1); c < n_chunks; c = next.fetch_add(1)) fn(c);
    });
  }
  for (auto& t : pool) t.join();
}

idnf::RestoredRun load_run(const std::string& checkpoint_path) {
  return idnf::restore(idnf::Checkpoint::load(checkpoint_path));
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const GlobalArgs& g) {
  if (g.config_path.empty()) {
    std::cerr << "train: --config is required\n";
    return kUsageError;
  }
  idnf::RunConfig run = idnf::run_config_from_file(g.config_path);
  if (g.seed) run.train.seed = *g.seed;
  run.validate();

  const idnf::TrainConfig& cfg = run.train;
  const fs::path ckpt = artifact_path(g, cfg.checkpoint_path);

  fs::path eval_csv = ckpt;
  eval_csv.replace_extension(".eval.csv");
  std::ofstream log(eval_csv);
  if (!log) throw idnf::IoError("cannot open " + eval_csv.string());
  log << "iter,train_nll,test_nll,seconds\n";
  log.flush();

  idnf::TrainResult result = idnf::train(cfg, [&](const idnf::EvalRecord& rec) {
    char line[160];
    std::snprintf(line, sizeof line, "%lld,%.17g,%.17g,%.3f\n",
                  static_cast<long long>(rec.iteration), rec.train_nll, rec.test_nll,
                  rec.seconds);
    log << line;
    log.flush();
    std::cout << "iter " << rec.iteration << "  train_nll " << rec.train_nll << "  test_nll "
              << rec.test_nll << std::endl;
  }, ckpt.string());

  std::cout << "checkpoint: " << ckpt.string() << "\n";
  if (!result.evals.empty())
    std::cout << "final test_nll: " << fmt_double(result.evals.back().test_nll) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const GlobalArgs& g, const std::string& checkpoint, std::string data, int n) {
  idnf::RestoredRun run = load_run(checkpoint);
  if (data.empty()) data = run.config.dataset;
  if (n <= 0) n = run.config.test_points;
  const std::uint64_t seed = g.seed.value_or(run.config.seed);

  idnf::RandomSource rng = idnf::RandomSource(seed).fork(idnf::kStreamTest);
  idnf::ToyDataset test = idnf::generate(data, n, rng, run.config.toy);
  const double nll = idnf::nll_nats(run.model, test);

  std::ofstream out(artifact_path(g, "eval.csv"));
  out << "dataset,n,nll_nats\n" << data << ',' << n << ',' << fmt_double(nll) << '\n';
  std::cout << "dataset " << data << "  n " << n << "  test_nll " << fmt_double(nll) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

int cmd_sample(const GlobalArgs& g, const std::string& checkpoint, int n) {
  idnf::RestoredRun run = load_run(checkpoint);
  const std::uint64_t seed = g.seed.value_or(run.config.seed);
  idnf::RandomSource rng = idnf::RandomSource(seed).fork(0xA11CE);

  Matrix pts = idnf::sample(run.model, n, rng);
  std::ofstream out(artifact_path(g, "samples.csv"));
  out << "x1,x2\n";
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    out << fmt_double(pts(i, 0)) << ',' << fmt_double(pts(i, 1)) << '\n';
  std::cout << "wrote " << pts.rows() << " samples\n";
  return 0;
}

// ---------------------------------------------------------------------------
// density
// ---------------------------------------------------------------------------

int cmd_density(const GlobalArgs& g, const std::string& checkpoint, double x1_min, double x1_max,
                double x2_min, double x2_max, int res) {
  if (res < 2) throw idnf::ConfigError("density: resolution must be >= 2");
  if (!(x1_min < x1_max) || !(x2_min < x2_max))
    throw idnf::ConfigError("density: bounds must satisfy min < max");
  idnf::RestoredRun run = load_run(checkpoint);

  const double dx1 = (x1_max - x1_min) / (res - 1);
  const double dx2 = (x2_max - x2_min) / (res - 1);

  // one chunk per grid row; rows shard across workers deterministically
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(res));
  std::atomic<long> warnings{0};
  parallel_chunks(res, [&](int r) {
    const double x2 = x2_min + r * dx2;
    Matrix pts(2, res);
    for (int c = 0; c < res; ++c) {
      pts(0, c) = x1_min + c * dx1;
      pts(1, c) = x2;
    }
    std::vector<double> density(static_cast<std::size_t>(res), 0.0);
    idnf::FlowModel model = run.model;  // per-worker copy, read-only use
    try {
      Eigen::RowVectorXd ll = idnf::log_likelihood_batch(pts, model);
      for (int c = 0; c < res; ++c) density[static_cast<std::size_t>(c)] = std::exp(ll(c));
    } catch (const std::exception&) {
      // row-level failure: retry pointwise, zeroing the points that fail
      for (int c = 0; c < res; ++c) {
        try {
          density[static_cast<std::size_t>(c)] =
              std::exp(idnf::log_likelihood(idnf::Tensor(Matrix(pts.col(c))), model));
        } catch (const std::exception&) {
          warnings.fetch_add(1);
        }
      }
    }
    rows[static_cast<std::size_t>(r)] = std::move(density);
  });

  std::ofstream csv(artifact_path(g, "density.csv"));
  csv << "x1,x2,density\n";
  double max_density = 0.0;
  for (int r = 0; r < res; ++r) {
    const double x2 = x2_min + r * dx2;
    for (int c = 0; c < res; ++c) {
      csv << fmt_double(x1_min + c * dx1) << ',' << fmt_double(x2) << ','
          << fmt_double(rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]) << '\n';
      max_density = std::fmax(max_density, rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]);
    }
  }

  // 8-bit PGM heatmap, max-normalized; top image row is the largest x2
  std::ofstream pgm(artifact_path(g, "density.pgm"), std::ios::binary);
  pgm << "P5\n" << res << ' ' << res << "\n255\n";
  for (int r = res - 1; r >= 0; --r) {
    std::string row(static_cast<std::size_t>(res), '\0');
    for (int c = 0; c < res; ++c) {
      const double d = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      const int v = max_density > 0.0 ? static_cast<int>(std::lround(255.0 * d / max_density)) : 0;
      row[static_cast<std::size_t>(c)] = static_cast<char>(std::clamp(v, 0, 255));
    }
    pgm.write(row.data(), res);
  }

  if (warnings.load() > 0)
    std::cout << "warning: " << warnings.load() << " grid points failed; recorded density 0\n";
  std::cout << "wrote density.csv and density.pgm (" << res << "x" << res << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// invert-check
// ---------------------------------------------------------------------------

int cmd_invert_check(const GlobalArgs& g, const std::string& checkpoint, int n, double tol) {
  idnf::RestoredRun run = load_run(checkpoint);
  const std::uint64_t seed = g.seed.value_or(run.config.seed);
  idnf::RandomSource rng = idnf::RandomSource(seed).fork(0xF1DE);
  idnf::ToyDataset data = idnf::generate(run.config.dataset, n, rng, run.config.toy);

  std::ofstream report(artifact_path(g, "invert_check.csv"));
  report << "index,roundtrip_error,converged\n";

  double max_err = 0.0;
  int max_iters = 0;
  long failures = 0;
  constexpr int kChunk = 256;
  for (int i0 = 0; i0 < n; i0 += kChunk) {
    const int cols = std::min(kChunk, n - i0);
    Matrix x = data.points.middleRows(i0, cols).transpose();
    idnf::FlowGraph fg =
        build_flow_graph(run.model, x, idnf::WeightBinding::kFrozen, false, false);
    Matrix z = fg.g.value(fg.z);

    // invert block by block so per-block iteration counts are visible
    Matrix cur = z;
    bool chunk_converged = true;
    try {
      for (auto it = run.model.blocks.rbegin(); it != run.model.blocks.rend(); ++it) {
        int iters = 0;
        cur = idnf::block_inverse(cur, *it, run.model.coeff, run.model.concat_multiplier, 200,
                                  1e-8, &iters);
        max_iters = std::max(max_iters, iters);
      }
    } catch (const idnf::ConvergenceError& e) {
      chunk_converged = false;
      failures += cols;
      max_err = std::fmax(max_err, e.last_residual);
    }
    for (int j = 0; j < cols; ++j) {
      double err = std::numeric_limits<double>::quiet_NaN();
      if (chunk_converged) {
        err = (cur.col(j) - x.col(j)).norm();
        max_err = std::fmax(max_err, err);
      }
      report << (i0 + j) << ',' << fmt_double(err) << ',' << (chunk_converged ? 1 : 0) << '\n';
    }
  }

  std::cout << "points " << n << "  max_roundtrip_error " << fmt_double(max_err)
            << "  max_fixed_point_iterations " << max_iters << "  failures " << failures << "\n";
  const bool ok = failures == 0 && max_err <= tol;
  std::cout << (ok ? "PASS" : "FAIL") << " (tol " << fmt_double(tol) << ")\n";
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// eta-report
// ---------------------------------------------------------------------------

int cmd_eta_report(const GlobalArgs& g, const std::string& checkpoint) {
  idnf::RestoredRun run = load_run(checkpoint);
  idnf::EtaReport rep = idnf::eta_report(run.model);
  if (rep.fixed_mode)
    std::cout << "notice: fixed-mode checkpoint; concatenation weights are the constant "
                 "1/sqrt(2)\n";
  std::ofstream out(artifact_path(g, "eta_report.csv"));
  out << "block,layer,eta1_hat,eta2_hat,dominant\n";
  for (const auto& row : rep.rows)
    out << row.block << ',' << row.layer << ',' << fmt_double(row.eta1_hat) << ','
        << fmt_double(row.eta2_hat) << ',' << (row.transformed_dominant ? "transformed" : "input")
        << '\n';
  std::cout << "wrote eta_report.csv (" << rep.rows.size() << " rows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"invertible DenseNet normalizing flows on 2-D toy densities"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config", g.config_path, "key=value config file")->envname("IDNF_CONFIG");
  app.add_option("--out", g.out_dir, "output directory for artifacts");
  std::uint64_t seed_value = 0;
  CLI::Option* seed_opt = app.add_option("--seed", seed_value, "override the config seed");
  app.fallthrough();

  CLI::App* train = app.add_subcommand("train", "train a model from a config file");

  std::string checkpoint;
  std::string eval_data;
  int eval_n = 0;
  CLI::App* eval = app.add_subcommand("eval", "test NLL of a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "dataset override");
  eval->add_option("--n", eval_n, "number of test points");

  int sample_n = 10000;
  CLI::App* sample = app.add_subcommand("sample", "draw samples from a checkpoint");
  sample->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  sample->add_option("--n", sample_n, "number of samples");

  double b_x1min = -6.0, b_x1max = 6.0, b_x2min = -6.0, b_x2max = 6.0;
  int resolution = 300;
  CLI::App* density = app.add_subcommand("density", "density grid as CSV + PGM heatmap");
  density->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  density->add_option("--x1-min", b_x1min);
  density->add_option("--x1-max", b_x1max);
  density->add_option("--x2-min", b_x2min);
  density->add_option("--x2-max", b_x2max);
  density->add_option("--resolution", resolution, "grid resolution per axis");

  int invert_n = 1000;
  double invert_tol = 1e-5;
  CLI::App* invert = app.add_subcommand("invert-check", "round-trip inversion audit");
  invert->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  invert->add_option("--n", invert_n, "number of data points");
  invert->add_option("--tol", invert_tol, "max tolerated round-trip error");

  CLI::App* eta = app.add_subcommand("eta-report", "concatenation importance table");
  eta->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) g.seed = seed_value;

  try {
    if (train->parsed()) return cmd_train(g);
    if (eval->parsed()) return cmd_eval(g, checkpoint, eval_data, eval_n);
    if (sample->parsed()) return cmd_sample(g, checkpoint, sample_n);
    if (density->parsed())
      return cmd_density(g, checkpoint, b_x1min, b_x1max, b_x2min, b_x2max, resolution);
    if (invert->parsed()) return cmd_invert_check(g, checkpoint, invert_n, invert_tol);
    if (eta->parsed()) return cmd_eta_report(g, checkpoint);
  } catch (const idnf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsageError;
  } catch (const idnf::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kUsageError;
}
