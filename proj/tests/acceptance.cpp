// Acceptance suite: one pass/fail line per criterion, exit code = number of
// failures. Criteria 1-5 and 7 evaluate the six trained models (three toys x
// {learnable, fixed}); checkpoints are searched in $IDNF_RUNS_DIR, then in
// <source>/runs, and are trained in-process at the pinned configuration if
// absent (roughly ten hours single-threaded).

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "idnf/checkpoint.hpp"
#include "idnf/math.hpp"
#include "idnf/toydata.hpp"
#include "idnf/training.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using idnf::ConcatMode;
using idnf::Matrix;
using idnf::RandomSource;
using idnf::Tensor;
using idnf::Vector;

namespace {

int g_failures = 0;

// criterion == 0 marks a supplementary check; the label then lives in `what`.
void report(int criterion, bool pass, const std::string& what, const std::string& detail) {
  std::cout << (pass ? "PASS " : "FAIL ");
  if (criterion > 0) std::cout << "criterion " << criterion << ": ";
  std::cout << what;
  if (!detail.empty()) std::cout << "  [" << detail << "]";
  std::cout << std::endl;
  if (!pass) ++g_failures;
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

// ---------------------------------------------------------------------------
// Trained-run registry
// ---------------------------------------------------------------------------

struct RunSpec {
  std::string name;     // directory name
  std::string dataset;
  ConcatMode mode;
};

const std::vector<RunSpec> kRuns = {
    {"two_moons_learnable", "two_moons", ConcatMode::kLearnable},
    {"two_moons_fixed", "two_moons", ConcatMode::kFixed},
    {"two_circles_learnable", "two_circles", ConcatMode::kLearnable},
    {"two_circles_fixed", "two_circles", ConcatMode::kFixed},
    {"checkerboard_learnable", "checkerboard", ConcatMode::kLearnable},
    {"checkerboard_fixed", "checkerboard", ConcatMode::kFixed},
};

idnf::TrainConfig pinned_config(const RunSpec& spec) {
  idnf::TrainConfig cfg;
  cfg.dataset = spec.dataset;
  cfg.iterations = 50000;
  cfg.batch_size = 128;
  cfg.learning_rate = 5e-4;
  cfg.coeff = 0.98;
  cfg.depth = 4;
  cfg.growth = 90;
  cfg.blocks = 10;
  cfg.mode = spec.mode;
  cfg.seed = 42;  // matched across modes per dataset
  cfg.eval_every = 2500;
  cfg.test_points = 10000;
  cfg.checkpoint_path = "model.ckpt";
  return cfg;
}

// Architecture fields that define the acceptance runs; a checkpoint that
// disagrees is not acceptable evidence.
bool config_matches(const idnf::TrainConfig& a, const idnf::TrainConfig& b, std::string* why) {
  auto mismatch = [&](const std::string& field) {
    *why = "checkpoint config mismatch on " + field;
    return false;
  };
  if (a.dataset != b.dataset) return mismatch("dataset");
  if (a.iterations != b.iterations) return mismatch("iterations");
  if (a.depth != b.depth) return mismatch("depth");
  if (a.growth != b.growth) return mismatch("growth");
  if (a.blocks != b.blocks) return mismatch("blocks");
  if (a.mode != b.mode) return mismatch("mode");
  if (a.coeff != b.coeff) return mismatch("coeff");
  if (a.seed != b.seed) return mismatch("seed");
  return true;
}

struct TrainedRun {
  RunSpec spec;
  idnf::RestoredRun run;
  double test_nll = 0.0;
};

fs::path runs_dir() {
  if (const char* env = std::getenv("IDNF_RUNS_DIR")) return env;
#ifdef IDNF_DEFAULT_RUNS_DIR
  return IDNF_DEFAULT_RUNS_DIR;
#else
  return "runs";
#endif
}

std::map<std::string, TrainedRun> load_or_train_runs() {
  std::map<std::string, TrainedRun> out;
  const fs::path base = runs_dir();
  for (const RunSpec& spec : kRuns) {
    const fs::path ckpt_path = base / spec.name / "model.ckpt";
    idnf::TrainConfig want = pinned_config(spec);
    std::optional<idnf::RestoredRun> restored;
    if (fs::exists(ckpt_path)) {
      idnf::RestoredRun candidate = idnf::restore(idnf::Checkpoint::load(ckpt_path.string()));
      std::string why;
      if (config_matches(candidate.config, want, &why) && candidate.iteration == 50000) {
        restored = std::move(candidate);
      } else {
        std::cout << "note: ignoring " << ckpt_path.string() << " (" << why << ")\n";
      }
    }
    if (!restored) {
      std::cout << "note: training " << spec.name << " in-process (50k iterations)\n";
      idnf::TrainResult result = idnf::train(want, {}, "");
      idnf::RestoredRun fresh;
      fresh.config = want;
      fresh.model = std::move(result.model);
      fresh.iteration = 50000;
      restored = std::move(fresh);
    }

    TrainedRun tr{spec, std::move(*restored), 0.0};
    RandomSource test_rng = RandomSource(tr.run.config.seed).fork(idnf::kStreamTest);
    idnf::ToyDataset test =
        idnf::generate(tr.spec.dataset, tr.run.config.test_points, test_rng, tr.run.config.toy);
    tr.test_nll = idnf::nll_nats(tr.run.model, test);
    out.emplace(spec.name, std::move(tr));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

void criterion_nll(std::map<std::string, TrainedRun>& runs) {
  struct Bound {
    const char* run;
    double limit;   // binding acceptance bound
    double target;  // reported reference value
  };
  const Bound bounds[] = {
      {"two_moons_learnable", 2.60, 2.39},
      {"two_circles_learnable", 3.44, 3.30},
      {"checkerboard_learnable", 3.81, 3.66},
  };
  for (int i = 0; i < 3; ++i) {
    const TrainedRun& tr = runs.at(bounds[i].run);
    const bool pass = tr.test_nll <= bounds[i].limit;
    const bool in_window = std::fabs(tr.test_nll - bounds[i].target) <= 0.15;
    report(i == 0 ? 1 : 2, pass,
           std::string(bounds[i].run) + " test NLL <= " + fmt(bounds[i].limit) + " nats",
           "nll " + fmt(tr.test_nll) + ", target " + fmt(bounds[i].target) + " +- 0.15 " +
               (in_window ? "(within window)" : "(outside window)"));
  }
}

void criterion_learnable_vs_fixed(std::map<std::string, TrainedRun>& runs) {
  for (const char* ds : {"two_moons", "two_circles", "checkerboard"}) {
    const double lc = runs.at(std::string(ds) + "_learnable").test_nll;
    const double fx = runs.at(std::string(ds) + "_fixed").test_nll;
    report(3, lc <= fx + 0.03,
           std::string(ds) + ": learnable NLL <= fixed + 0.03",
           "learnable " + fmt(lc) + ", fixed " + fmt(fx));
  }
}

void criterion_invertibility(std::map<std::string, TrainedRun>& runs) {
  for (auto& [name, tr] : runs) {
    RandomSource rng = RandomSource(tr.run.config.seed).fork(0xACC);
    idnf::ToyDataset data = idnf::generate(tr.spec.dataset, 1000, rng, tr.run.config.toy);
    Matrix x = data.points.transpose();
    idnf::FlowGraph fg =
        build_flow_graph(tr.run.model, x, idnf::WeightBinding::kFrozen, false, false);
    Matrix z = fg.g.value(fg.z);
    bool converged = true;
    double max_err = std::numeric_limits<double>::infinity();
    try {
      Tensor back = idnf::flow_inverse(Tensor(z), tr.run.model, 200, 1e-8);
      max_err = (back.mat() - x).colwise().norm().maxCoeff();
    } catch (const idnf::ConvergenceError&) {
      converged = false;
    }
    report(4, converged && max_err < 1e-5,
           name + ": max round-trip error over 1000 points < 1e-5",
           converged ? "max " + fmt(max_err) : "fixed-point iteration did not converge");
  }
}

void criterion_lipschitz(std::map<std::string, TrainedRun>& runs) {
  for (auto& [name, tr] : runs) {
    double worst_block = 0.0;
    RandomSource rng(977);
    for (const auto& blk : tr.run.model.blocks)
      worst_block = std::fmax(
          worst_block, idnf::empirical_lipschitz(blk, 10000, rng, tr.run.model.coeff,
                                                 tr.run.model.concat_multiplier));
    const double worst_weight = helpers::max_normalized_spectral_norm(tr.run.model);
    const double limit = tr.run.model.coeff + 1e-4;
    report(5, worst_block < 1.0 && worst_weight <= limit,
           name + ": empirical Lip(g) < 1 and normalized spectral norms <= coeff + 1e-4",
           "max block ratio " + fmt(worst_block) + ", max weight norm " + fmt(worst_weight));
  }
}

void criterion_concat_bound() {
  const bool exact = idnf::lipschitz_bound_concat(1.0, 1.0, 2.0) == std::sqrt(2.0);
  report(6, exact, "lipschitz_bound_concat(1,1,2) == sqrt(2) exactly",
         fmt(idnf::lipschitz_bound_concat(1.0, 1.0, 2.0)));

  RandomSource rng(4242);
  double worst = 0.0;
  for (int i = 0; i < 100000; ++i) {
    auto [e1, e2] = idnf::normalize_concat(rng.uniform(-20.0, 10.0), rng.uniform(-20.0, 10.0));
    worst = std::fmax(worst, std::fabs(e1 * e1 + e2 * e2 - 1.0));
  }
  report(6, worst < 1e-12, "unit-circle normalization over 1e5 random raws",
         "max |e1^2+e2^2-1| = " + fmt(worst));

  const double raw = idnf::softplus_inverse(1.0);
  auto [e1, e2] = idnf::normalize_concat(raw, raw);
  const double half_rt2 = 0.5 * std::sqrt(2.0);
  report(6, e1 == e2 && std::fabs(e1 - half_rt2) < 1e-12,
         "equal init lands on (sqrt(2)/2, sqrt(2)/2)", fmt(e1) + ", " + fmt(e2));
}

void criterion_logdet(std::map<std::string, TrainedRun>& runs) {
  RandomSource rng(31337);

  // exact path vs finite-difference Jacobian determinant
  double worst_exact = 0.0;
  for (int it = 0; it < 100; ++it) {
    const ConcatMode mode = it % 2 ? ConcatMode::kFixed : ConcatMode::kLearnable;
    idnf::DenseBlock blk = helpers::random_block(2, 2, 7, mode, rng);
    Vector x = helpers::random_matrix(2, 1, rng, 2.0);
    auto g = [&](const Vector& p) -> Vector {
      return idnf::g_forward(Matrix(p), blk, 0.98).col(0);
    };
    Matrix jac = oracle::fd_jacobian(g, x, 1e-5);
    const double expected = std::log((Matrix::Identity(2, 2) + jac).determinant());
    const double got = idnf::logdet_exact(Tensor(Matrix(x)), blk, 0.98).value;
    worst_exact = std::fmax(worst_exact, oracle::rel_err(got, expected));
  }
  report(7, worst_exact < 1e-5, "logdet_exact vs FD Jacobian over 100 random blocks",
         "max rel err " + fmt(worst_exact));

  // truncated series, exact traces, against the closed form; |A|_2 stays
  // under coeff/sqrt(2) so the block embedding reproduces A exactly
  double worst_series = 0.0;
  for (int it = 0; it < 100; ++it) {
    Matrix A = helpers::random_matrix(2, 2, rng);
    A *= rng.uniform(0.1, 0.65) / oracle::spectral_norm(A);
    idnf::DenseBlock blk = helpers::linear_block(A);
    auto r = idnf::logdet_series(Tensor::vector({0.2, 0.4}), blk, 80, 0, rng, 0.98, 1.0,
                                 idnf::TraceMode::kExactBasis);
    const double expected = std::log((Matrix::Identity(2, 2) + A).determinant());
    worst_series = std::fmax(worst_series, std::fabs(r.value - expected));
  }
  report(7, worst_series < 1e-6,
         "series logdet (exact traces, 80 terms) vs closed form on 100 linear maps",
         "max abs err " + fmt(worst_series));

  // Hutchinson probes on a trained block: unbiasedness over 100 seeds
  const idnf::DenseBlock& blk = runs.at("two_moons_learnable").run.model.blocks[0];
  const double coeff = runs.at("two_moons_learnable").run.model.coeff;
  Tensor x = Tensor::vector({0.5, -0.25});
  const double exact = idnf::logdet_exact(x, blk, coeff).value;
  const int n_seeds = 100;
  double mean = 0.0, m2 = 0.0;
  for (int s = 0; s < n_seeds; ++s) {
    RandomSource probe_rng(90000 + static_cast<std::uint64_t>(s));
    auto r = idnf::logdet_series(x, blk, 150, 64, probe_rng, coeff);
    const double delta = r.value - mean;
    mean += delta / (s + 1);
    m2 += delta * (r.value - mean);
  }
  const double se = std::sqrt(m2 / (n_seeds - 1.0) / n_seeds);
  report(7, std::fabs(mean - exact) <= 3.0 * se,
         "Hutchinson series mean within 3 SE of exact over 100 seeds",
         "mean " + fmt(mean) + ", exact " + fmt(exact) + ", se " + fmt(se));
}

void criterion_gradients() {
  const auto start = std::chrono::steady_clock::now();

  RandomSource rng(555);
  idnf::FlowModel model =
      helpers::random_model(2, 2, 2, 8, ConcatMode::kLearnable, 0.98, rng);
  RandomSource data_rng(556);
  idnf::ToyDataset batch = idnf::generate("two_moons", 16, data_rng);
  Matrix x = batch.points.transpose();

  idnf::FlowGraph fg =
      build_flow_graph(model, x, idnf::WeightBinding::kTrainable, true, true);
  std::vector<idnf::NodeId> nodes;
  for (const auto& p : fg.params) nodes.push_back(p.node);
  std::vector<Tensor> grads = fg.g.gradient(fg.mean_nll, nodes);

  auto nll_value = [&]() {
    idnf::FlowGraph f = build_flow_graph(model, x, idnf::WeightBinding::kTrainable, true, true);
    return f.g.scalar(f.mean_nll);
  };

  auto param_class = [](const std::string& name) -> std::string {
    if (name.find(".proj.") != std::string::npos) return "proj";
    if (name.find(".eta") != std::string::npos) return "eta";
    if (name.find(".beta") != std::string::npos) return "beta";
    return "W";
  };

  std::map<std::string, double> worst;
  std::vector<idnf::ParamView> views = idnf::parameter_views(model);
  const double step = 1e-4;
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
        double& w = worst[param_class(views[p].name)];
        w = std::fmax(w, oracle::rel_err(grads[p](i, j), fd));
      }
    }
  }

  const double seconds = std::chrono::duration<double>(
      std::chrono::steady_clock::now() - start).count();
  bool pass = seconds < 60.0;
  std::string detail = "runtime " + fmt(seconds) + "s";
  for (const auto& [cls, err] : worst) {
    pass = pass && err < 1e-3;
    detail += ", " + cls + " " + fmt(err);
  }
  report(8, pass,
         "full-model NLL gradients vs central differences (depth 2, growth 8, 2 blocks)",
         detail);
}

// Supplementary trained-model invariants (reported as "extra", counted in
// the exit code): sampling stays inside the inflated data bounding box, and
// the density grid integrates to one.
void extra_trained_model_checks(std::map<std::string, TrainedRun>& runs) {
  for (const char* name :
       {"two_moons_learnable", "two_circles_learnable", "checkerboard_learnable"}) {
    TrainedRun& tr = runs.at(name);
    RandomSource data_rng = RandomSource(tr.run.config.seed).fork(idnf::kStreamTest);
    idnf::ToyDataset data = idnf::generate(tr.spec.dataset, 10000, data_rng, tr.run.config.toy);
    Eigen::RowVector2d lo = data.points.colwise().minCoeff();
    Eigen::RowVector2d hi = data.points.colwise().maxCoeff();
    Eigen::RowVector2d center = 0.5 * (lo + hi);
    Eigen::RowVector2d half = 0.75 * (hi - lo);  // 1.5x inflation

    RandomSource sample_rng(20260810);
    Matrix pts = idnf::sample(tr.run.model, 2000, sample_rng);
    int inside = 0;
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      const bool in1 = std::fabs(pts(i, 0) - center(0)) <= half(0);
      const bool in2 = std::fabs(pts(i, 1) - center(1)) <= half(1);
      inside += (in1 && in2) ? 1 : 0;
    }
    const double frac = inside / 2000.0;
    report(0, frac >= 0.95,
           std::string("extra: ") + name + " samples inside the 1.5x data bounding box",
           fmt(100.0 * frac) + "%");
  }

  // Riemann sum of the modeled density over [-6,6]^2 at resolution 300
  TrainedRun& tr = runs.at("two_moons_learnable");
  const int res = 300;
  const double lo = -6.0, hi = 6.0;
  const double step = (hi - lo) / (res - 1);
  double sum = 0.0;
  for (int r = 0; r < res; ++r) {
    Matrix row(2, res);
    for (int c = 0; c < res; ++c) {
      row(0, c) = lo + c * step;
      row(1, c) = lo + r * step;
    }
    Eigen::RowVectorXd ll = idnf::log_likelihood_batch(row, tr.run.model);
    for (int c = 0; c < res; ++c) sum += std::exp(ll(c));
  }
  const double integral = sum * step * step;
  report(0, std::fabs(integral - 1.0) < 0.02,
         "extra: two_moons_learnable density integrates to 1 +- 0.02 over [-6,6]^2",
         "integral " + fmt(integral));
}

void criterion_determinism() {
  idnf::TrainConfig cfg;
  cfg.dataset = "two_moons";
  cfg.iterations = 50;
  cfg.batch_size = 32;
  cfg.blocks = 2;
  cfg.depth = 2;
  cfg.growth = 8;
  cfg.eval_every = 25;
  cfg.test_points = 200;
  cfg.seed = 7;
  cfg.checkpoint_path = "model.ckpt";

  const fs::path dir = fs::temp_directory_path() / "idnf_acceptance_det";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string a = (dir / "a.ckpt").string();
  const std::string b = (dir / "b.ckpt").string();
  idnf::train(cfg, {}, a);
  idnf::train(cfg, {}, b);

  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  const std::string ba = slurp(a), bb = slurp(b);
  report(9, !ba.empty() && ba == bb,
         "repeated train with identical config+seed is bit-identical",
         std::to_string(ba.size()) + " bytes compared");
  fs::remove_all(dir);
}

}  // namespace

int main() {
  std::cout << "acceptance: artifacts dir = " << runs_dir().string() << "\n";
  try {
    std::map<std::string, TrainedRun> runs = load_or_train_runs();
    criterion_nll(runs);
    criterion_learnable_vs_fixed(runs);
    criterion_invertibility(runs);
    criterion_lipschitz(runs);
    criterion_concat_bound();
    criterion_logdet(runs);
    criterion_gradients();
    criterion_determinism();
    extra_trained_model_checks(runs);
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 99;
  }
  std::cout << (g_failures == 0 ? "acceptance: ALL CRITERIA PASS"
                                : "acceptance: " + std::to_string(g_failures) + " FAILURES")
            << std::endl;
  return g_failures;
}
