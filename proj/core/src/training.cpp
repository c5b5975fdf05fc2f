#include "idnf/training.hpp"

#include <chrono>
#include <cmath>

#include "idnf/errors.hpp"
#include "idnf/math.hpp"
#include "idnf/toydata.hpp"

namespace idnf {

namespace {

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void clip_gradients(std::vector<Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const Tensor& g : grads) sq += g.mat().squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double s = max_norm / norm;
  for (Tensor& g : grads) g = Tensor(g.mat() * s);
}

}  // namespace

TrainResult train(const TrainConfig& config, const EvalCallback& on_eval,
                  const std::string& checkpoint_file) {
  config.validate();
  const std::string sink = checkpoint_file.empty() ? config.checkpoint_path : checkpoint_file;

  TrainResult result;
  result.model = model_from_config(config);
  FlowModel& model = result.model;

  std::vector<ParamView> views = parameter_views(model);
  OptimState opt = OptimState::zeros_like(views);
  const AdamHyper hyper{config.learning_rate, config.adam_beta1, config.adam_beta2,
                        config.adam_eps};

  RandomSource root(config.seed);
  RandomSource data_rng = root.fork(kStreamData);
  RandomSource test_rng = root.fork(kStreamTest);
  const ToyDataset test_set = generate(config.dataset, config.test_points, test_rng, config.toy);

  const auto start = std::chrono::steady_clock::now();
  result.loss_history.reserve(static_cast<std::size_t>(config.iterations));

  auto run_eval = [&](std::int64_t iteration, double train_nll) {
    model.refresh_spectral_state();
    EvalRecord rec;
    rec.iteration = iteration;
    rec.train_nll = train_nll;
    rec.test_nll = nll_nats(model, test_set);
    rec.seconds = elapsed_seconds(start);
    result.evals.push_back(rec);
    if (!sink.empty()) {
      Checkpoint ckpt =
          make_checkpoint(model, config, opt, data_rng.serialize(), iteration);
      ckpt.save(sink);
    }
    if (on_eval) on_eval(rec);
  };

  for (std::int64_t it = 0; it < config.iterations; ++it) {
    ToyDataset batch = generate(config.dataset, config.batch_size, data_rng, config.toy);
    Matrix x = batch.points.transpose();

    model.power_iteration_step();
    FlowGraph fg = build_flow_graph(model, x, WeightBinding::kTrainable,
                                    /*with_logdet=*/true, /*with_nll=*/true);
    const double loss = fg.g.scalar(fg.mean_nll);
    if (!std::isfinite(loss))
      throw ContractViolation("train: non-finite loss at iteration " + std::to_string(it) +
                              "; last checkpoint preserved");
    result.loss_history.push_back(loss);

    std::vector<NodeId> param_nodes;
    param_nodes.reserve(fg.params.size());
    for (const BoundParam& p : fg.params) param_nodes.push_back(p.node);
    std::vector<Tensor> grads = fg.g.gradient(fg.mean_nll, param_nodes);
    if (config.grad_clip > 0.0) clip_gradients(grads, config.grad_clip);
    adam_step(views, grads, opt, hyper);

    if ((it + 1) % config.eval_every == 0 || it + 1 == config.iterations)
      run_eval(it + 1, loss);
  }

  if (config.iterations == 0) {
    // Report the initialized model (an identity flow) against a fresh batch.
    ToyDataset batch = generate(config.dataset, config.batch_size, data_rng, config.toy);
    const double nll = nll_nats(model, batch);
    run_eval(0, nll);
  }

  result.checkpoint =
      make_checkpoint(model, config, opt, data_rng.serialize(), config.iterations);
  if (!sink.empty()) result.checkpoint.save(sink);
  return result;
}

EtaReport eta_report(const FlowModel& model) {
  EtaReport report;
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    const DenseBlock& blk = model.blocks[b];
    report.fixed_mode = blk.mode == ConcatMode::kFixed;
    for (std::size_t l = 0; l < blk.layers.size(); ++l) {
      EtaRow row;
      row.block = static_cast<int>(b);
      row.layer = static_cast<int>(l);
      if (blk.mode == ConcatMode::kLearnable) {
        auto [e1, e2] = normalize_concat(blk.layers[l].eta1_raw, blk.layers[l].eta2_raw);
        row.eta1_hat = e1;
        row.eta2_hat = e2;
      } else {
        row.eta1_hat = row.eta2_hat = 0.5 * std::sqrt(2.0);
      }
      row.transformed_dominant = row.eta2_hat > row.eta1_hat;
      report.rows.push_back(row);
    }
  }
  return report;
}

double empirical_lipschitz(const DenseBlock& block, int n_pairs, RandomSource& rng, double coeff,
                           double concat_multiplier) {
  if (n_pairs < 1) throw DomainError("empirical_lipschitz: n_pairs must be >= 1");
  const int d = block.dim();
  constexpr int kChunk = 512;

  double max_ratio = 0.0;
  int done = 0;
  while (done < n_pairs) {
    const int m = std::min(kChunk, n_pairs - done);
    Matrix v(d, m), w(d, m);
    for (int j = 0; j < m; ++j) {
      const double scale = std::pow(10.0, rng.uniform(-3.0, 3.0));
      for (int i = 0; i < d; ++i) v(i, j) = scale * rng.normal();
      if (rng.rademacher() > 0) {
        const double scale_w = std::pow(10.0, rng.uniform(-3.0, 3.0));
        for (int i = 0; i < d; ++i) w(i, j) = scale_w * rng.normal();
      } else {
        // local pair: probes the Jacobian norm near v
        const double eps = std::pow(10.0, rng.uniform(-6.0, 0.0));
        for (int i = 0; i < d; ++i) w(i, j) = v(i, j) + eps * rng.normal();
      }
    }
    Matrix gv = g_forward(v, block, coeff, concat_multiplier);
    Matrix gw = g_forward(w, block, coeff, concat_multiplier);
    for (int j = 0; j < m; ++j) {
      const double dist = (v.col(j) - w.col(j)).norm();
      if (dist == 0.0) continue;
      max_ratio = std::fmax(max_ratio, (gv.col(j) - gw.col(j)).norm() / dist);
    }
    done += m;
  }
  return max_ratio;
}

}  // namespace idnf
