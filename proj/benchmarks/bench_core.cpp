#include <benchmark/benchmark.h>

#include "idnf/flow.hpp"
#include "idnf/math.hpp"
#include "idnf/rng.hpp"
#include "idnf/toydata.hpp"
#include "idnf/training.hpp"

using idnf::ConcatMode;
using idnf::Matrix;
using idnf::RandomSource;

namespace {

idnf::FlowModel toy_model(int blocks, ConcatMode mode, RandomSource& rng) {
  idnf::FlowModel m =
      idnf::FlowModel::create(2, blocks, 4, 90, mode, 0.98, 1.0, rng);
  // zero projections make a fresh model the identity; perturb them so the
  // benchmarks exercise a generic operating point
  for (auto& blk : m.blocks) {
    for (Eigen::Index i = 0; i < blk.proj_W.rows(); ++i)
      for (Eigen::Index j = 0; j < blk.proj_W.cols(); ++j)
        blk.proj_W(i, j) = 0.05 * rng.normal();
  }
  m.refresh_spectral_state();
  return m;
}

Matrix random_batch(int cols, RandomSource& rng) {
  Matrix x(2, cols);
  for (int j = 0; j < cols; ++j) {
    x(0, j) = rng.normal();
    x(1, j) = rng.normal();
  }
  return x;
}

}  // namespace

static void BM_BlockGForward(benchmark::State& state) {
  RandomSource rng(1);
  idnf::FlowModel m = toy_model(1, ConcatMode::kLearnable, rng);
  Matrix x = random_batch(static_cast<int>(state.range(0)), rng);
  for (auto _ : state) {
    Matrix g = idnf::g_forward(x, m.blocks[0], m.coeff);
    benchmark::DoNotOptimize(g.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BlockGForward)->Arg(1)->Arg(32)->Arg(128)->Arg(512);

static void BM_LogDetExact(benchmark::State& state) {
  RandomSource rng(2);
  idnf::FlowModel m = toy_model(1, ConcatMode::kLearnable, rng);
  idnf::Tensor x = idnf::Tensor::vector({0.4, -0.2});
  for (auto _ : state) {
    auto r = idnf::logdet_exact(x, m.blocks[0], m.coeff);
    benchmark::DoNotOptimize(r.value);
  }
}
BENCHMARK(BM_LogDetExact);

static void BM_LogDetSeriesHutchinson(benchmark::State& state) {
  RandomSource rng(3);
  idnf::FlowModel m = toy_model(1, ConcatMode::kLearnable, rng);
  idnf::Tensor x = idnf::Tensor::vector({0.4, -0.2});
  RandomSource probes(17);
  const int terms = static_cast<int>(state.range(0));
  for (auto _ : state) {
    auto r = idnf::logdet_series(x, m.blocks[0], terms, 16, probes, m.coeff);
    benchmark::DoNotOptimize(r.value);
  }
}
BENCHMARK(BM_LogDetSeriesHutchinson)->Arg(5)->Arg(10)->Arg(20);

static void BM_BlockInverse(benchmark::State& state) {
  RandomSource rng(4);
  idnf::FlowModel m = toy_model(1, ConcatMode::kLearnable, rng);
  Matrix x = random_batch(static_cast<int>(state.range(0)), rng);
  Matrix y = x + idnf::g_forward(x, m.blocks[0], m.coeff);
  for (auto _ : state) {
    Matrix back = idnf::block_inverse(y, m.blocks[0], m.coeff, 1.0, 200, 1e-8);
    benchmark::DoNotOptimize(back.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BlockInverse)->Arg(32)->Arg(512);

// Full training step at the toy architecture: batch draw, power iteration,
// graph build with exact log-det, backward, Adam.
static void BM_TrainingStep(benchmark::State& state) {
  RandomSource rng(5);
  idnf::FlowModel m = toy_model(10, ConcatMode::kLearnable, rng);
  std::vector<idnf::ParamView> views = idnf::parameter_views(m);
  idnf::OptimState opt = idnf::OptimState::zeros_like(views);
  const idnf::AdamHyper hyper{};
  RandomSource data_rng(6);
  const int batch = static_cast<int>(state.range(0));

  for (auto _ : state) {
    idnf::ToyDataset b = idnf::generate("two_moons", batch, data_rng);
    Matrix x = b.points.transpose();
    m.power_iteration_step();
    idnf::FlowGraph fg = build_flow_graph(m, x, idnf::WeightBinding::kTrainable, true, true);
    std::vector<idnf::NodeId> nodes;
    for (const auto& p : fg.params) nodes.push_back(p.node);
    std::vector<idnf::Tensor> grads = fg.g.gradient(fg.mean_nll, nodes);
    adam_step(views, grads, opt, hyper);
    benchmark::DoNotOptimize(opt.step);
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_TrainingStep)->Unit(benchmark::kMillisecond)->Arg(32)->Arg(128);

static void BM_LikelihoodBatch(benchmark::State& state) {
  RandomSource rng(7);
  idnf::FlowModel m = toy_model(10, ConcatMode::kLearnable, rng);
  Matrix x = random_batch(static_cast<int>(state.range(0)), rng);
  for (auto _ : state) {
    Eigen::RowVectorXd ll = idnf::log_likelihood_batch(x, m);
    benchmark::DoNotOptimize(ll.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LikelihoodBatch)->Unit(benchmark::kMillisecond)->Arg(128)->Arg(512);

BENCHMARK_MAIN();
