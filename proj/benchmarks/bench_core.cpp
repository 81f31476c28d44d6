#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "fslds/autodiff.hpp"
#include "fslds/distributions.hpp"
#include "fslds/inference.hpp"
#include "fslds/model.hpp"
#include "fslds/nnet.hpp"
#include "fslds/rng.hpp"

using fslds::Rng;
using fslds::ad::Tape;
using fslds::ad::Tensor;
using fslds::ad::Var;
namespace infer = fslds::infer;
namespace md = fslds::model;
namespace nn = fslds::nn;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int> shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
  return t;
}

md::SpikeCountMatrix random_counts(int T, int M, std::uint64_t seed) {
  Rng rng(seed);
  md::SpikeCountMatrix y;
  y.channel_labels = md::SpikeCountMatrix::default_labels(M);
  y.counts = Tensor::zeros({T, M});
  for (double& v : y.counts.data)
    v = static_cast<double>(fslds::dist::poisson_sample(rng, 3.0));
  return y;
}

// Dense matvec chain with elementwise nonlinearities, forward + backward.
void BM_tape_matvec_chain(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(1);
  Tensor W0 = random_tensor(rng, {n, n});
  Tensor x0 = random_tensor(rng, {n});
  for (auto _ : state) {
    Tape t;
    Var W = t.leaf(W0);
    Var x = t.leaf(x0);
    Var h = x;
    for (int layer = 0; layer < 4; ++layer)
      h = t.tanh(t.matmul(W, h));
    Var loss = t.sum(h);
    t.backward(loss);
    benchmark::DoNotOptimize(t.grad(W).data.data());
  }
  state.SetItemsProcessed(state.iterations() * 4 * n * n);
}

void BM_gru_step(benchmark::State& state) {
  const int hidden = static_cast<int>(state.range(0));
  const int input = 24;
  nn::GruCellParams cell = nn::GruCellParams::zeros(input, hidden);
  Rng rng(2);
  for (Tensor* w : {&cell.W_z, &cell.W_r, &cell.W_h, &cell.U_z, &cell.U_r,
                    &cell.U_h, &cell.b_z, &cell.b_r, &cell.b_h})
    for (double& v : w->data) v = rng.uniform(-0.2, 0.2);
  Tensor x0 = random_tensor(rng, {input});
  Tensor s0 = random_tensor(rng, {hidden});
  for (auto _ : state) {
    Tape t;
    nn::GruCellVars g = nn::bind(t, cell);
    Var out = nn::gru_step(t, g, t.leaf(x0), t.leaf(s0));
    t.backward(t.sum(out));
    benchmark::DoNotOptimize(t.grad(g.U_h).data.data());
  }
}

// One full objective evaluation plus gradient at desk-scale dimensions.
void BM_elbo_backward(benchmark::State& state) {
  const int T = static_cast<int>(state.range(0));
  const int K = 4, M = 16, hidden = 32;
  md::ModelParams p = md::ModelParams::init(9, {K, M, hidden});
  md::SpikeCountMatrix y = random_counts(T, M, 10);
  Rng rng(11);
  infer::NoiseDraws noise = infer::NoiseDraws::draw(rng, T, K);
  for (auto _ : state) {
    Tape t;
    Var rho = t.leaf(p.rho);
    nn::NetVars nets = nn::bind(t, p.nets);
    infer::ElboVars ev =
        infer::elbo_graph(t, rho, nets, y, 0.5, 0.2, noise);
    t.backward(t.neg(ev.total));
    benchmark::DoNotOptimize(t.grad(rho).data.data());
  }
  state.SetItemsProcessed(state.iterations() * T);
}

void BM_fit_epoch(benchmark::State& state) {
  const int T = static_cast<int>(state.range(0));
  md::SpikeCountMatrix y = random_counts(T, 16, 12);
  infer::FitConfig cfg;
  cfg.K = 4;
  cfg.hidden = 32;
  cfg.epochs = 1;
  cfg.n_restarts = 1;
  for (auto _ : state) {
    infer::FitResult r = infer::fit_once(y, cfg, 1);
    benchmark::DoNotOptimize(r.final_elbo());
  }
  state.SetItemsProcessed(state.iterations() * T);
}

}  // namespace

BENCHMARK(BM_tape_matvec_chain)->Arg(32)->Arg(128);
BENCHMARK(BM_gru_step)->Arg(32)->Arg(64);
BENCHMARK(BM_elbo_backward)->Arg(100)->Arg(500);
BENCHMARK(BM_fit_epoch)->Arg(200);

BENCHMARK_MAIN();
