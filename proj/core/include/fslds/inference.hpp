#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "fslds/autodiff.hpp"
#include "fslds/model.hpp"
#include "fslds/nnet.hpp"
#include "fslds/rng.hpp"

namespace fslds::infer {

struct FitConfig {
  int K = 1;
  double lambda_l1 = 0.2;
  double phi_start = 1.0;
  double phi_end = 0.1;
  double phi_rate = 0.00003;
  int epochs = 3000;
  double lr_main = 0.01;
  double lr_theta_initial = 0.1;
  int lr_theta_switch_epoch = 200;
  int n_restarts = 75;
  std::uint64_t seed = 0;
  int hidden = 64;
  double grad_clip = 100.0;

  void validate() const;
};

struct ElboEstimate {
  double total = 0.0;
  double recon = 0.0;
  double kl_h = 0.0;
  double kl_z = 0.0;
  double l1_penalty = 0.0;
};

struct FitResult {
  model::ModelParams params;
  model::LatentTrajectory posterior;  // noise-free posterior means
  std::vector<ElboEstimate> elbo_trace;
  std::uint64_t seed = 0;
  FitConfig config;
  bool failed = false;
  std::string failure;

  double final_elbo() const;  // last trace total; -inf if failed or empty
};

// One uniform (stored as logit) per gate and one standard normal per state
// channel per step, drawn in row-major (t, k) order.
struct NoiseDraws {
  ad::Tensor logit_u;  // T x K
  ad::Tensor eps;      // T x (K+1)

  static NoiseDraws draw(Rng& rng, int T, int K);
};

struct ElboVars {
  ad::Var total, recon, kl_h, kl_z, l1;
};

// Records the single-sample reparametrized ELBO on the tape:
//   total = recon - kl_h - kl_z - l1,
// recon   = sum_t sum_m log Poisson(y | rate),
// kl_h    = sum_t sum_k [log q(h) - log p(h)] at the sampled gates,
// kl_z    = sum_t sum_k [log q(z) - log p(z)] at the sampled states,
// l1      = lambda * sum_t sum_k h (omitted bit-exactly when lambda == 0).
// Throws std::runtime_error naming (t, term) on a non-finite intermediate.
ElboVars elbo_graph(ad::Tape& t, ad::Var rho, const nn::NetVars& nets,
                    const model::SpikeCountMatrix& y, double phi,
                    double lambda_l1, const NoiseDraws& noise);

// Non-differentiating convenience wrapper around elbo_graph.
ElboEstimate elbo_step(const model::ModelParams& p,
                       const model::SpikeCountMatrix& y, double phi,
                       double lambda_l1, const NoiseDraws& noise);

// phi = max(phi_end, phi_start * exp(-phi_rate * step)), one step per update.
double anneal_phi(long long step, const FitConfig& cfg);

// Deterministic noise-free pass: gates are the posterior location proxies
// sigmoid(loc/phi), states are the f_z means; each feeds the next step.
model::LatentTrajectory posterior_means(const model::ModelParams& p,
                                        const model::SpikeCountMatrix& y,
                                        double phi);

// Full-sequence Adam for cfg.epochs updates. theta (rho) trains at
// lr_theta_initial until lr_theta_switch_epoch, then at lr_main; everything
// else at lr_main throughout. A non-finite loss marks the result failed
// instead of throwing. `progress`, when given, receives one CSV row per
// epoch: epoch,phi,total,recon,kl_h,kl_z,l1.
FitResult fit_once(const model::SpikeCountMatrix& y, const FitConfig& cfg,
                   std::uint64_t seed, std::ostream* progress = nullptr);

// Restarts with seeds cfg.seed .. cfg.seed + n_restarts - 1, run on `jobs`
// threads; failed restarts are dropped. Returns the highest final ELBO,
// ties broken by the lowest seed. Throws if every restart failed.
// `restart_elbos`, when given, receives (seed, final elbo) for all restarts
// in seed order (failed ones as -inf).
FitResult fit_multi(const model::SpikeCountMatrix& y, const FitConfig& cfg,
                    int jobs = 1,
                    std::vector<std::pair<std::uint64_t, double>>*
                        restart_elbos = nullptr);

}  // namespace fslds::infer
