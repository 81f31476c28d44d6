#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fslds/autodiff.hpp"
#include "fslds/nnet.hpp"
#include "fslds/tensor.hpp"

namespace fslds::model {

// Additive-Poisson switching model. Channel rates are
//   rate_m = theta_{0,m} exp(z^(0)) + sum_k theta_{k,m} h^(k) exp(z^(k)),
// with gates h^(k) in (0,1) and per-factor log-amplitudes z^(k). Row 0 of
// theta is the always-on background (its gate is pinned to 1 and never
// stored). theta is kept as softplus(rho) of an unconstrained rho so
// optimizers never step it negative.
struct ModelParams {
  ad::Tensor rho;  // (K+1) x M
  nn::NetParams nets;

  int K() const { return nets.dims.K; }
  int M() const { return nets.dims.M; }
  ad::Tensor theta() const;

  static ModelParams init(std::uint64_t seed, const nn::NetDims& dims);
};

double softplus(double x);
double inv_softplus(double y);  // softplus(inv_softplus(y)) == y, y > 0

// Latent paths. h is T x K strictly inside (0,1); z is T x (K+1).
struct LatentTrajectory {
  ad::Tensor h;
  ad::Tensor z;

  int T() const { return h.rows(); }
};

struct SpikeCountMatrix {
  ad::Tensor counts;  // T x M, non-negative integers stored as doubles
  double bin_width_seconds = 1.0;
  std::vector<std::string> channel_labels;  // size M

  int T() const { return counts.rows(); }
  int M() const { return counts.cols(); }
  // Throws if counts are negative/non-integer or labels mismatch M.
  void validate() const;
  static std::vector<std::string> default_labels(int m);
};

// rate_m as above, clamped below at 1e-8. h_t has K entries (may be empty
// when K == 0), z_t has K+1.
ad::Tensor rate(const ad::Tensor& theta, const ad::Tensor& h_t,
                const ad::Tensor& z_t);

// Tape version; pass a default Var for h_t when K == 0.
ad::Var rate_graph(ad::Tape& t, ad::Var theta, ad::Var h_t, ad::Var z_t);

// log p(h, z, y | params) under the generative model at temperature phi:
// Poisson emissions + BinConcrete gate transitions at f_p locations +
// AR(1) Gaussian state transitions. Initial-state convention: h_0 = 0,
// z_0 = 0, y_0 = 0 as f_p inputs at t = 1.
double log_joint(const ModelParams& p, const LatentTrajectory& traj,
                 const SpikeCountMatrix& y, double phi);

// Ancestral draw of T steps. Per step the RNG consumes K uniforms (gates),
// K+1 normals (states), then M Poisson draws, so streams are reproducible.
// Stored gates are clipped to [1e-6, 1-1e-6].
std::pair<LatentTrajectory, SpikeCountMatrix> simulate(const ModelParams& p,
                                                       int T, double phi,
                                                       std::uint64_t seed);

}  // namespace fslds::model
