#pragma once

#include <vector>

#include "fslds/autodiff.hpp"
#include "fslds/rng.hpp"
#include "fslds/tensor.hpp"

namespace fslds::dist {

// Binary Concrete: the two-class Concrete distribution reduced to its first
// coordinate. h = sigmoid((log_alpha + logit(u)) / phi) for u ~ Uniform(0,1).
struct BinConcreteParams {
  double log_alpha = 0.0;
  double phi = 1.0;  // temperature; must be > 0
};

// K-class Concrete over the interior of the probability simplex.
struct ConcreteParams {
  std::vector<double> alphas;  // all > 0
  double phi = 1.0;
};

double logit(double u);

double binconcrete_sample(const BinConcreteParams& p, double u);
double binconcrete_logpdf(const BinConcreteParams& p, double h);
double concrete_logpdf(const ConcreteParams& p, const std::vector<double>& x);

// Diagonal Gaussian, summed over dimensions for the span form.
double normal_logpdf(double x, double mean, double sigma);
double normal_logpdf(const std::vector<double>& x,
                     const std::vector<double>& mean, double sigma);
double normal_sample(double mean, double sigma, double eps);

// log pmf with the rate floored at 1e-8 (an additive rate with every gate
// off can underflow to zero; exact zero is not a modeling intent here).
double poisson_logpmf(long long y, double rate);
long long poisson_sample(Rng& rng, double rate);

// ---- tape-recorded counterparts (elementwise over conforming shapes) ----

// Reparametrized gate draw. `logit_u` holds logit(u) noise, one entry per
// gate. Returns h together with log(h) and log(1-h) computed from the
// pre-sigmoid logits, which stays finite and differentiable even when the
// sigmoid saturates at low temperature.
struct GateSample {
  ad::Var h;
  ad::Var log_h;
  ad::Var log_1mh;
};
GateSample binconcrete_sample(ad::Tape& t, ad::Var log_alpha,
                              const std::vector<double>& logit_u, double phi);

ad::Var binconcrete_logpdf(ad::Tape& t, ad::Var log_alpha, ad::Var h,
                           double phi);
ad::Var binconcrete_logpdf_from_logs(ad::Tape& t, ad::Var log_alpha,
                                     ad::Var log_h, ad::Var log_1mh,
                                     double phi);

ad::Var normal_logpdf(ad::Tape& t, ad::Var x, ad::Var mean, ad::Var log_sigma);
ad::Var normal_sample(ad::Tape& t, ad::Var mean, ad::Var log_sigma,
                      const std::vector<double>& eps);

ad::Var poisson_logpmf(ad::Tape& t, const std::vector<double>& y, ad::Var rate);

}  // namespace fslds::dist
