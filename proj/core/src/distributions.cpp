#include "fslds/distributions.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace fslds::dist {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// log(exp(a) + exp(b)) without overflow for either ordering.
double logsumexp2(double a, double b) { return b + stable_softplus(a - b); }

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

double logit(double u) {
  require(u > 0.0 && u < 1.0, "logit: u must lie strictly in (0,1)");
  return std::log(u) - std::log1p(-u);
}

double binconcrete_sample(const BinConcreteParams& p, double u) {
  require(p.phi > 0.0, "binconcrete_sample: phi must be > 0");
  return stable_sigmoid((p.log_alpha + logit(u)) / p.phi);
}

double binconcrete_logpdf(const BinConcreteParams& p, double h) {
  require(p.phi > 0.0, "binconcrete_logpdf: phi must be > 0");
  require(h > 0.0 && h < 1.0, "binconcrete_logpdf: h must lie strictly in (0,1)");
  double log_h = std::log(h);
  double log_1mh = std::log1p(-h);
  double a = p.log_alpha - p.phi * log_h;   // log(alpha * h^-phi)
  double b = -p.phi * log_1mh;              // log((1-h)^-phi)
  return std::log(p.phi) + p.log_alpha + (-p.phi - 1.0) * (log_h + log_1mh) -
         2.0 * logsumexp2(a, b);
}

double concrete_logpdf(const ConcreteParams& p, const std::vector<double>& x) {
  const int K = static_cast<int>(p.alphas.size());
  require(K >= 2, "concrete_logpdf: need at least two classes");
  require(p.phi > 0.0, "concrete_logpdf: phi must be > 0");
  require(static_cast<int>(x.size()) == K,
          "concrete_logpdf: x and alphas must have equal length");
  double sum = 0.0;
  for (int k = 0; k < K; ++k) {
    require(p.alphas[k] > 0.0, "concrete_logpdf: alphas must be > 0");
    require(x[k] > 0.0, "concrete_logpdf: x must lie strictly inside the simplex");
    sum += x[k];
  }
  require(std::abs(sum - 1.0) <= 1e-9, "concrete_logpdf: x must sum to 1");

  // log (K-1)! + (K-1) log phi + sum_k [log a_k - (phi+1) log x_k]
  //   - K * logsumexp_k (log a_k - phi log x_k)
  double out = std::lgamma(static_cast<double>(K)) +
               (K - 1) * std::log(p.phi);
  double m = -std::numeric_limits<double>::infinity();
  std::vector<double> e(K);
  for (int k = 0; k < K; ++k) {
    double la = std::log(p.alphas[k]);
    double lx = std::log(x[k]);
    out += la - (p.phi + 1.0) * lx;
    e[k] = la - p.phi * lx;
    m = std::max(m, e[k]);
  }
  double acc = 0.0;
  for (int k = 0; k < K; ++k) acc += std::exp(e[k] - m);
  out -= K * (m + std::log(acc));
  return out;
}

double normal_logpdf(double x, double mean, double sigma) {
  require(sigma > 0.0, "normal_logpdf: sigma must be > 0");
  static const double kLog2Pi = std::log(2.0 * M_PI);
  double z = (x - mean) / sigma;
  return -0.5 * kLog2Pi - std::log(sigma) - 0.5 * z * z;
}

double normal_logpdf(const std::vector<double>& x,
                     const std::vector<double>& mean, double sigma) {
  require(x.size() == mean.size(), "normal_logpdf: x and mean sizes differ");
  double out = 0.0;
  for (size_t i = 0; i < x.size(); ++i) out += normal_logpdf(x[i], mean[i], sigma);
  return out;
}

double normal_sample(double mean, double sigma, double eps) {
  require(sigma > 0.0, "normal_sample: sigma must be > 0");
  return mean + sigma * eps;
}

double poisson_logpmf(long long y, double rate) {
  require(y >= 0, "poisson_logpmf: y must be >= 0");
  require(rate >= 0.0, "poisson_logpmf: rate must be >= 0");
  double r = std::max(rate, 1e-8);
  return static_cast<double>(y) * std::log(r) - r -
         std::lgamma(static_cast<double>(y) + 1.0);
}

long long poisson_sample(Rng& rng, double rate) {
  require(rate >= 0.0, "poisson_sample: rate must be >= 0");
  if (rate == 0.0) return 0;
  if (rate < 10.0) {
    // Knuth inversion via products of uniforms.
    double L = std::exp(-rate);
    long long k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= rng.uniform();
    } while (p > L);
    return k - 1;
  }
  // Hormann's PTRS transformed-rejection sampler.
  const double mu = rate;
  const double b = 0.931 + 2.53 * std::sqrt(mu);
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double v_r = 0.9277 - 3.6224 / (b - 2.0);
  for (;;) {
    double u = rng.uniform() - 0.5;
    double v = rng.uniform();
    double us = 0.5 - std::abs(u);
    double kf = std::floor((2.0 * a / us + b) * u + mu + 0.43);
    if (us >= 0.07 && v <= v_r) return static_cast<long long>(kf);
    if (kf < 0.0 || (us < 0.013 && v > us)) continue;
    if (std::log(v * inv_alpha / (a / (us * us) + b)) <=
        kf * std::log(mu) - mu - std::lgamma(kf + 1.0))
      return static_cast<long long>(kf);
  }
}

// ---- tape versions ----

GateSample binconcrete_sample(ad::Tape& t, ad::Var log_alpha,
                              const std::vector<double>& logit_u, double phi) {
  require(phi > 0.0, "binconcrete_sample: phi must be > 0");
  ad::Tensor la = t.value(log_alpha);
  require(static_cast<int>(logit_u.size()) == la.numel(),
          "binconcrete_sample: noise length must match log_alpha");
  ad::Var noise = t.constant(ad::Tensor(la.shape, logit_u));
  ad::Var ell = t.mul_const(t.add(log_alpha, noise), 1.0 / phi);
  GateSample g;
  g.h = t.sigmoid(ell);
  g.log_h = t.neg(t.softplus(t.neg(ell)));
  g.log_1mh = t.neg(t.softplus(ell));
  return g;
}

ad::Var binconcrete_logpdf(ad::Tape& t, ad::Var log_alpha, ad::Var h,
                           double phi) {
  ad::Var log_h = t.log(h);
  ad::Var log_1mh = t.log(t.add_const(t.neg(h), 1.0));
  return binconcrete_logpdf_from_logs(t, log_alpha, log_h, log_1mh, phi);
}

ad::Var binconcrete_logpdf_from_logs(ad::Tape& t, ad::Var log_alpha,
                                     ad::Var log_h, ad::Var log_1mh,
                                     double phi) {
  require(phi > 0.0, "binconcrete_logpdf: phi must be > 0");
  ad::Var a = t.sub(log_alpha, t.mul_const(log_h, phi));
  ad::Var b = t.mul_const(log_1mh, -phi);
  ad::Var lse = t.add(b, t.softplus(t.sub(a, b)));
  ad::Var out = t.add(log_alpha, t.mul_const(t.add(log_h, log_1mh), -phi - 1.0));
  out = t.sub(out, t.mul_const(lse, 2.0));
  return t.add_const(out, std::log(phi));
}

ad::Var normal_logpdf(ad::Tape& t, ad::Var x, ad::Var mean, ad::Var log_sigma) {
  static const double kLog2Pi = std::log(2.0 * M_PI);
  ad::Var d = t.sub(x, mean);
  ad::Var quad = t.mul(t.mul(d, d), t.exp(t.mul_const(log_sigma, -2.0)));
  ad::Var out = t.add_const(t.mul_const(quad, -0.5), -0.5 * kLog2Pi);
  return t.sub(out, log_sigma);
}

ad::Var normal_sample(ad::Tape& t, ad::Var mean, ad::Var log_sigma,
                      const std::vector<double>& eps) {
  ad::Tensor m = t.value(mean);
  require(static_cast<int>(eps.size()) == m.numel(),
          "normal_sample: noise length must match mean");
  ad::Var noise = t.constant(ad::Tensor(m.shape, eps));
  return t.add(mean, t.mul(noise, t.exp(log_sigma)));
}

ad::Var poisson_logpmf(ad::Tape& t, const std::vector<double>& y, ad::Var rate) {
  ad::Tensor r = t.value(rate);
  require(static_cast<int>(y.size()) == r.numel(),
          "poisson_logpmf: y length must match rate");
  std::vector<double> lg(y.size());
  for (size_t i = 0; i < y.size(); ++i) {
    require(y[i] >= 0.0, "poisson_logpmf: y must be >= 0");
    lg[i] = std::lgamma(y[i] + 1.0);
  }
  ad::Var yv = t.constant(ad::Tensor(r.shape, y));
  ad::Var lgv = t.constant(ad::Tensor(r.shape, lg));
  ad::Var rc = t.clamp(rate, 1e-8, std::numeric_limits<double>::infinity());
  return t.sub(t.sub(t.mul(yv, t.log(rc)), rc), lgv);
}

}  // namespace fslds::dist
