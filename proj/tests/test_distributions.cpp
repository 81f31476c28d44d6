#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "fslds/distributions.hpp"
#include "fslds/rng.hpp"

using fslds::Rng;
using fslds::ad::Tape;
using fslds::ad::Tensor;
using fslds::ad::Var;
namespace dist = fslds::dist;

namespace {

double sp(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// Density of the BinConcrete pushed through h = sigmoid(x), Jacobian
// included, written directly in logit space so it stays finite for any x.
// Equals exp(binconcrete_logpdf(sigmoid(x))) * sigmoid'(x) where the former
// is representable; the agreement is checked pointwise below.
double logit_space_logpdf(double log_alpha, double phi, double x) {
  double log_h = -sp(-x);
  double log_1mh = -sp(x);
  double a = log_alpha - phi * log_h;
  double b = -phi * log_1mh;
  double lse = b + sp(a - b);
  return std::log(phi) + log_alpha - phi * (log_h + log_1mh) - 2.0 * lse;
}

double simpson(const std::function<double(double)>& f, double lo, double hi,
               int n) {
  double h = (hi - lo) / n;
  double s = f(lo) + f(hi);
  for (int i = 1; i < n; ++i) s += f(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// One-sample KS statistic against U(0,1); xs is modified (sorted).
double ks_uniform(std::vector<double>& xs) {
  std::sort(xs.begin(), xs.end());
  double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    d = std::max(d, (i + 1) / n - xs[i]);
    d = std::max(d, xs[i] - i / n);
  }
  return d;
}

}  // namespace

TEST_CASE("binconcrete sampling formula and range") {
  // sigmoid((2 + logit(0.5)) / 0.5) = sigmoid(4)
  double h = dist::binconcrete_sample({2.0, 0.5}, 0.5);
  CHECK(h == doctest::Approx(0.9820137900379085).epsilon(1e-12));

  Rng rng(7);
  for (int i = 0; i < 2000; ++i) {
    double s = dist::binconcrete_sample({-1.0, 0.4}, rng.uniform());
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
  CHECK_THROWS_AS(dist::binconcrete_sample({0.0, 1.0}, 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(dist::binconcrete_sample({0.0, -1.0}, 0.5),
                  std::invalid_argument);
}

TEST_CASE("binconcrete logpdf closed-form points") {
  // log_alpha = 0, phi = 1 makes the density uniform on (0,1).
  for (double h : {0.05, 0.25, 0.5, 0.9, 0.999})
    CHECK(dist::binconcrete_logpdf({0.0, 1.0}, h) ==
          doctest::Approx(0.0).epsilon(1e-12));

  // Swapping the two classes: p(h; log_alpha) = p(1-h; -log_alpha).
  for (double a : {-2.0, -0.3, 1.5})
    for (double phi : {0.3, 1.0, 2.5})
      for (double h : {0.01, 0.2, 0.5, 0.77})
        CHECK(dist::binconcrete_logpdf({a, phi}, h) ==
              doctest::Approx(dist::binconcrete_logpdf({-a, phi}, 1.0 - h))
                  .epsilon(1e-12));

  CHECK_THROWS_AS(dist::binconcrete_logpdf({0.0, 1.0}, 1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(dist::binconcrete_logpdf({0.0, 1.0}, 0.0),
                  std::invalid_argument);
}

TEST_CASE("binconcrete density normalizes to one") {
  for (double phi : {0.3, 0.5, 1.0}) {
    for (double la : {-2.0, 0.0, 2.0}) {
      // The library form and the logit-space form agree where both are
      // representable; both are analytic in x, so matching on an interval
      // pins them as the same function.
      for (int i = 0; i <= 240; ++i) {
        double x = -12.0 + 0.1 * i;
        double lhs = dist::binconcrete_logpdf({la, phi}, sigmoid(x)) -
                     sp(-x) - sp(x);  // + log sigmoid'(x)
        double rhs = logit_space_logpdf(la, phi, x);
        CHECK(std::abs(lhs - rhs) <= 1e-9 * (1.0 + std::abs(rhs)));
      }
      // Integrate the logit-space form over a range wide enough that the
      // exp(-phi|x|) tails are < 1e-9 of the mass.
      double mass = simpson(
          [&](double x) { return std::exp(logit_space_logpdf(la, phi, x)); },
          -80.0, 80.0, 16000);
      CHECK(mass == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
}

TEST_CASE("binconcrete sampler matches its density") {
  const double la = 0.5, phi = 0.7;
  double mean_quad = simpson(
      [&](double x) {
        return sigmoid(x) * std::exp(logit_space_logpdf(la, phi, x));
      },
      -80.0, 80.0, 16000);

  Rng rng(1234);
  const int n = 100000;
  double acc = 0.0;
  for (int i = 0; i < n; ++i)
    acc += dist::binconcrete_sample({la, phi}, rng.uniform());
  CHECK(std::abs(acc / n - mean_quad) < 0.01);
}

TEST_CASE("binconcrete at unit odds and temperature is uniform") {
  Rng rng(99);
  const int n = 100000;
  std::vector<double> xs(n);
  for (int i = 0; i < n; ++i)
    xs[i] = dist::binconcrete_sample({0.0, 1.0}, rng.uniform());
  double d = ks_uniform(xs);
  CHECK(d < 1.6276 / std::sqrt(static_cast<double>(n)));  // KS alpha = 0.01
}

TEST_CASE("binconcrete concentrates at low temperature") {
  const double la = 2.0, phi = 0.05;
  // P(h > 0.99) = sigmoid(la - phi * logit(0.99)) exactly.
  double p_exact = sigmoid(la - phi * std::log(99.0));
  Rng rng(2024);
  const int n = 100000;
  int hits = 0;
  for (int i = 0; i < n; ++i)
    hits += dist::binconcrete_sample({la, phi}, rng.uniform()) > 0.99;
  double frac = static_cast<double>(hits) / n;
  CHECK(frac >= sigmoid(2.0) - 0.04);
  CHECK(std::abs(frac - p_exact) <= 0.01);
}

TEST_CASE("concrete logpdf closed-form points and invariances") {
  // Uniform corner: K classes, unit weights, phi = 1, barycenter.
  dist::ConcreteParams p3{{1.0, 1.0, 1.0}, 1.0};
  double lp = dist::concrete_logpdf(p3, {1.0 / 3, 1.0 / 3, 1.0 / 3});
  CHECK(lp == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Scaling every weight by a constant leaves the density unchanged.
  Rng rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    int K = 2 + static_cast<int>(rng.uniform() * 4);
    dist::ConcreteParams p{{}, 0.2 + rng.uniform() * 2.0};
    std::vector<double> x(K);
    double sx = 0.0;
    for (int k = 0; k < K; ++k) {
      p.alphas.push_back(std::exp(rng.uniform(-2.0, 2.0)));
      x[k] = 0.05 + rng.uniform();
      sx += x[k];
    }
    for (int k = 0; k < K; ++k) x[k] /= sx;
    double c = std::exp(rng.uniform(-3.0, 3.0));
    dist::ConcreteParams ps = p;
    for (double& a : ps.alphas) a *= c;
    CHECK(dist::concrete_logpdf(p, x) ==
          doctest::Approx(dist::concrete_logpdf(ps, x)).epsilon(1e-10));
  }

  CHECK_THROWS_AS(dist::concrete_logpdf(p3, {0.5, 0.5, 0.1}),
                  std::invalid_argument);
  CHECK_THROWS_AS(dist::concrete_logpdf(p3, {0.5, 0.5}),
                  std::invalid_argument);
  CHECK_THROWS_AS(dist::concrete_logpdf({{1.0}, 1.0}, {1.0}),
                  std::invalid_argument);
}

TEST_CASE("two-class concrete equals binconcrete") {
  Rng rng(17);
  for (int rep = 0; rep < 100; ++rep) {
    double alpha = std::exp(rng.uniform(-3.0, 3.0));
    double phi = 0.1 + rng.uniform() * 2.0;
    double h = 0.001 + 0.998 * rng.uniform();
    double lp2 = dist::concrete_logpdf({{alpha, 1.0}, phi}, {h, 1.0 - h});
    double lpb = dist::binconcrete_logpdf({std::log(alpha), phi}, h);
    CHECK(std::abs(lp2 - lpb) <= 1e-10 * (1.0 + std::abs(lpb)));
  }
}

TEST_CASE("normal logpdf and sampler") {
  CHECK(dist::normal_logpdf(0.0, 0.0, 1.0) ==
        doctest::Approx(-0.9189385332046727).epsilon(1e-14));
  CHECK(dist::normal_logpdf(1.0, 0.0, 1.0) ==
        doctest::Approx(-1.4189385332046727).epsilon(1e-14));
  // Vector form sums over dimensions: 3 * (-log sqrt(2 pi) - log 2).
  CHECK(dist::normal_logpdf({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}, 2.0) ==
        doctest::Approx(-4.836257141293854).epsilon(1e-13));
  CHECK(dist::normal_sample(1.5, 2.0, -0.75) == doctest::Approx(0.0));
  CHECK_THROWS_AS(dist::normal_logpdf(0.0, 0.0, 0.0), std::invalid_argument);

  // Box-Muller stream: moments of 1e5 draws.
  Rng rng(31);
  double m = 0.0, v = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double z = rng.normal();
    m += z;
    v += z * z;
  }
  m /= n;
  v = v / n - m * m;
  CHECK(std::abs(m) < 0.02);
  CHECK(std::abs(v - 1.0) < 0.03);
}

TEST_CASE("poisson logpmf values and normalization") {
  CHECK(dist::poisson_logpmf(0, 1.0) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(dist::poisson_logpmf(2, 2.0) ==
        doctest::Approx(std::log(2.0) - 2.0).epsilon(1e-13));
  // 10 log 10 - 10 - log 10!; 10! = 3628800 is exact in a double.
  double exact10 = 10.0 * std::log(10.0) - 10.0 - std::log(3628800.0);
  CHECK(dist::poisson_logpmf(10, 10.0) ==
        doctest::Approx(exact10).epsilon(1e-13));
  CHECK(dist::poisson_logpmf(10, 10.0) ==
        doctest::Approx(-2.0785616431).epsilon(1e-9));

  for (double rate : {0.5, 4.5, 60.0}) {
    double mass = 0.0;
    for (long long y = 0; y <= 400; ++y)
      mass += std::exp(dist::poisson_logpmf(y, rate));
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-10));
  }

  // The rate is floored, so a zero rate gives the pmf at 1e-8.
  CHECK(dist::poisson_logpmf(0, 0.0) == doctest::Approx(-1e-8));
  CHECK(dist::poisson_logpmf(1, 0.0) ==
        doctest::Approx(std::log(1e-8) - 1e-8).epsilon(1e-12));
  CHECK_THROWS_AS(dist::poisson_logpmf(-1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(dist::poisson_logpmf(0, -0.5), std::invalid_argument);
}

TEST_CASE("poisson sampler moments and distribution") {
  // Small rates use inversion, large rates the transformed-rejection path;
  // check both against exact moments and the exact cdf.
  for (double rate : {3.7, 42.0}) {
    Rng rng(5150);
    const int n = 200000;
    std::vector<long long> draws(n);
    double m = 0.0, v = 0.0;
    long long max_y = 0;
    for (int i = 0; i < n; ++i) {
      draws[i] = dist::poisson_sample(rng, rate);
      CHECK(draws[i] >= 0);
      m += static_cast<double>(draws[i]);
      max_y = std::max(max_y, draws[i]);
    }
    m /= n;
    for (int i = 0; i < n; ++i) {
      double d = static_cast<double>(draws[i]) - m;
      v += d * d;
    }
    v /= n;
    CHECK(std::abs(m - rate) < (rate < 10 ? 0.05 : 0.3));
    CHECK(std::abs(v - rate) < (rate < 10 ? 0.15 : 2.0));

    // Max gap between empirical and exact cdf.
    std::vector<double> ecdf(static_cast<size_t>(max_y) + 1, 0.0);
    for (int i = 0; i < n; ++i) ecdf[static_cast<size_t>(draws[i])] += 1.0;
    double emp = 0.0, exact = 0.0, gap = 0.0;
    for (long long y = 0; y <= max_y; ++y) {
      emp += ecdf[static_cast<size_t>(y)] / n;
      exact += std::exp(dist::poisson_logpmf(y, rate));
      gap = std::max(gap, std::abs(emp - exact));
    }
    CHECK(gap < 1.95 / std::sqrt(static_cast<double>(n)));
  }

  Rng a(8), b(8);
  for (int i = 0; i < 50; ++i)
    CHECK(dist::poisson_sample(a, 20.0) == dist::poisson_sample(b, 20.0));
  Rng z(1);
  CHECK(dist::poisson_sample(z, 0.0) == 0);
}

TEST_CASE("tape binconcrete sample matches scalar version") {
  Rng rng(3);
  Tape t;
  std::vector<double> la = {-1.0, 0.2, 2.0};
  std::vector<double> us = {rng.uniform(), rng.uniform(), rng.uniform()};
  std::vector<double> lus(3);
  for (int i = 0; i < 3; ++i) lus[i] = dist::logit(us[i]);
  Var lav = t.leaf(Tensor::vec(la));
  dist::GateSample g = dist::binconcrete_sample(t, lav, lus, 0.6);
  Tensor h = t.value(g.h), lh = t.value(g.log_h), l1 = t.value(g.log_1mh);
  for (int i = 0; i < 3; ++i) {
    double href = dist::binconcrete_sample({la[i], 0.6}, us[i]);
    CHECK(h(i) == doctest::Approx(href).epsilon(1e-12));
    CHECK(lh(i) == doctest::Approx(std::log(href)).epsilon(1e-10));
    CHECK(l1(i) == doctest::Approx(std::log1p(-href)).epsilon(1e-10));
  }
}

TEST_CASE("tape binconcrete logpdf matches scalar and differentiates") {
  std::vector<double> la = {-0.5, 0.0, 1.2};
  std::vector<double> hs = {0.2, 0.5, 0.9};
  const double phi = 0.8;
  Tape t;
  Var lav = t.leaf(Tensor::vec(la));
  Var hv = t.leaf(Tensor::vec(hs));
  Var lp = dist::binconcrete_logpdf(t, lav, hv, phi);
  Tensor lpv = t.value(lp);
  for (int i = 0; i < 3; ++i)
    CHECK(lpv(i) == doctest::Approx(dist::binconcrete_logpdf({la[i], phi},
                                                             hs[i]))
                        .epsilon(1e-12));
  Var loss = t.sum(lp);
  t.backward(loss);
  std::vector<Tensor> params = {Tensor::vec(la), Tensor::vec(hs)};
  std::vector<Tensor> grads = {t.grad(lav), t.grad(hv)};
  auto eval = [&](const std::vector<Tensor>& ps) {
    Tape tt;
    Var a = tt.leaf(ps[0]), h = tt.leaf(ps[1]);
    return tt.scalar_value(tt.sum(dist::binconcrete_logpdf(tt, a, h, phi)));
  };
  CHECK(fslds::ad::finite_diff_check(eval, params, grads, 1e-6) < 1e-4);
}

TEST_CASE("tape gate sample differentiates through all outputs") {
  std::vector<double> lus = {-0.7, 0.1, 1.9};
  const double phi = 0.4;
  auto build = [&](Tape& t, Var lav) {
    dist::GateSample g = dist::binconcrete_sample(t, lav, lus, phi);
    Var mix = t.add(g.h, t.add(t.mul_const(g.log_h, 0.1),
                               t.mul_const(g.log_1mh, 0.2)));
    return t.sum(mix);
  };
  Tape t;
  Var lav = t.leaf(Tensor::vec({-1.0, 0.3, 0.8}));
  Var loss = build(t, lav);
  t.backward(loss);
  std::vector<Tensor> params = {Tensor::vec({-1.0, 0.3, 0.8})};
  std::vector<Tensor> grads = {t.grad(lav)};
  auto eval = [&](const std::vector<Tensor>& ps) {
    Tape tt;
    Var a = tt.leaf(ps[0]);
    return tt.scalar_value(build(tt, a));
  };
  CHECK(fslds::ad::finite_diff_check(eval, params, grads, 1e-6) < 1e-4);
}

TEST_CASE("tape normal logpdf matches scalar and differentiates") {
  std::vector<double> xs = {0.3, -1.0, 2.0};
  std::vector<double> ms = {0.0, -0.5, 1.0};
  const double log_sigma = std::log(0.7);
  Tape t;
  Var xv = t.leaf(Tensor::vec(xs));
  Var mv = t.leaf(Tensor::vec(ms));
  Var sv = t.leaf(Tensor::scalar(log_sigma));
  Var lp = dist::normal_logpdf(t, xv, mv, sv);
  Tensor lpv = t.value(lp);
  for (int i = 0; i < 3; ++i)
    CHECK(lpv(i) ==
          doctest::Approx(dist::normal_logpdf(xs[i], ms[i], 0.7)).epsilon(1e-12));
  Var loss = t.sum(lp);
  t.backward(loss);
  std::vector<Tensor> params = {Tensor::vec(xs), Tensor::vec(ms),
                                Tensor::scalar(log_sigma)};
  std::vector<Tensor> grads = {t.grad(xv), t.grad(mv), t.grad(sv)};
  auto eval = [&](const std::vector<Tensor>& ps) {
    Tape tt;
    Var x = tt.leaf(ps[0]), m = tt.leaf(ps[1]), s = tt.leaf(ps[2]);
    return tt.scalar_value(tt.sum(dist::normal_logpdf(tt, x, m, s)));
  };
  CHECK(fslds::ad::finite_diff_check(eval, params, grads, 1e-6) < 1e-4);
}

TEST_CASE("tape normal sample reparametrizes") {
  std::vector<double> eps = {0.5, -1.2};
  Tape t;
  Var mv = t.leaf(Tensor::vec({1.0, 2.0}));
  Var sv = t.leaf(Tensor::scalar(std::log(0.3)));
  Var s = dist::normal_sample(t, mv, sv, eps);
  Tensor sval = t.value(s);
  CHECK(sval(0) == doctest::Approx(1.0 + 0.3 * 0.5).epsilon(1e-12));
  CHECK(sval(1) == doctest::Approx(2.0 - 0.3 * 1.2).epsilon(1e-12));
  Var loss = t.sum(t.mul(s, s));
  t.backward(loss);
  std::vector<Tensor> params = {Tensor::vec({1.0, 2.0}),
                                Tensor::scalar(std::log(0.3))};
  std::vector<Tensor> grads = {t.grad(mv), t.grad(sv)};
  auto eval = [&](const std::vector<Tensor>& ps) {
    Tape tt;
    Var m = tt.leaf(ps[0]), ls = tt.leaf(ps[1]);
    Var ss = dist::normal_sample(tt, m, ls, eps);
    return tt.scalar_value(tt.sum(tt.mul(ss, ss)));
  };
  CHECK(fslds::ad::finite_diff_check(eval, params, grads, 1e-6) < 1e-4);
}

TEST_CASE("tape poisson logpmf matches scalar and differentiates") {
  std::vector<double> y = {0.0, 2.0, 5.0};
  std::vector<double> rates = {0.4, 2.0, 7.5};
  Tape t;
  Var rv = t.leaf(Tensor::vec(rates));
  Var lp = dist::poisson_logpmf(t, y, rv);
  Tensor lpv = t.value(lp);
  for (int i = 0; i < 3; ++i)
    CHECK(lpv(i) == doctest::Approx(dist::poisson_logpmf(
                        static_cast<long long>(y[i]), rates[i]))
                        .epsilon(1e-12));
  Var loss = t.sum(lp);
  t.backward(loss);
  std::vector<Tensor> params = {Tensor::vec(rates)};
  std::vector<Tensor> grads = {t.grad(rv)};
  auto eval = [&](const std::vector<Tensor>& ps) {
    Tape tt;
    Var r = tt.leaf(ps[0]);
    return tt.scalar_value(tt.sum(dist::poisson_logpmf(tt, y, r)));
  };
  CHECK(fslds::ad::finite_diff_check(eval, params, grads, 1e-6) < 1e-4);
}

TEST_CASE("uniform stream stays strictly inside (0,1)") {
  Rng rng(77);
  double lo = 1.0, hi = 0.0, acc = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    acc += u;
  }
  CHECK(lo > 0.0);
  CHECK(hi < 1.0);
  CHECK(std::abs(acc / n - 0.5) < 0.006);
}
