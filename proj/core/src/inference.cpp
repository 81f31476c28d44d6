#include "fslds/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <thread>

#include "fslds/distributions.hpp"

namespace fslds::infer {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<double> row_of(const ad::Tensor& m, int row) {
  std::vector<double> v(static_cast<size_t>(m.cols()));
  for (int j = 0; j < m.cols(); ++j) v[static_cast<size_t>(j)] = m(row, j);
  return v;
}

std::vector<double> normalized_row(const ad::Tensor& counts, int row) {
  std::vector<double> v(static_cast<size_t>(counts.cols()));
  for (int j = 0; j < counts.cols(); ++j)
    v[static_cast<size_t>(j)] = nn::normalize_count(counts(row, j));
  return v;
}

void check_finite(ad::Tape& t, ad::Var v, const char* term, int ti) {
  if (!std::isfinite(t.scalar_value(v)))
    throw std::runtime_error("non-finite " + std::string(term) + " at t=" +
                             std::to_string(ti));
}

}  // namespace

void FitConfig::validate() const {
  if (K < 0) throw std::invalid_argument("FitConfig: K must be >= 0");
  if (lambda_l1 < 0.0)
    throw std::invalid_argument("FitConfig: lambda_l1 must be >= 0");
  if (!(phi_start > 0.0) || !(phi_end > 0.0) || phi_end > phi_start)
    throw std::invalid_argument("FitConfig: need 0 < phi_end <= phi_start");
  if (!(phi_rate > 0.0))
    throw std::invalid_argument("FitConfig: phi_rate must be > 0");
  if (epochs < 0) throw std::invalid_argument("FitConfig: epochs must be >= 0");
  if (!(lr_main > 0.0) || !(lr_theta_initial > 0.0))
    throw std::invalid_argument("FitConfig: learning rates must be > 0");
  if (lr_theta_switch_epoch < 0)
    throw std::invalid_argument("FitConfig: switch epoch must be >= 0");
  if (n_restarts < 1)
    throw std::invalid_argument("FitConfig: n_restarts must be >= 1");
  if (hidden < 1) throw std::invalid_argument("FitConfig: hidden must be >= 1");
  if (!(grad_clip > 0.0))
    throw std::invalid_argument("FitConfig: grad_clip must be > 0");
}

double FitResult::final_elbo() const {
  if (failed || elbo_trace.empty()) return kNegInf;
  return elbo_trace.back().total;
}

NoiseDraws NoiseDraws::draw(Rng& rng, int T, int K) {
  if (T < 1 || K < 0) throw std::invalid_argument("NoiseDraws: bad dims");
  NoiseDraws n;
  n.logit_u = ad::Tensor::zeros({T, K});
  n.eps = ad::Tensor::zeros({T, K + 1});
  for (int t = 0; t < T; ++t) {
    for (int k = 0; k < K; ++k) n.logit_u(t, k) = dist::logit(rng.uniform());
    for (int k = 0; k <= K; ++k) n.eps(t, k) = rng.normal();
  }
  return n;
}

double anneal_phi(long long step, const FitConfig& cfg) {
  if (step < 0) throw std::invalid_argument("anneal_phi: step must be >= 0");
  return std::max(cfg.phi_end,
                  cfg.phi_start * std::exp(-cfg.phi_rate *
                                           static_cast<double>(step)));
}

ElboVars elbo_graph(ad::Tape& t, ad::Var rho, const nn::NetVars& nets,
                    const model::SpikeCountMatrix& y, double phi,
                    double lambda_l1, const NoiseDraws& noise) {
  const int K = nets.dims.K, M = nets.dims.M, T = y.T();
  if (!(phi > 0.0)) throw std::invalid_argument("elbo_graph: phi must be > 0");
  if (lambda_l1 < 0.0)
    throw std::invalid_argument("elbo_graph: lambda_l1 must be >= 0");
  if (y.M() != M) throw std::invalid_argument("elbo_graph: M mismatch");
  if (noise.logit_u.rows() != T || noise.logit_u.cols() != K ||
      noise.eps.rows() != T || noise.eps.cols() != K + 1)
    throw std::invalid_argument("elbo_graph: noise dims mismatch");

  ad::Var theta = t.softplus(rho);
  ad::Var recon = t.constant(0.0);
  ad::Var kl_h = t.constant(0.0);
  ad::Var kl_z = t.constant(0.0);
  ad::Var l1 = t.constant(0.0);

  ad::Var sp = t.constant(ad::Tensor::zeros({nets.dims.hidden}));
  ad::Var sq = sp, sz = sp;
  ad::Var h_prev = t.constant(ad::Tensor::zeros({K}));
  ad::Var z_prev = t.constant(ad::Tensor::zeros({K + 1}));
  ad::Var y_prev = t.constant(ad::Tensor::zeros({M}));

  for (int ti = 0; ti < T; ++ti) {
    ad::Var y_norm = t.constant(ad::Tensor::vec(normalized_row(y.counts, ti)));

    ad::Var h_t{};  // default: no gates (K == 0)
    if (K > 0) {
      nn::MapOut fq = nn::fq_locations(t, nets, h_prev, y_norm, sq);
      sq = fq.state;
      nn::MapOut fp = nn::fp_locations(t, nets, h_prev, y_prev, sp);
      sp = fp.state;

      std::vector<double> lu(static_cast<size_t>(K));
      for (int k = 0; k < K; ++k)
        lu[static_cast<size_t>(k)] = noise.logit_u(ti, k);
      dist::GateSample gs = dist::binconcrete_sample(t, fq.out, lu, phi);
      h_t = gs.h;

      ad::Var lq = dist::binconcrete_logpdf_from_logs(t, fq.out, gs.log_h,
                                                      gs.log_1mh, phi);
      ad::Var lp = dist::binconcrete_logpdf_from_logs(t, fp.out, gs.log_h,
                                                      gs.log_1mh, phi);
      kl_h = t.add(kl_h, t.sum(t.sub(lq, lp)));
      check_finite(t, kl_h, "kl_h", ti);

      if (lambda_l1 > 0.0) l1 = t.add(l1, t.mul_const(t.sum(gs.h), lambda_l1));
    }

    nn::MapOut fz = nn::fz_means(t, nets, z_prev, y_norm, sz);
    sz = fz.state;
    std::vector<double> ep(static_cast<size_t>(K + 1));
    for (int k = 0; k <= K; ++k) ep[static_cast<size_t>(k)] = noise.eps(ti, k);
    ad::Var z_t = dist::normal_sample(t, fz.out, nets.log_sigma_q, ep);

    ad::Var prior_mean = t.mul(nets.a_diag, z_prev);
    ad::Var lqz = dist::normal_logpdf(t, z_t, fz.out, nets.log_sigma_q);
    ad::Var lpz = dist::normal_logpdf(t, z_t, prior_mean, nets.log_sigma_p);
    kl_z = t.add(kl_z, t.sum(t.sub(lqz, lpz)));
    check_finite(t, kl_z, "kl_z", ti);

    ad::Var r = model::rate_graph(t, theta, h_t, z_t);
    recon = t.add(recon, t.sum(dist::poisson_logpmf(t, row_of(y.counts, ti), r)));
    check_finite(t, recon, "recon", ti);

    if (K > 0) h_prev = h_t;
    z_prev = z_t;
    y_prev = y_norm;
  }

  ElboVars out;
  out.recon = recon;
  out.kl_h = kl_h;
  out.kl_z = kl_z;
  out.l1 = l1;
  out.total = t.sub(t.sub(t.sub(recon, kl_h), kl_z), l1);
  return out;
}

ElboEstimate elbo_step(const model::ModelParams& p,
                       const model::SpikeCountMatrix& y, double phi,
                       double lambda_l1, const NoiseDraws& noise) {
  ad::Tape t;
  ad::Var rho = t.constant(p.rho);
  nn::NetVars nets = nn::bind_const(t, p.nets);
  ElboVars ev = elbo_graph(t, rho, nets, y, phi, lambda_l1, noise);
  ElboEstimate est;
  est.total = t.scalar_value(ev.total);
  est.recon = t.scalar_value(ev.recon);
  est.kl_h = t.scalar_value(ev.kl_h);
  est.kl_z = t.scalar_value(ev.kl_z);
  est.l1_penalty = t.scalar_value(ev.l1);
  return est;
}

model::LatentTrajectory posterior_means(const model::ModelParams& p,
                                        const model::SpikeCountMatrix& y,
                                        double phi) {
  const int K = p.K(), T = y.T();
  if (!(phi > 0.0))
    throw std::invalid_argument("posterior_means: phi must be > 0");
  model::LatentTrajectory traj;
  traj.h = ad::Tensor::zeros({T, K});
  traj.z = ad::Tensor::zeros({T, K + 1});

  ad::Tape t;
  nn::NetVars nets = nn::bind_const(t, p.nets);
  ad::Var sq = t.constant(ad::Tensor::zeros({p.nets.dims.hidden}));
  ad::Var sz = sq;
  ad::Var h_prev = t.constant(ad::Tensor::zeros({K}));
  ad::Var z_prev = t.constant(ad::Tensor::zeros({K + 1}));

  for (int ti = 0; ti < T; ++ti) {
    ad::Var y_norm = t.constant(ad::Tensor::vec(normalized_row(y.counts, ti)));
    if (K > 0) {
      nn::MapOut fq = nn::fq_locations(t, nets, h_prev, y_norm, sq);
      sq = fq.state;
      ad::Tensor locs = t.value(fq.out);
      std::vector<double> hbar(static_cast<size_t>(K));
      for (int k = 0; k < K; ++k) {
        double s = 1.0 / (1.0 + std::exp(-locs(k) / phi));
        s = std::min(std::max(s, 1e-6), 1.0 - 1e-6);
        hbar[static_cast<size_t>(k)] = s;
        traj.h(ti, k) = s;
      }
      h_prev = t.constant(ad::Tensor::vec(hbar));
    }
    nn::MapOut fz = nn::fz_means(t, nets, z_prev, y_norm, sz);
    sz = fz.state;
    ad::Tensor mu = t.value(fz.out);
    for (int k = 0; k <= K; ++k) traj.z(ti, k) = mu(k);
    z_prev = fz.out;
  }
  return traj;
}

namespace {

std::vector<ad::Tensor*> trainable_tensors(model::ModelParams& p) {
  std::vector<ad::Tensor*> out{&p.rho};
  nn::visit_tensors(p.nets, [&](const std::string&, ad::Tensor& t) {
    out.push_back(&t);
  });
  return out;
}

std::vector<ad::Var> trainable_vars(ad::Var rho, const nn::NetVars& v) {
  std::vector<ad::Var> out{rho};
  nn::visit_tensors(v, [&](const std::string&, const ad::Var& var) {
    out.push_back(var);
  });
  return out;
}

struct Adam {
  double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  long long steps = 0;
  std::vector<ad::Tensor> m, v;

  void init(const std::vector<ad::Tensor*>& ps) {
    m.clear();
    v.clear();
    for (const ad::Tensor* p : ps) {
      m.push_back(ad::Tensor::zeros(p->shape));
      v.push_back(ad::Tensor::zeros(p->shape));
    }
  }

  void step(const std::vector<ad::Tensor*>& ps,
            const std::vector<ad::Tensor>& gs,
            const std::vector<double>& lr) {
    ++steps;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps));
    for (size_t i = 0; i < ps.size(); ++i) {
      ad::Tensor& x = *ps[i];
      const ad::Tensor& g = gs[i];
      for (size_t j = 0; j < x.data.size(); ++j) {
        double gj = g.data[j];
        m[i].data[j] = b1 * m[i].data[j] + (1.0 - b1) * gj;
        v[i].data[j] = b2 * v[i].data[j] + (1.0 - b2) * gj * gj;
        double mh = m[i].data[j] / c1;
        double vh = v[i].data[j] / c2;
        x.data[j] -= lr[i] * mh / (std::sqrt(vh) + eps);
      }
    }
  }
};

void clip_global_norm(std::vector<ad::Tensor>& gs, double clip) {
  double sq = 0.0;
  for (const ad::Tensor& g : gs)
    for (double x : g.data) sq += x * x;
  if (sq > clip * clip) {
    double scale = clip / std::sqrt(sq);
    for (ad::Tensor& g : gs)
      for (double& x : g.data) x *= scale;
  }
}

}  // namespace

FitResult fit_once(const model::SpikeCountMatrix& y, const FitConfig& cfg,
                   std::uint64_t seed, std::ostream* progress) {
  cfg.validate();
  y.validate();
  const int T = y.T(), M = y.M(), K = cfg.K;

  FitResult res;
  res.seed = seed;
  res.config = cfg;
  res.params = model::ModelParams::init(seed, {K, M, cfg.hidden});

  // Start the background row flat at the global mean count so every restart
  // begins near the data scale. A flat start matters: seeding each channel
  // at its own mean hands the background a copy of every feature's
  // occupancy-weighted profile, which biases fits toward explaining
  // features with background amplitude swings instead of gates.
  double mean = 0.0;
  for (int t = 0; t < T; ++t)
    for (int m = 0; m < M; ++m) mean += y.counts(t, m);
  mean /= static_cast<double>(T) * static_cast<double>(M);
  const double rho0 = model::inv_softplus(std::max(mean, 0.01));
  for (int m = 0; m < M; ++m) res.params.rho(0, m) = rho0;

  // Feature rows start as data-driven proposals: each row copies the excess
  // count (over the global mean) in a 3-bin window at a random time, with
  // per-entry jitter. Gates thereby begin as concrete rate-pattern
  // hypotheses with immediate reconstruction leverage on their channels;
  // rows initialized as small noise tend to lose the early race against the
  // unpenalized background amplitude, which then permanently absorbs one
  // feature's switching structure.
  Rng theta_rng(seed ^ 0xA5A5A5A5DEADBEEFULL);
  for (int k = 1; k <= K; ++k) {
    const int t0 = static_cast<int>(theta_rng.uniform() * T);
    const int lo = std::max(0, t0 - 1), hi = std::min(T - 1, t0 + 1);
    for (int m = 0; m < M; ++m) {
      double w = 0.0;
      for (int t = lo; t <= hi; ++t) w += y.counts(t, m);
      w /= static_cast<double>(hi - lo + 1);
      res.params.rho(k, m) = model::inv_softplus(
          std::max(w - mean, 0.05) * theta_rng.uniform(0.7, 1.3));
    }
  }

  Rng noise_rng(seed * 0x9E3779B97F4A7C15ULL + 0xD1B54A32D192ED03ULL);
  std::vector<ad::Tensor*> params = trainable_tensors(res.params);
  Adam adam;
  adam.init(params);

  std::vector<double> lr(params.size(), cfg.lr_main);
  std::vector<ad::Tensor> grads;
  ad::Tape tape;

  if (progress) (*progress) << "epoch,phi,total,recon,kl_h,kl_z,l1\n";

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double phi = anneal_phi(epoch, cfg);
    NoiseDraws noise = NoiseDraws::draw(noise_rng, T, K);

    tape.reset();
    ad::Var rho = tape.leaf(res.params.rho);
    nn::NetVars nets = nn::bind(tape, res.params.nets);

    ElboVars ev;
    try {
      ev = elbo_graph(tape, rho, nets, y, phi, cfg.lambda_l1, noise);
    } catch (const std::exception& e) {
      res.failed = true;
      res.failure = "epoch " + std::to_string(epoch) + ": " + e.what();
      return res;
    }

    ElboEstimate est;
    est.total = tape.scalar_value(ev.total);
    est.recon = tape.scalar_value(ev.recon);
    est.kl_h = tape.scalar_value(ev.kl_h);
    est.kl_z = tape.scalar_value(ev.kl_z);
    est.l1_penalty = tape.scalar_value(ev.l1);
    if (!std::isfinite(est.total)) {
      res.failed = true;
      res.failure = "epoch " + std::to_string(epoch) + ": non-finite total";
      return res;
    }
    res.elbo_trace.push_back(est);
    if (progress)
      (*progress) << epoch << ',' << phi << ',' << est.total << ','
                  << est.recon << ',' << est.kl_h << ',' << est.kl_z << ','
                  << est.l1_penalty << '\n';

    tape.backward(tape.neg(ev.total));
    std::vector<ad::Var> vars = trainable_vars(rho, nets);
    grads.clear();
    for (ad::Var v : vars) grads.push_back(tape.grad(v));
    clip_global_norm(grads, cfg.grad_clip);

    lr[0] = epoch < cfg.lr_theta_switch_epoch ? cfg.lr_theta_initial
                                              : cfg.lr_main;
    adam.step(params, grads, lr);
  }

  res.posterior = posterior_means(res.params, y, anneal_phi(cfg.epochs, cfg));
  return res;
}

FitResult fit_multi(const model::SpikeCountMatrix& y, const FitConfig& cfg,
                    int jobs,
                    std::vector<std::pair<std::uint64_t, double>>*
                        restart_elbos) {
  cfg.validate();
  const int n = cfg.n_restarts;
  jobs = std::max(1, std::min(jobs, n));

  std::vector<FitResult> results(static_cast<size_t>(n));
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= n) return;
      results[static_cast<size_t>(i)] =
          fit_once(y, cfg, cfg.seed + static_cast<std::uint64_t>(i), nullptr);
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(jobs));
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }

  if (restart_elbos) {
    restart_elbos->clear();
    for (const FitResult& r : results)
      restart_elbos->emplace_back(r.seed, r.final_elbo());
  }

  const FitResult* best = nullptr;
  for (const FitResult& r : results) {
    if (r.failed) continue;
    if (!best || r.final_elbo() > best->final_elbo()) best = &r;
  }
  if (!best) throw std::runtime_error("fit_multi: every restart failed");
  return *best;
}

}  // namespace fslds::infer
