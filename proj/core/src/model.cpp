#include "fslds/model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "fslds/distributions.hpp"
#include "fslds/rng.hpp"

namespace fslds::model {

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double inv_softplus(double y) {
  if (y <= 0.0) throw std::invalid_argument("inv_softplus: y must be > 0");
  // log(exp(y) - 1), stable for large y.
  if (y > 20.0) return y;
  return std::log(std::expm1(y));
}

ad::Tensor ModelParams::theta() const {
  ad::Tensor t = rho;
  for (double& v : t.data) v = softplus(v);
  return t;
}

ModelParams ModelParams::init(std::uint64_t seed, const nn::NetDims& dims) {
  ModelParams p;
  p.nets = nn::init_params(seed, dims);
  p.rho = ad::Tensor::zeros({dims.K + 1, dims.M});
  // Distinct stream from the network weights so the two draws decouple.
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + 0x1234567);
  for (double& v : p.rho.data) v = rng.uniform(-1.0, 0.0);
  return p;
}

void SpikeCountMatrix::validate() const {
  if (counts.rank() != 2)
    throw std::invalid_argument("SpikeCountMatrix: counts must be T x M");
  for (double v : counts.data)
    if (!(v >= 0.0) || v != std::floor(v))
      throw std::invalid_argument(
          "SpikeCountMatrix: counts must be non-negative integers");
  if (!channel_labels.empty() &&
      static_cast<int>(channel_labels.size()) != M())
    throw std::invalid_argument("SpikeCountMatrix: label count != M");
  if (!(bin_width_seconds > 0.0))
    throw std::invalid_argument("SpikeCountMatrix: bin width must be > 0");
}

std::vector<std::string> SpikeCountMatrix::default_labels(int m) {
  std::vector<std::string> out;
  out.reserve(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) out.push_back("ch" + std::to_string(i));
  return out;
}

ad::Tensor rate(const ad::Tensor& theta, const ad::Tensor& h_t,
                const ad::Tensor& z_t) {
  const int K = theta.rows() - 1;
  const int M = theta.cols();
  if (theta.rank() != 2 || K < 0)
    throw std::invalid_argument("rate: theta must be (K+1) x M");
  for (double v : theta.data)
    if (v < 0.0) throw std::invalid_argument("rate: theta must be >= 0");
  if (h_t.numel() != K)
    throw std::invalid_argument("rate: h_t must have K entries");
  if (z_t.numel() != K + 1)
    throw std::invalid_argument("rate: z_t must have K+1 entries");

  ad::Tensor out = ad::Tensor::zeros({M});
  for (int k = 0; k <= K; ++k) {
    const double gate = k == 0 ? 1.0 : h_t.data[static_cast<size_t>(k - 1)];
    const double amp = gate * std::exp(z_t.data[static_cast<size_t>(k)]);
    for (int m = 0; m < M; ++m) out(m) += theta(k, m) * amp;
  }
  for (int m = 0; m < M; ++m) out(m) = std::max(out(m), 1e-8);
  return out;
}

ad::Var rate_graph(ad::Tape& t, ad::Var theta, ad::Var h_t, ad::Var z_t) {
  ad::Var w = h_t.id < 0
                  ? t.constant(ad::Tensor::vec({1.0}))
                  : t.concat(t.constant(ad::Tensor::vec({1.0})), h_t);
  ad::Var g = t.mul(w, t.exp(z_t));
  ad::Var r = t.matmul_tn(theta, g);  // theta' (M x K+1) . g
  return t.clamp(r, 1e-8, std::numeric_limits<double>::infinity());
}

namespace {

ad::Var normalized_row(ad::Tape& t, const ad::Tensor& counts, int row) {
  const int M = counts.cols();
  std::vector<double> v(static_cast<size_t>(M));
  for (int m = 0; m < M; ++m)
    v[static_cast<size_t>(m)] = nn::normalize_count(counts(row, m));
  return t.constant(ad::Tensor::vec(v));
}

std::vector<double> tensor_row(const ad::Tensor& m, int row) {
  std::vector<double> v(static_cast<size_t>(m.cols()));
  for (int j = 0; j < m.cols(); ++j) v[static_cast<size_t>(j)] = m(row, j);
  return v;
}

}  // namespace

double log_joint(const ModelParams& p, const LatentTrajectory& traj,
                 const SpikeCountMatrix& y, double phi) {
  const int K = p.K(), M = p.M(), T = y.T();
  if (traj.T() != T)
    throw std::invalid_argument("log_joint: trajectory and counts disagree on T");
  if (traj.h.cols() != K || (K > 0 && traj.h.rank() != 2))
    throw std::invalid_argument("log_joint: h must be T x K");
  if (traj.z.cols() != K + 1)
    throw std::invalid_argument("log_joint: z must be T x (K+1)");
  if (!(phi > 0.0)) throw std::invalid_argument("log_joint: phi must be > 0");

  const ad::Tensor theta = p.theta();
  const double sigma_p = std::exp(p.nets.log_sigma_p(0));

  ad::Tape t;
  nn::NetVars nets = nn::bind_const(t, p.nets);

  double total = 0.0;
  ad::Var s = t.constant(ad::Tensor::zeros({p.nets.dims.hidden}));
  ad::Var h_prev = t.constant(ad::Tensor::zeros({K}));
  ad::Var y_prev = t.constant(ad::Tensor::zeros({M}));

  std::vector<double> z_prev(static_cast<size_t>(K + 1), 0.0);
  for (int ti = 0; ti < T; ++ti) {
    // Gate transition terms (none when K == 0).
    std::vector<double> h_row = K > 0 ? tensor_row(traj.h, ti)
                                      : std::vector<double>{};
    if (K > 0) {
      nn::MapOut fp = nn::fp_locations(t, nets, h_prev, y_prev, s);
      s = fp.state;
      ad::Tensor locs = t.value(fp.out);
      for (int k = 0; k < K; ++k)
        total += dist::binconcrete_logpdf({locs(k), phi},
                                          h_row[static_cast<size_t>(k)]);
      h_prev = t.constant(ad::Tensor::vec(h_row));
      y_prev = normalized_row(t, y.counts, ti);
    }

    // AR(1) state transition.
    std::vector<double> z_row = tensor_row(traj.z, ti);
    for (int k = 0; k <= K; ++k)
      total += dist::normal_logpdf(
          z_row[static_cast<size_t>(k)],
          p.nets.a_diag(k) * z_prev[static_cast<size_t>(k)], sigma_p);
    z_prev = z_row;

    // Emissions.
    ad::Tensor r = rate(theta,
                        K > 0 ? ad::Tensor::vec(h_row) : ad::Tensor::vec({}),
                        ad::Tensor::vec(z_row));
    for (int m = 0; m < M; ++m)
      total += dist::poisson_logpmf(
          static_cast<long long>(y.counts(ti, m)), r(m));
  }
  return total;
}

std::pair<LatentTrajectory, SpikeCountMatrix> simulate(const ModelParams& p,
                                                       int T, double phi,
                                                       std::uint64_t seed) {
  if (T < 1) throw std::invalid_argument("simulate: T must be >= 1");
  if (!(phi > 0.0)) throw std::invalid_argument("simulate: phi must be > 0");
  const int K = p.K(), M = p.M();
  const ad::Tensor theta = p.theta();
  const double sigma_p = std::exp(p.nets.log_sigma_p(0));

  Rng rng(seed);
  ad::Tape t;
  nn::NetVars nets = nn::bind_const(t, p.nets);
  ad::Var s = t.constant(ad::Tensor::zeros({p.nets.dims.hidden}));
  ad::Var h_prev = t.constant(ad::Tensor::zeros({K}));
  ad::Var y_prev = t.constant(ad::Tensor::zeros({M}));

  LatentTrajectory traj;
  traj.h = ad::Tensor::zeros({T, K});
  traj.z = ad::Tensor::zeros({T, K + 1});
  ad::Tensor counts = ad::Tensor::zeros({T, M});

  std::vector<double> z_prev(static_cast<size_t>(K + 1), 0.0);
  for (int ti = 0; ti < T; ++ti) {
    std::vector<double> h_row(static_cast<size_t>(K));
    if (K > 0) {
      nn::MapOut fp = nn::fp_locations(t, nets, h_prev, y_prev, s);
      s = fp.state;
      ad::Tensor locs = t.value(fp.out);
      for (int k = 0; k < K; ++k) {
        double h = dist::binconcrete_sample({locs(k), phi}, rng.uniform());
        h = std::min(std::max(h, 1e-6), 1.0 - 1e-6);
        h_row[static_cast<size_t>(k)] = h;
        traj.h(ti, k) = h;
      }
    }
    std::vector<double> z_row(static_cast<size_t>(K + 1));
    for (int k = 0; k <= K; ++k) {
      z_row[static_cast<size_t>(k)] =
          p.nets.a_diag(k) * z_prev[static_cast<size_t>(k)] +
          sigma_p * rng.normal();
      traj.z(ti, k) = z_row[static_cast<size_t>(k)];
    }
    z_prev = z_row;

    ad::Tensor r = rate(theta,
                        K > 0 ? ad::Tensor::vec(h_row) : ad::Tensor::vec({}),
                        ad::Tensor::vec(z_row));
    for (int m = 0; m < M; ++m)
      counts(ti, m) = static_cast<double>(dist::poisson_sample(rng, r(m)));

    if (K > 0) {
      h_prev = t.constant(ad::Tensor::vec(h_row));
      y_prev = normalized_row(t, counts, ti);
    }
  }

  SpikeCountMatrix y;
  y.counts = std::move(counts);
  y.bin_width_seconds = 1.0;
  y.channel_labels = SpikeCountMatrix::default_labels(M);
  return {std::move(traj), std::move(y)};
}

}  // namespace fslds::model
