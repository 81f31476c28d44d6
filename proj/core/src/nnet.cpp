#include "fslds/nnet.hpp"

#include <cmath>
#include <stdexcept>

#include "fslds/rng.hpp"

namespace fslds::nn {

GruCellParams GruCellParams::zeros(int input_dim, int hidden_dim) {
  GruCellParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.W_z = ad::Tensor::zeros({hidden_dim, input_dim});
  p.W_r = ad::Tensor::zeros({hidden_dim, input_dim});
  p.W_h = ad::Tensor::zeros({hidden_dim, input_dim});
  p.U_z = ad::Tensor::zeros({hidden_dim, hidden_dim});
  p.U_r = ad::Tensor::zeros({hidden_dim, hidden_dim});
  p.U_h = ad::Tensor::zeros({hidden_dim, hidden_dim});
  p.b_z = ad::Tensor::zeros({hidden_dim});
  p.b_r = ad::Tensor::zeros({hidden_dim});
  p.b_h = ad::Tensor::zeros({hidden_dim});
  return p;
}

LinearHead LinearHead::zeros(int out_dim, int hidden_dim) {
  LinearHead h;
  h.W = ad::Tensor::zeros({out_dim, hidden_dim});
  h.b = ad::Tensor::zeros({out_dim});
  return h;
}

namespace {

void fill_uniform(Rng& rng, double bound, ad::Tensor& t) {
  for (double& v : t.data) v = rng.uniform(-bound, bound);
}

}  // namespace

NetParams init_params(std::uint64_t seed, const NetDims& dims) {
  if (dims.K < 0 || dims.M <= 0 || dims.hidden <= 0)
    throw std::invalid_argument("init_params: bad dims");
  NetParams p;
  p.dims = dims;
  const int H = dims.hidden;
  p.gru_p = GruCellParams::zeros(dims.K + dims.M, H);
  p.gru_q = GruCellParams::zeros(dims.K + dims.M, H);
  p.gru_z = GruCellParams::zeros(dims.K + 1 + dims.M, H);
  p.head_p = LinearHead::zeros(dims.K, H);
  p.head_q = LinearHead::zeros(dims.K, H);
  p.head_z = LinearHead::zeros(dims.K + 1, H);
  p.log_sigma_p = ad::Tensor::scalar(std::log(0.1));
  p.log_sigma_q = ad::Tensor::scalar(std::log(0.1));
  p.a_diag = ad::Tensor::full({dims.K + 1}, 0.95);

  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(H));
  for (GruCellParams* g : {&p.gru_p, &p.gru_q, &p.gru_z}) {
    fill_uniform(rng, bound, g->W_z);
    fill_uniform(rng, bound, g->W_r);
    fill_uniform(rng, bound, g->W_h);
    fill_uniform(rng, bound, g->U_z);
    fill_uniform(rng, bound, g->U_r);
    fill_uniform(rng, bound, g->U_h);
  }
  return p;
}

GruCellVars bind(ad::Tape& t, const GruCellParams& p) {
  return {t.leaf(p.W_z), t.leaf(p.W_r), t.leaf(p.W_h),
          t.leaf(p.U_z), t.leaf(p.U_r), t.leaf(p.U_h),
          t.leaf(p.b_z), t.leaf(p.b_r), t.leaf(p.b_h)};
}

GruCellVars bind_const(ad::Tape& t, const GruCellParams& p) {
  return {t.constant(p.W_z), t.constant(p.W_r), t.constant(p.W_h),
          t.constant(p.U_z), t.constant(p.U_r), t.constant(p.U_h),
          t.constant(p.b_z), t.constant(p.b_r), t.constant(p.b_h)};
}

NetVars bind(ad::Tape& t, const NetParams& p) {
  NetVars v;
  v.dims = p.dims;
  v.gru_p = bind(t, p.gru_p);
  v.gru_q = bind(t, p.gru_q);
  v.gru_z = bind(t, p.gru_z);
  v.head_p = {t.leaf(p.head_p.W), t.leaf(p.head_p.b)};
  v.head_q = {t.leaf(p.head_q.W), t.leaf(p.head_q.b)};
  v.head_z = {t.leaf(p.head_z.W), t.leaf(p.head_z.b)};
  v.log_sigma_p = t.leaf(p.log_sigma_p);
  v.log_sigma_q = t.leaf(p.log_sigma_q);
  v.a_diag = t.leaf(p.a_diag);
  return v;
}

NetVars bind_const(ad::Tape& t, const NetParams& p) {
  NetVars v;
  v.dims = p.dims;
  v.gru_p = bind_const(t, p.gru_p);
  v.gru_q = bind_const(t, p.gru_q);
  v.gru_z = bind_const(t, p.gru_z);
  v.head_p = {t.constant(p.head_p.W), t.constant(p.head_p.b)};
  v.head_q = {t.constant(p.head_q.W), t.constant(p.head_q.b)};
  v.head_z = {t.constant(p.head_z.W), t.constant(p.head_z.b)};
  v.log_sigma_p = t.constant(p.log_sigma_p);
  v.log_sigma_q = t.constant(p.log_sigma_q);
  v.a_diag = t.constant(p.a_diag);
  return v;
}

ad::Var gru_step(ad::Tape& t, const GruCellVars& g, ad::Var x, ad::Var s) {
  ad::Var r = t.sigmoid(t.add(t.add(t.matmul(g.W_r, x), t.matmul(g.U_r, s)),
                              g.b_r));
  ad::Var u = t.sigmoid(t.add(t.add(t.matmul(g.W_z, x), t.matmul(g.U_z, s)),
                              g.b_z));
  ad::Var c = t.tanh(t.add(t.add(t.matmul(g.W_h, x),
                                 t.matmul(g.U_h, t.mul(r, s))),
                           g.b_h));
  // (1-u).s + u.c, written as s + u.(c-s)
  return t.add(s, t.mul(u, t.sub(c, s)));
}

namespace {

MapOut run_map(ad::Tape& t, const GruCellVars& g, const HeadVars& h,
               ad::Var part, ad::Var y_norm, ad::Var s) {
  ad::Var x = t.concat(part, y_norm);
  ad::Var s2 = gru_step(t, g, x, s);
  ad::Var out = t.add(t.matmul(h.W, s2), h.b);
  return {out, s2};
}

}  // namespace

MapOut fp_locations(ad::Tape& t, const NetVars& n, ad::Var h_prev,
                    ad::Var y_prev_norm, ad::Var s) {
  return run_map(t, n.gru_p, n.head_p, h_prev, y_prev_norm, s);
}

MapOut fq_locations(ad::Tape& t, const NetVars& n, ad::Var h_prev,
                    ad::Var y_curr_norm, ad::Var s) {
  return run_map(t, n.gru_q, n.head_q, h_prev, y_curr_norm, s);
}

MapOut fz_means(ad::Tape& t, const NetVars& n, ad::Var z_prev,
                ad::Var y_curr_norm, ad::Var s) {
  return run_map(t, n.gru_z, n.head_z, z_prev, y_curr_norm, s);
}

}  // namespace fslds::nn
