#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>

#include "fslds/autodiff.hpp"
#include "fslds/tensor.hpp"

namespace fslds::nn {

// Single-layer GRU cell. W_* act on the input, U_* on the hidden state.
struct GruCellParams {
  int input_dim = 0;
  int hidden_dim = 64;
  ad::Tensor W_z, W_r, W_h;  // hidden x input
  ad::Tensor U_z, U_r, U_h;  // hidden x hidden
  ad::Tensor b_z, b_r, b_h;  // hidden

  static GruCellParams zeros(int input_dim, int hidden_dim);
};

struct LinearHead {
  ad::Tensor W;  // out x hidden
  ad::Tensor b;  // out

  static LinearHead zeros(int out_dim, int hidden_dim);
};

struct NetDims {
  int K = 0;       // gated factors
  int M = 0;       // observed channels
  int hidden = 64;
};

// The three recurrent maps plus the linear-Gaussian transition parameters.
// f_p: (h_prev, y_prev) -> K prior gate log-locations
// f_q: (h_prev, y_curr) -> K posterior gate log-locations
// f_z: (z_prev, y_curr) -> K+1 posterior state means
struct NetParams {
  NetDims dims;
  GruCellParams gru_p, gru_q, gru_z;
  LinearHead head_p, head_q, head_z;
  ad::Tensor log_sigma_p;  // scalar
  ad::Tensor log_sigma_q;  // scalar
  ad::Tensor a_diag;       // K+1 per-channel transition coefficients
};

// GRU weights ~ U(+-1/sqrt(hidden)), biases and heads zero,
// log_sigma_p = log_sigma_q = log(0.1), a_diag = 0.95.
NetParams init_params(std::uint64_t seed, const NetDims& dims);

// Deterministic traversal of every tensor in the struct; used for
// serialization, optimizer state, and tape binding. F: (const std::string&,
// ad::Tensor&) or a compatible const overload.
template <class P, class F>
void visit_tensors(P&& p, F&& f) {
  auto cell = [&](const char* tag, auto&& g) {
    std::string s(tag);
    f(s + ".W_z", g.W_z);
    f(s + ".W_r", g.W_r);
    f(s + ".W_h", g.W_h);
    f(s + ".U_z", g.U_z);
    f(s + ".U_r", g.U_r);
    f(s + ".U_h", g.U_h);
    f(s + ".b_z", g.b_z);
    f(s + ".b_r", g.b_r);
    f(s + ".b_h", g.b_h);
  };
  cell("gru_p", p.gru_p);
  cell("gru_q", p.gru_q);
  cell("gru_z", p.gru_z);
  f(std::string("head_p.W"), p.head_p.W);
  f(std::string("head_p.b"), p.head_p.b);
  f(std::string("head_q.W"), p.head_q.W);
  f(std::string("head_q.b"), p.head_q.b);
  f(std::string("head_z.W"), p.head_z.W);
  f(std::string("head_z.b"), p.head_z.b);
  f(std::string("log_sigma_p"), p.log_sigma_p);
  f(std::string("log_sigma_q"), p.log_sigma_q);
  f(std::string("a_diag"), p.a_diag);
}

// ---- tape bindings ----

struct GruCellVars {
  ad::Var W_z, W_r, W_h, U_z, U_r, U_h, b_z, b_r, b_h;
};

struct HeadVars {
  ad::Var W, b;
};

// Field names mirror NetParams so visit_tensors works on either.
struct NetVars {
  NetDims dims;
  GruCellVars gru_p, gru_q, gru_z;
  HeadVars head_p, head_q, head_z;
  ad::Var log_sigma_p, log_sigma_q, a_diag;
};

// bind() records leaves (gradients flow); bind_const() records constants
// (forward simulation / frozen evaluation).
NetVars bind(ad::Tape& t, const NetParams& p);
NetVars bind_const(ad::Tape& t, const NetParams& p);

GruCellVars bind(ad::Tape& t, const GruCellParams& p);
GruCellVars bind_const(ad::Tape& t, const GruCellParams& p);

// r = sigmoid(W_r x + U_r s + b_r), u = sigmoid(W_z x + U_z s + b_z),
// c = tanh(W_h x + U_h (r.s) + b_h), s' = (1-u).s + u.c
ad::Var gru_step(ad::Tape& t, const GruCellVars& g, ad::Var x, ad::Var s);

struct MapOut {
  ad::Var out;    // head output
  ad::Var state;  // updated hidden state
};

// Inputs are concatenations [gates-or-states; normalized counts]. Count
// vectors must already be normalized (see normalize_count).
MapOut fp_locations(ad::Tape& t, const NetVars& n, ad::Var h_prev,
                    ad::Var y_prev_norm, ad::Var s);
MapOut fq_locations(ad::Tape& t, const NetVars& n, ad::Var h_prev,
                    ad::Var y_curr_norm, ad::Var s);
MapOut fz_means(ad::Tape& t, const NetVars& n, ad::Var z_prev,
                ad::Var y_curr_norm, ad::Var s);

// Networks consume log(1+y); raw counts are heavy-tailed enough to saturate
// the gates. The Poisson likelihood always sees raw counts.
inline double normalize_count(double y) { return std::log1p(y); }

}  // namespace fslds::nn
