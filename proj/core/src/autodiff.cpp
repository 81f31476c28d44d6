#include "fslds/autodiff.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

namespace fslds::ad {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  // log(1+exp(x)) without overflow on either side
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

void normalize_shape(const Tensor& t, std::uint8_t& rank, int& d0, int& d1) {
  if (t.rank() > 2)
    throw std::invalid_argument("tape supports rank <= 2, got shape " +
                                t.shape_str());
  rank = static_cast<std::uint8_t>(t.rank());
  d0 = t.rows();
  d1 = t.cols();
}

}  // namespace

Tape::Tape() {
  nodes_.reserve(1024);
  val_.reserve(4096);
}

void Tape::reset() {
  nodes_.clear();
  val_.clear();
  grad_.clear();
}

int Tape::emit(Op op, std::uint8_t rank, int d0, int d1, int a, int b) {
  Node n;
  n.op = op;
  n.rank = rank;
  n.d0 = d0;
  n.d1 = d1;
  n.a = a;
  n.b = b;
  n.off = val_.size();
  val_.resize(val_.size() + static_cast<std::size_t>(d0) * d1);
  nodes_.push_back(n);
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::check_same_tape(Var v) const {
  if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw std::invalid_argument("Var does not belong to this tape");
}

const Tape::Node& Tape::node(Var v) const {
  check_same_tape(v);
  return nodes_[v.id];
}

std::vector<int> Tape::shape_of(const Node& n) const {
  if (n.rank == 0) return {};
  if (n.rank == 1) return {n.d0};
  return {n.d0, n.d1};
}

void Tape::shape_error(const char* what, const Node& a, const Node& b) const {
  throw std::invalid_argument(std::string(what) + ": shapes " +
                              Tensor::shape_str(shape_of(a)) + " and " +
                              Tensor::shape_str(shape_of(b)) +
                              " do not conform");
}

Var Tape::make_leaf(const Tensor& t, Op op) {
  std::uint8_t rank;
  int d0, d1;
  normalize_shape(t, rank, d0, d1);
  const int id = emit(op, rank, d0, d1, -1, -1);
  std::memcpy(val_.data() + nodes_[id].off, t.data.data(),
              t.data.size() * sizeof(double));
  return Var{this, id};
}

Var Tape::leaf(const Tensor& t) { return make_leaf(t, Op::kLeaf); }
Var Tape::constant(const Tensor& t) { return make_leaf(t, Op::kConst); }
Var Tape::constant(double v) { return make_leaf(Tensor::scalar(v), Op::kConst); }

Var Tape::binary(Op op, Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  if (b.tape != this) throw std::invalid_argument("operands on different tapes");
  const Node na = nodes_[a.id];
  const Node nb = nodes_[b.id];
  const int len_a = na.d0 * na.d1;
  const int len_b = nb.d0 * nb.d1;
  const bool same = na.rank == nb.rank && na.d0 == nb.d0 && na.d1 == nb.d1;
  if (!same && len_a != 1 && len_b != 1)
    shape_error("elementwise op", na, nb);

  const Node& big = (len_a == 1 && len_b != 1) ? nb : na;
  const int id = emit(op, big.rank, big.d0, big.d1, a.id, b.id);
  double* out = val_.data() + nodes_[id].off;
  const double* pa = val_.data() + nodes_[a.id].off;
  const double* pb = val_.data() + nodes_[b.id].off;
  const int n = big.d0 * big.d1;
  const int sa = len_a == 1 ? 0 : 1;
  const int sb = len_b == 1 ? 0 : 1;
  switch (op) {
    case Op::kAdd:
      for (int i = 0; i < n; ++i) out[i] = pa[i * sa] + pb[i * sb];
      break;
    case Op::kSub:
      for (int i = 0; i < n; ++i) out[i] = pa[i * sa] - pb[i * sb];
      break;
    case Op::kMul:
      for (int i = 0; i < n; ++i) out[i] = pa[i * sa] * pb[i * sb];
      break;
    case Op::kDiv:
      for (int i = 0; i < n; ++i) out[i] = pa[i * sa] / pb[i * sb];
      break;
    default:
      throw std::logic_error("binary: bad op");
  }
  return Var{this, id};
}

Var Tape::add(Var a, Var b) { return binary(Op::kAdd, a, b); }
Var Tape::sub(Var a, Var b) { return binary(Op::kSub, a, b); }
Var Tape::mul(Var a, Var b) { return binary(Op::kMul, a, b); }
Var Tape::div(Var a, Var b) { return binary(Op::kDiv, a, b); }

Var Tape::unary(Op op, Var a) {
  check_same_tape(a);
  const Node na = nodes_[a.id];
  const int id = emit(op, na.rank, na.d0, na.d1, a.id, -1);
  double* out = val_.data() + nodes_[id].off;
  const double* pa = val_.data() + nodes_[a.id].off;
  const int n = na.d0 * na.d1;
  switch (op) {
    case Op::kNeg:
      for (int i = 0; i < n; ++i) out[i] = -pa[i];
      break;
    case Op::kExp:
      for (int i = 0; i < n; ++i) out[i] = std::exp(pa[i]);
      break;
    case Op::kLog:
      for (int i = 0; i < n; ++i) out[i] = std::log(pa[i]);
      break;
    case Op::kTanh:
      for (int i = 0; i < n; ++i) out[i] = std::tanh(pa[i]);
      break;
    case Op::kSigmoid:
      for (int i = 0; i < n; ++i) out[i] = stable_sigmoid(pa[i]);
      break;
    case Op::kSoftplus:
      for (int i = 0; i < n; ++i) out[i] = stable_softplus(pa[i]);
      break;
    default:
      throw std::logic_error("unary: bad op");
  }
  return Var{this, id};
}

Var Tape::neg(Var a) { return unary(Op::kNeg, a); }
Var Tape::exp(Var a) { return unary(Op::kExp, a); }
Var Tape::log(Var a) { return unary(Op::kLog, a); }
Var Tape::tanh(Var a) { return unary(Op::kTanh, a); }
Var Tape::sigmoid(Var a) { return unary(Op::kSigmoid, a); }
Var Tape::softplus(Var a) { return unary(Op::kSoftplus, a); }

Var Tape::add_const(Var a, double c) {
  check_same_tape(a);
  const Node na = nodes_[a.id];
  const int id = emit(Op::kAddC, na.rank, na.d0, na.d1, a.id, -1);
  nodes_[id].x0 = c;
  double* out = val_.data() + nodes_[id].off;
  const double* pa = val_.data() + nodes_[a.id].off;
  for (int i = 0; i < na.d0 * na.d1; ++i) out[i] = pa[i] + c;
  return Var{this, id};
}

Var Tape::mul_const(Var a, double c) {
  check_same_tape(a);
  const Node na = nodes_[a.id];
  const int id = emit(Op::kMulC, na.rank, na.d0, na.d1, a.id, -1);
  nodes_[id].x0 = c;
  double* out = val_.data() + nodes_[id].off;
  const double* pa = val_.data() + nodes_[a.id].off;
  for (int i = 0; i < na.d0 * na.d1; ++i) out[i] = pa[i] * c;
  return Var{this, id};
}

Var Tape::clamp(Var a, double lo, double hi) {
  check_same_tape(a);
  const Node na = nodes_[a.id];
  const int id = emit(Op::kClamp, na.rank, na.d0, na.d1, a.id, -1);
  nodes_[id].x0 = lo;
  nodes_[id].x1 = hi;
  double* out = val_.data() + nodes_[id].off;
  const double* pa = val_.data() + nodes_[a.id].off;
  for (int i = 0; i < na.d0 * na.d1; ++i)
    out[i] = pa[i] < lo ? lo : (pa[i] > hi ? hi : pa[i]);
  return Var{this, id};
}

Var Tape::matmul(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  const Node na = nodes_[a.id];
  const Node nb = nodes_[b.id];
  if (na.rank != 2) shape_error("matmul (left operand must be rank 2)", na, nb);
  const int m = na.d0, k = na.d1;
  const int kb = nb.rank == 1 ? nb.d0 : nb.d0;
  const int n = nb.rank == 1 ? 1 : nb.d1;
  if (nb.rank == 0 || kb != k) shape_error("matmul", na, nb);
  const std::uint8_t rank = nb.rank == 1 ? 1 : 2;
  const int id = emit(Op::kMatMul, rank, m, n, a.id, b.id);
  double* out = val_.data() + nodes_[id].off;
  const double* pa = val_.data() + nodes_[a.id].off;
  const double* pb = val_.data() + nodes_[b.id].off;
  for (int i = 0; i < m; ++i) {
    const double* arow = pa + static_cast<std::size_t>(i) * k;
    if (n == 1) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += arow[p] * pb[p];
      out[i] = acc;
    } else {
      double* orow = out + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] = 0.0;
      for (int p = 0; p < k; ++p) {
        const double av = arow[p];
        const double* brow = pb + static_cast<std::size_t>(p) * n;
        for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  }
  return Var{this, id};
}

Var Tape::matmul_tn(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  const Node na = nodes_[a.id];
  const Node nb = nodes_[b.id];
  // A stored (k×m), used as Aᵀ; rank-1 A means m == 1 (dot product with b).
  const int k = na.d0;
  const int m = na.rank == 1 ? 1 : na.d1;
  const int kb = nb.d0;
  const int n = nb.rank == 1 ? 1 : nb.d1;
  if (na.rank == 0 || nb.rank == 0 || kb != k) shape_error("matmul_tn", na, nb);
  std::uint8_t rank = 2;
  if (na.rank == 1 && nb.rank == 1) rank = 0;
  else if (nb.rank == 1) rank = 1;
  const int id = emit(Op::kMatMulTN, rank, rank == 0 ? 1 : m, rank == 2 ? n : 1,
                      a.id, b.id);
  double* out = val_.data() + nodes_[id].off;
  const double* pa = val_.data() + nodes_[a.id].off;
  const double* pb = val_.data() + nodes_[b.id].off;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] = 0.0;
  for (int p = 0; p < k; ++p) {
    const double* arow = pa + static_cast<std::size_t>(p) * m;
    const double* brow = pb + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = arow[i];
      double* orow = out + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return Var{this, id};
}

Var Tape::sum(Var a) {
  check_same_tape(a);
  const Node na = nodes_[a.id];
  const int id = emit(Op::kSum, 0, 1, 1, a.id, -1);
  const double* pa = val_.data() + nodes_[a.id].off;
  double acc = 0.0;
  for (int i = 0; i < na.d0 * na.d1; ++i) acc += pa[i];
  val_[nodes_[id].off] = acc;
  return Var{this, id};
}

Var Tape::concat(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  const Node na = nodes_[a.id];
  const Node nb = nodes_[b.id];
  int id;
  if (na.rank <= 1 && nb.rank <= 1) {
    const int la = na.d0 * na.d1, lb = nb.d0 * nb.d1;
    id = emit(Op::kConcat, 1, la + lb, 1, a.id, b.id);
    nodes_[id].i0 = la;
  } else if (na.rank == 2 && nb.rank == 2 && na.d1 == nb.d1) {
    id = emit(Op::kConcat, 2, na.d0 + nb.d0, na.d1, a.id, b.id);
    nodes_[id].i0 = na.d0 * na.d1;
  } else {
    shape_error("concat", na, nb);
  }
  double* out = val_.data() + nodes_[id].off;
  const double* pa = val_.data() + nodes_[a.id].off;
  const double* pb = val_.data() + nodes_[b.id].off;
  const int la = nodes_[id].i0;
  const int lb = nodes_[id].d0 * nodes_[id].d1 - la;
  std::memcpy(out, pa, la * sizeof(double));
  std::memcpy(out + la, pb, lb * sizeof(double));
  return Var{this, id};
}

Var Tape::slice(Var a, int start, int len) {
  check_same_tape(a);
  const Node na = nodes_[a.id];
  if (na.rank == 0 || start < 0 || len < 0 || start + len > na.d0)
    throw std::invalid_argument(
        "slice: range [" + std::to_string(start) + "," +
        std::to_string(start + len) + ") out of bounds for shape " +
        Tensor::shape_str(shape_of(na)));
  const int id = emit(Op::kSlice, na.rank, len, na.d1, a.id, -1);
  nodes_[id].i0 = start * na.d1;
  double* out = val_.data() + nodes_[id].off;
  const double* pa = val_.data() + nodes_[a.id].off + nodes_[id].i0;
  std::memcpy(out, pa, static_cast<std::size_t>(len) * na.d1 * sizeof(double));
  return Var{this, id};
}

Tensor Tape::value(Var v) const {
  const Node& n = node(v);
  Tensor t;
  t.shape = shape_of(n);
  t.data.assign(val_.begin() + n.off, val_.begin() + n.off + n.d0 * n.d1);
  return t;
}

double Tape::scalar_value(Var v) const {
  const Node& n = node(v);
  if (n.d0 * n.d1 != 1)
    throw std::invalid_argument("scalar_value: node has shape " +
                                Tensor::shape_str(shape_of(n)));
  return val_[n.off];
}

Tensor Tape::grad(Var v) const {
  const Node& n = node(v);
  if (grad_.size() != val_.size())
    throw std::logic_error("grad: call backward() first");
  Tensor t;
  t.shape = shape_of(n);
  t.data.assign(grad_.begin() + n.off, grad_.begin() + n.off + n.d0 * n.d1);
  return t;
}

void Tape::backward(Var loss) {
  const Node& ln = node(loss);
  if (ln.d0 * ln.d1 != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                Tensor::shape_str(shape_of(ln)));
  grad_.assign(val_.size(), 0.0);
  grad_[ln.off] = 1.0;

  for (int idx = static_cast<int>(nodes_.size()) - 1; idx >= 0; --idx) {
    const Node& n = nodes_[idx];
    const int len = n.d0 * n.d1;
    const double* g = grad_.data() + n.off;
    const double* v = val_.data() + n.off;
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConst:
        break;
      case Op::kAdd:
      case Op::kSub:
      case Op::kMul:
      case Op::kDiv: {
        const Node& na = nodes_[n.a];
        const Node& nb = nodes_[n.b];
        const int la = na.d0 * na.d1, lb = nb.d0 * nb.d1;
        const int sa = la == 1 ? 0 : 1, sb = lb == 1 ? 0 : 1;
        double* ga = grad_.data() + na.off;
        double* gb = grad_.data() + nb.off;
        const double* pa = val_.data() + na.off;
        const double* pb = val_.data() + nb.off;
        switch (n.op) {
          case Op::kAdd:
            for (int i = 0; i < len; ++i) {
              ga[i * sa] += g[i];
              gb[i * sb] += g[i];
            }
            break;
          case Op::kSub:
            for (int i = 0; i < len; ++i) {
              ga[i * sa] += g[i];
              gb[i * sb] -= g[i];
            }
            break;
          case Op::kMul:
            for (int i = 0; i < len; ++i) {
              ga[i * sa] += g[i] * pb[i * sb];
              gb[i * sb] += g[i] * pa[i * sa];
            }
            break;
          case Op::kDiv:
            for (int i = 0; i < len; ++i) {
              const double inv_b = 1.0 / pb[i * sb];
              ga[i * sa] += g[i] * inv_b;
              gb[i * sb] -= g[i] * v[i] * inv_b;
            }
            break;
          default:
            break;
        }
        break;
      }
      case Op::kAddC: {
        double* ga = grad_.data() + nodes_[n.a].off;
        for (int i = 0; i < len; ++i) ga[i] += g[i];
        break;
      }
      case Op::kMulC: {
        double* ga = grad_.data() + nodes_[n.a].off;
        for (int i = 0; i < len; ++i) ga[i] += g[i] * n.x0;
        break;
      }
      case Op::kNeg: {
        double* ga = grad_.data() + nodes_[n.a].off;
        for (int i = 0; i < len; ++i) ga[i] -= g[i];
        break;
      }
      case Op::kExp: {
        double* ga = grad_.data() + nodes_[n.a].off;
        for (int i = 0; i < len; ++i) ga[i] += g[i] * v[i];
        break;
      }
      case Op::kLog: {
        double* ga = grad_.data() + nodes_[n.a].off;
        const double* pa = val_.data() + nodes_[n.a].off;
        for (int i = 0; i < len; ++i) ga[i] += g[i] / pa[i];
        break;
      }
      case Op::kTanh: {
        double* ga = grad_.data() + nodes_[n.a].off;
        for (int i = 0; i < len; ++i) ga[i] += g[i] * (1.0 - v[i] * v[i]);
        break;
      }
      case Op::kSigmoid: {
        double* ga = grad_.data() + nodes_[n.a].off;
        for (int i = 0; i < len; ++i) ga[i] += g[i] * v[i] * (1.0 - v[i]);
        break;
      }
      case Op::kSoftplus: {
        double* ga = grad_.data() + nodes_[n.a].off;
        const double* pa = val_.data() + nodes_[n.a].off;
        for (int i = 0; i < len; ++i) ga[i] += g[i] * stable_sigmoid(pa[i]);
        break;
      }
      case Op::kClamp: {
        double* ga = grad_.data() + nodes_[n.a].off;
        const double* pa = val_.data() + nodes_[n.a].off;
        for (int i = 0; i < len; ++i)
          if (pa[i] > n.x0 && pa[i] < n.x1) ga[i] += g[i];
        break;
      }
      case Op::kMatMul: {
        const Node& na = nodes_[n.a];
        const Node& nb = nodes_[n.b];
        const int m = na.d0, k = na.d1, cols = n.d1;
        double* ga = grad_.data() + na.off;
        double* gb = grad_.data() + nb.off;
        const double* pa = val_.data() + na.off;
        const double* pb = val_.data() + nb.off;
        // dA += g · Bᵀ ; dB += Aᵀ · g
        for (int i = 0; i < m; ++i) {
          const double* grow = g + static_cast<std::size_t>(i) * cols;
          double* garow = ga + static_cast<std::size_t>(i) * k;
          const double* arow = pa + static_cast<std::size_t>(i) * k;
          if (cols == 1) {
            const double gv = grow[0];
            for (int p = 0; p < k; ++p) {
              garow[p] += gv * pb[p];
              gb[p] += arow[p] * gv;
            }
          } else {
            for (int p = 0; p < k; ++p) {
              const double* brow = pb + static_cast<std::size_t>(p) * cols;
              double* gbrow = gb + static_cast<std::size_t>(p) * cols;
              double acc = 0.0;
              const double av = arow[p];
              for (int j = 0; j < cols; ++j) {
                acc += grow[j] * brow[j];
                gbrow[j] += av * grow[j];
              }
              garow[p] += acc;
            }
          }
        }
        break;
      }
      case Op::kMatMulTN: {
        const Node& na = nodes_[n.a];
        const Node& nb = nodes_[n.b];
        const int k = na.d0;
        const int m = na.rank == 1 ? 1 : na.d1;
        const int cols = nb.rank == 1 ? 1 : nb.d1;
        double* ga = grad_.data() + na.off;
        double* gb = grad_.data() + nb.off;
        const double* pa = val_.data() + na.off;
        const double* pb = val_.data() + nb.off;
        // C = Aᵀ·B: dA += B · gᵀ ; dB += A · g
        for (int p = 0; p < k; ++p) {
          const double* brow = pb + static_cast<std::size_t>(p) * cols;
          const double* arow = pa + static_cast<std::size_t>(p) * m;
          double* garow = ga + static_cast<std::size_t>(p) * m;
          double* gbrow = gb + static_cast<std::size_t>(p) * cols;
          for (int i = 0; i < m; ++i) {
            const double* grow = g + static_cast<std::size_t>(i) * cols;
            double acc = 0.0;
            for (int j = 0; j < cols; ++j) {
              acc += brow[j] * grow[j];
              gbrow[j] += arow[i] * grow[j];
            }
            garow[i] += acc;
          }
        }
        break;
      }
      case Op::kSum: {
        const Node& na = nodes_[n.a];
        double* ga = grad_.data() + na.off;
        const double gv = g[0];
        for (int i = 0; i < na.d0 * na.d1; ++i) ga[i] += gv;
        break;
      }
      case Op::kConcat: {
        const Node& na = nodes_[n.a];
        const Node& nb = nodes_[n.b];
        double* ga = grad_.data() + na.off;
        double* gb = grad_.data() + nb.off;
        const int la = n.i0;
        for (int i = 0; i < la; ++i) ga[i] += g[i];
        for (int i = 0; i < nb.d0 * nb.d1; ++i) gb[i] += g[la + i];
        break;
      }
      case Op::kSlice: {
        double* ga = grad_.data() + nodes_[n.a].off + n.i0;
        for (int i = 0; i < len; ++i) ga[i] += g[i];
        break;
      }
    }
  }
}

double finite_diff_check(
    const std::function<double(const std::vector<Tensor>&)>& f,
    const std::vector<Tensor>& params, const std::vector<Tensor>& grads,
    double eps) {
  if (eps <= 0.0) throw std::invalid_argument("finite_diff_check: eps <= 0");
  if (params.size() != grads.size())
    throw std::invalid_argument("finite_diff_check: params/grads mismatch");
  std::vector<Tensor> work = params;
  double worst = 0.0;
  for (std::size_t p = 0; p < work.size(); ++p) {
    if (!params[p].same_shape(grads[p]))
      throw std::invalid_argument("finite_diff_check: grad shape mismatch");
    for (int i = 0; i < work[p].numel(); ++i) {
      const double saved = work[p].data[i];
      work[p].data[i] = saved + eps;
      const double fp = f(work);
      work[p].data[i] = saved - eps;
      const double fm = f(work);
      work[p].data[i] = saved;
      const double fd = (fp - fm) / (2.0 * eps);
      const double g = grads[p].data[i];
      const double err = std::abs(fd - g) / (std::abs(g) + 1e-8);
      if (err > worst) worst = err;
    }
  }
  return worst;
}

}  // namespace fslds::ad
