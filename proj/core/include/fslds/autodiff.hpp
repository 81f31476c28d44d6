#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fslds/tensor.hpp"

namespace fslds::ad {

class Tape;

// Handle to a value recorded on a tape. Cheap to copy; only meaningful for
// the tape that produced it and until that tape is reset.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

// Reverse-mode tape over dense tensors. Values are computed eagerly when an
// op is recorded; backward() replays the recorded ops in reverse. Nodes and
// their value/adjoint storage live in arenas that keep their capacity across
// reset(), so rebuilding the graph every optimization step does not allocate
// after warmup.
//
// Shape rules: elementwise binary ops require identical shapes, except that
// a one-element operand broadcasts against any tensor. matmul takes a rank-2
// left operand; a rank-1 right operand is treated as a column vector.
// A tape is single-threaded; use one tape per thread.
class Tape {
 public:
  Tape();

  // Leaves. leaf() marks an optimizable parameter (its gradient is read back
  // after backward()); constant() records non-differentiated data.
  Var leaf(const Tensor& t);
  Var constant(const Tensor& t);
  Var constant(double v);

  // Elementwise arithmetic (same shape, or one-element broadcast).
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var add_const(Var a, double c);
  Var mul_const(Var a, double c);
  Var neg(Var a);

  // matmul: A(m×k) · B(k×n). matmul_tn: Aᵀ·B for A stored (k×m).
  // Rank-1 B is a column; rank-1 A in matmul_tn gives a dot product.
  Var matmul(Var a, Var b);
  Var matmul_tn(Var a, Var b);

  // Elementwise transcendentals.
  Var exp(Var a);
  Var log(Var a);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var softplus(Var a);

  // clamp passes gradients only where the input is strictly inside [lo,hi].
  Var clamp(Var a, double lo, double hi);

  Var sum(Var a);                       // full reduction to a scalar
  Var concat(Var a, Var b);             // vectors end-to-end, matrices row-wise
  Var slice(Var a, int start, int len);  // rank-1: elements; rank-2: rows

  // Accumulates adjoints for every node reachable from `loss` (a one-element
  // tensor); leaves that do not reach the loss keep zero gradient.
  void backward(Var loss);

  Tensor value(Var v) const;
  double scalar_value(Var v) const;
  Tensor grad(Var v) const;  // valid after backward()

  // Drops all nodes but keeps arena capacity.
  void reset();
  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  enum class Op : std::uint8_t {
    kLeaf, kConst,
    kAdd, kSub, kMul, kDiv, kAddC, kMulC, kNeg,
    kMatMul, kMatMulTN,
    kExp, kLog, kTanh, kSigmoid, kSoftplus,
    kClamp, kSum, kConcat, kSlice,
  };

  struct Node {
    Op op;
    std::uint8_t rank;
    int a = -1, b = -1;
    int d0 = 1, d1 = 1;   // rank-normalized extents
    int i0 = 0, i1 = 0;   // aux (slice start/len, concat split)
    double x0 = 0, x1 = 0;  // aux (immediate constant, clamp bounds)
    std::size_t off = 0;
  };

  int emit(Op op, std::uint8_t rank, int d0, int d1, int a, int b);
  Var make_leaf(const Tensor& t, Op op);
  Var binary(Op op, Var a, Var b);
  Var unary(Op op, Var a);
  void check_same_tape(Var v) const;
  const Node& node(Var v) const;
  std::vector<int> shape_of(const Node& n) const;
  [[noreturn]] void shape_error(const char* what, const Node& a,
                                const Node& b) const;

  std::vector<Node> nodes_;
  std::vector<double> val_;
  std::vector<double> grad_;
};

// Convenience operators; both operands must live on the same tape.
inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
inline Var operator/(Var a, Var b) { return a.tape->div(a, b); }
inline Var operator+(Var a, double c) { return a.tape->add_const(a, c); }
inline Var operator+(double c, Var a) { return a.tape->add_const(a, c); }
inline Var operator-(Var a, double c) { return a.tape->add_const(a, -c); }
inline Var operator-(double c, Var a) {
  return a.tape->add_const(a.tape->neg(a), c);
}
inline Var operator*(Var a, double c) { return a.tape->mul_const(a, c); }
inline Var operator*(double c, Var a) { return a.tape->mul_const(a, c); }
inline Var operator-(Var a) { return a.tape->neg(a); }

// Central-difference check of an analytic gradient. `f` must be a
// deterministic scalar function of the parameter list (freeze any noise
// before calling). Returns the max over parameter coordinates of
//   |(f(p+eps·e) − f(p−eps·e))/(2·eps) − grad| / (|grad| + 1e-8).
double finite_diff_check(const std::function<double(const std::vector<Tensor>&)>& f,
                         const std::vector<Tensor>& params,
                         const std::vector<Tensor>& grads, double eps);

}  // namespace fslds::ad
