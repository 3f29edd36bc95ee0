#ifndef PHYSREC_TAPE_HPP
#define PHYSREC_TAPE_HPP

// Define-by-run reverse-mode differentiation over dense matrices.
//
// Values are Eigen::MatrixXd: scalars are 1x1, vectors are n x 1. Binary
// elementwise ops broadcast a 1x1 operand; nothing else broadcasts.

#include <Eigen/Dense>

#include <functional>
#include <vector>

#include "physrec/errors.hpp"

namespace physrec {

class Tape;

/// Handle to a recorded value.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Eigen::MatrixXd& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

/// Maps each upstream cotangent to one cotangent per parent.
using VjpCallback = std::function<std::vector<Eigen::MatrixXd>(const Eigen::MatrixXd& cotangent)>;

class Gradients {
 public:
  explicit Gradients(std::vector<Eigen::MatrixXd> g) : g_(std::move(g)) {}
  const Eigen::MatrixXd& operator[](Var v) const { return g_.at(static_cast<std::size_t>(v.id)); }
  std::size_t size() const { return g_.size(); }

 private:
  std::vector<Eigen::MatrixXd> g_;
};

class Tape {
 public:
  enum class Op {
    leaf, add, sub, mul, div, matvec, matmul, scale, sum, mean, square,
    sigmoid, tanh, relu, exp, softplus, concat, slice, custom
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input. Rejects non-finite values.
  Var leaf(Eigen::MatrixXd value);
  Var scalar(double v);

  /// Records a node whose backward pass calls `vjp` with the incoming cotangent.
  Var custom_node(const std::vector<Var>& parents, Eigen::MatrixXd value, VjpCallback vjp);

  /// Reverse accumulation from a 1x1 loss. Unreached nodes receive zero.
  Gradients backward(Var loss) const;

  const Eigen::MatrixXd& value(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  // Used by the free-function primitives below.
  Var record(Op op, Eigen::MatrixXd value, std::initializer_list<int> parents, double param = 0.0,
             Eigen::Index offset = 0);
  Var record_concat(const std::vector<Var>& parts, Eigen::MatrixXd value);

 private:
  struct Node {
    Op op = Op::leaf;
    Eigen::MatrixXd value;
    int a = -1;
    int b = -1;
    double param = 0.0;
    Eigen::Index offset = 0;
    std::vector<int> many;  // concat and custom parents
    VjpCallback vjp;
  };
  void propagate(const Node& node, const Eigen::MatrixXd& g, std::vector<Eigen::MatrixXd>& grads) const;

  std::vector<Node> nodes_;
};

// Primitives. Mixed Var/constant overloads record the constant as a leaf.
Var add(Var a, Var b);
Var add(Var a, const Eigen::MatrixXd& b);
Var sub(Var a, Var b);
Var sub(Var a, const Eigen::MatrixXd& b);
Var sub(const Eigen::MatrixXd& a, Var b);
Var mul(Var a, Var b);
Var mul(Var a, const Eigen::MatrixXd& b);
Var div(Var a, Var b);
Var matvec(Var m, Var v);
Var matvec(const Eigen::MatrixXd& m, Var v);
Var matmul(Var a, Var b);
Var scale(Var a, double c);
Var sum(Var a);
Var mean(Var a);
Var square(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
Var softplus(Var a);
/// Vertical concatenation of column vectors.
Var concat(const std::vector<Var>& parts);
/// Rows [offset, offset + len) of a column vector.
Var slice(Var a, Eigen::Index offset, Eigen::Index len);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }

/// Max relative error |backward - central difference| / max(1, |fd|) over all coordinates of x.
double grad_check(const std::function<Var(Var)>& f, const Eigen::MatrixXd& x, double eps = 1e-5);

}  // namespace physrec

#endif  // PHYSREC_TAPE_HPP
