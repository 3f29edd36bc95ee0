#include "physrec/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace physrec {

using Eigen::MatrixXd;

namespace {

bool is_scalar(const MatrixXd& m) { return m.rows() == 1 && m.cols() == 1; }

void require_same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw ContractViolation("tape: operands from different recordings");
}

void require_broadcastable(const MatrixXd& a, const MatrixXd& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return;
  if (is_scalar(a) || is_scalar(b)) return;
  throw ContractViolation(std::string("tape: shape mismatch in ") + op + " (" + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()) + ")");
}

/// Elementwise binary op with 1x1 broadcasting.
template <typename F>
MatrixXd broadcast(const MatrixXd& a, const MatrixXd& b, F f) {
  if (is_scalar(a) && !is_scalar(b)) return MatrixXd::Constant(b.rows(), b.cols(), a(0, 0)).binaryExpr(b, f);
  if (is_scalar(b) && !is_scalar(a)) return a.binaryExpr(MatrixXd::Constant(a.rows(), a.cols(), b(0, 0)), f);
  return a.binaryExpr(b, f);
}

/// Accumulates a cotangent into a parent, summing over broadcast dimensions.
void accumulate(MatrixXd& dst, const MatrixXd& g) {
  if (dst.rows() == g.rows() && dst.cols() == g.cols())
    dst += g;
  else
    dst(0, 0) += g.sum();
}

double sigmoid_scalar(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double softplus_scalar(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

}  // namespace

const MatrixXd& Var::value() const {
  if (tape == nullptr) throw ContractViolation("tape: unbound Var");
  return tape->value(*this);
}

const MatrixXd& Tape::value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }

Var Tape::record(Op op, MatrixXd value, std::initializer_list<int> parents, double param, Eigen::Index offset) {
  Node node;
  node.op = op;
  node.value = std::move(value);
  auto it = parents.begin();
  if (it != parents.end()) node.a = *it++;
  if (it != parents.end()) node.b = *it++;
  node.param = param;
  node.offset = offset;
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record_concat(const std::vector<Var>& parts, MatrixXd value) {
  Node node;
  node.op = Op::concat;
  node.value = std::move(value);
  for (Var p : parts) node.many.push_back(p.id);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(MatrixXd value) {
  if (!value.allFinite()) throw ContractViolation("tape: non-finite leaf value");
  return record(Op::leaf, std::move(value), {});
}

Var Tape::scalar(double v) { return leaf(MatrixXd::Constant(1, 1, v)); }

Var Tape::custom_node(const std::vector<Var>& parents, MatrixXd value, VjpCallback vjp) {
  for (Var p : parents)
    if (p.tape != this) throw ContractViolation("tape: custom node parent from another recording");
  Node node;
  node.op = Op::custom;
  node.value = std::move(value);
  for (Var p : parents) node.many.push_back(p.id);
  node.vjp = std::move(vjp);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::propagate(const Node& node, const MatrixXd& g, std::vector<MatrixXd>& grads) const {
  auto val = [&](int id) -> const MatrixXd& { return nodes_[static_cast<std::size_t>(id)].value; };
  auto acc = [&](int id, const MatrixXd& c) { accumulate(grads[static_cast<std::size_t>(id)], c); };
  const MatrixXd& y = node.value;
  switch (node.op) {
    case Op::leaf:
      break;
    case Op::add:
      acc(node.a, g);
      acc(node.b, g);
      break;
    case Op::sub:
      acc(node.a, g);
      acc(node.b, -g);
      break;
    case Op::mul:
      acc(node.a, broadcast(g, val(node.b), [](double p, double q) { return p * q; }));
      acc(node.b, broadcast(g, val(node.a), [](double p, double q) { return p * q; }));
      break;
    case Op::div: {
      const MatrixXd& b = val(node.b);
      acc(node.a, broadcast(g, b, [](double p, double q) { return p / q; }));
      // d(a/b)/db = -(a/b)/b = -y/b
      MatrixXd yb = broadcast(y, b, [](double p, double q) { return p / q; });
      acc(node.b, -g.cwiseProduct(yb));
      break;
    }
    case Op::matvec:
    case Op::matmul:
      acc(node.a, g * val(node.b).transpose());
      acc(node.b, val(node.a).transpose() * g);
      break;
    case Op::scale:
      acc(node.a, node.param * g);
      break;
    case Op::sum:
      acc(node.a, MatrixXd::Constant(val(node.a).rows(), val(node.a).cols(), g(0, 0)));
      break;
    case Op::mean: {
      const MatrixXd& a = val(node.a);
      acc(node.a, MatrixXd::Constant(a.rows(), a.cols(), g(0, 0) / static_cast<double>(a.size())));
      break;
    }
    case Op::square:
      acc(node.a, 2.0 * val(node.a).cwiseProduct(g));
      break;
    case Op::sigmoid:
      acc(node.a, g.cwiseProduct(y.unaryExpr([](double s) { return s * (1.0 - s); })));
      break;
    case Op::tanh:
      acc(node.a, g.cwiseProduct(y.unaryExpr([](double t) { return 1.0 - t * t; })));
      break;
    case Op::relu:
      // derivative at exactly 0 is 0
      acc(node.a, g.cwiseProduct(val(node.a).unaryExpr([](double x) { return x > 0.0 ? 1.0 : 0.0; })));
      break;
    case Op::exp:
      acc(node.a, g.cwiseProduct(y));
      break;
    case Op::softplus:
      acc(node.a, g.cwiseProduct(val(node.a).unaryExpr(&sigmoid_scalar)));
      break;
    case Op::concat: {
      Eigen::Index off = 0;
      for (int id : node.many) {
        const auto r = val(id).rows();
        acc(id, g.middleRows(off, r));
        off += r;
      }
      break;
    }
    case Op::slice: {
      MatrixXd full = MatrixXd::Zero(val(node.a).rows(), val(node.a).cols());
      full.middleRows(node.offset, g.rows()) = g;
      acc(node.a, full);
      break;
    }
    case Op::custom: {
      const auto cots = node.vjp(g);
      if (cots.size() != node.many.size()) throw ContractViolation("tape: custom node returned wrong number of cotangents");
      for (std::size_t i = 0; i < cots.size(); ++i) {
        const MatrixXd& pv = val(node.many[i]);
        if (cots[i].rows() != pv.rows() || cots[i].cols() != pv.cols())
          throw ContractViolation("tape: custom node cotangent shape mismatch for parent " + std::to_string(i));
        acc(node.many[i], cots[i]);
      }
      break;
    }
  }
}

Gradients Tape::backward(Var loss) const {
  if (loss.tape != this) throw ContractViolation("tape: loss is from another recording");
  const MatrixXd& lv = value(loss);
  if (!is_scalar(lv)) throw ContractViolation("tape: backward requires a 1x1 loss");
  std::vector<MatrixXd> grads(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    grads[i] = MatrixXd::Zero(nodes_[i].value.rows(), nodes_[i].value.cols());
  grads[static_cast<std::size_t>(loss.id)](0, 0) = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    const auto idx = static_cast<std::size_t>(i);
    if (nodes_[idx].op == Op::leaf) continue;
    if (grads[idx].isZero(0.0)) continue;
    propagate(nodes_[idx], grads[idx], grads);
  }
  return Gradients(std::move(grads));
}

// ---------------------------------------------------------------------------

namespace {

Var constant(Tape& t, const MatrixXd& m) { return t.leaf(m); }

template <typename F>
Var unary(Var a, Tape::Op op, F f) {
  return a.tape->record(op, a.value().unaryExpr(f), {a.id});
}

}  // namespace

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_broadcastable(a.value(), b.value(), "add");
  return a.tape->record(Tape::Op::add, broadcast(a.value(), b.value(), [](double p, double q) { return p + q; }), {a.id, b.id});
}
Var add(Var a, const MatrixXd& b) { return add(a, constant(*a.tape, b)); }

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_broadcastable(a.value(), b.value(), "sub");
  return a.tape->record(Tape::Op::sub, broadcast(a.value(), b.value(), [](double p, double q) { return p - q; }), {a.id, b.id});
}
Var sub(Var a, const MatrixXd& b) { return sub(a, constant(*a.tape, b)); }
Var sub(const MatrixXd& a, Var b) { return sub(constant(*b.tape, a), b); }

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_broadcastable(a.value(), b.value(), "mul");
  return a.tape->record(Tape::Op::mul, broadcast(a.value(), b.value(), [](double p, double q) { return p * q; }), {a.id, b.id});
}
Var mul(Var a, const MatrixXd& b) { return mul(a, constant(*a.tape, b)); }

Var div(Var a, Var b) {
  require_same_tape(a, b);
  require_broadcastable(a.value(), b.value(), "div");
  return a.tape->record(Tape::Op::div, broadcast(a.value(), b.value(), [](double p, double q) { return p / q; }), {a.id, b.id});
}

Var matvec(Var m, Var v) {
  require_same_tape(m, v);
  if (v.cols() != 1 || m.cols() != v.rows())
    throw ContractViolation("tape: matvec shape mismatch (" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                            " times " + std::to_string(v.rows()) + "x" + std::to_string(v.cols()) + ")");
  return m.tape->record(Tape::Op::matvec, m.value() * v.value(), {m.id, v.id});
}
Var matvec(const MatrixXd& m, Var v) { return matvec(constant(*v.tape, m), v); }

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  if (a.cols() != b.rows()) throw ContractViolation("tape: matmul inner dimensions differ");
  return a.tape->record(Tape::Op::matmul, a.value() * b.value(), {a.id, b.id});
}

Var scale(Var a, double c) { return a.tape->record(Tape::Op::scale, c * a.value(), {a.id}, c); }

Var sum(Var a) { return a.tape->record(Tape::Op::sum, MatrixXd::Constant(1, 1, a.value().sum()), {a.id}); }

Var mean(Var a) {
  if (a.value().size() == 0) throw ContractViolation("tape: mean of empty value");
  return a.tape->record(Tape::Op::mean, MatrixXd::Constant(1, 1, a.value().mean()), {a.id});
}

Var square(Var a) { return unary(a, Tape::Op::square, [](double x) { return x * x; }); }
Var sigmoid(Var a) { return unary(a, Tape::Op::sigmoid, &sigmoid_scalar); }
Var tanh(Var a) { return unary(a, Tape::Op::tanh, [](double x) { return std::tanh(x); }); }
Var relu(Var a) { return unary(a, Tape::Op::relu, [](double x) { return x > 0.0 ? x : 0.0; }); }
Var exp(Var a) { return unary(a, Tape::Op::exp, [](double x) { return std::exp(x); }); }
Var softplus(Var a) { return unary(a, Tape::Op::softplus, &softplus_scalar); }

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractViolation("tape: concat of nothing");
  Eigen::Index rows = 0;
  for (Var p : parts) {
    require_same_tape(parts.front(), p);
    if (p.cols() != 1) throw ContractViolation("tape: concat expects column vectors");
    rows += p.rows();
  }
  MatrixXd v(rows, 1);
  Eigen::Index off = 0;
  for (Var p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  return parts.front().tape->record_concat(parts, std::move(v));
}

Var slice(Var a, Eigen::Index offset, Eigen::Index len) {
  if (a.cols() != 1 || offset < 0 || len < 0 || offset + len > a.rows())
    throw ContractViolation("tape: slice out of range");
  return a.tape->record(Tape::Op::slice, a.value().middleRows(offset, len), {a.id}, 0.0, offset);
}

double grad_check(const std::function<Var(Var)>& f, const MatrixXd& x, double eps) {
  if (!(eps > 0.0)) throw ContractViolation("grad_check: eps must be positive");
  Tape tape;
  Var in = tape.leaf(x);
  Var out = f(in);
  const MatrixXd g = tape.backward(out)[in];
  auto eval = [&](const MatrixXd& xv) {
    Tape t;
    return f(t.leaf(xv)).value()(0, 0);
  };
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    MatrixXd xp = x, xm = x;
    xp(i) += eps;
    xm(i) -= eps;
    const double fd = (eval(xp) - eval(xm)) / (2.0 * eps);
    worst = std::max(worst, std::abs(g(i) - fd) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

}  // namespace physrec
