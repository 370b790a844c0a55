#include "fsr/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fsr/errors.hpp"

namespace fsr {
namespace {

double selu_value(double x) {
  return x > 0.0 ? kSeluScale * x : kSeluScale * kSeluAlpha * std::expm1(x);
}

double selu_slope(double x) {
  return x > 0.0 ? kSeluScale : kSeluScale * kSeluAlpha * std::exp(x);
}

double softplus_value(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename F>
Matrix map(const Matrix& m, F&& f) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = f(m[i]);
  return out;
}

template <typename F>
Matrix zip(const Matrix& a, const Matrix& b, F&& f) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

}  // namespace

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) {
    throw ContractError("tape handle " + std::to_string(v.id) + " out of range");
  }
  return nodes_[v.id];
}

Var Tape::record(Op op, std::initializer_list<Var> parents, Matrix value, double scalar,
                 std::size_t offset) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.scalar = scalar;
  n.offset = offset;
  n.requires_grad = op == Op::kParameter;
  for (Var p : parents) {
    n.parents[n.n_parents++] = p.id;
    n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
  }
  nodes_.push_back(std::move(n));
  has_gradients_ = false;
  return Var{nodes_.size() - 1};
}

Var Tape::unary(Op op, Var x, Matrix value, double scalar) {
  return record(op, {x}, std::move(value), scalar);
}

void Tape::check_same_shape(Var a, Var b, const char* what) const {
  const Matrix& va = node(a).value;
  const Matrix& vb = node(b).value;
  if (!va.same_shape(vb)) {
    throw DimensionError(std::string(what) + ": " + va.shape_string() + " vs " +
                         vb.shape_string());
  }
}

Var Tape::parameter(Matrix value) { return record(Op::kParameter, {}, std::move(value)); }

Var Tape::constant(Matrix value) { return record(Op::kConstant, {}, std::move(value)); }

Var Tape::affine(Var x, Var w, Var b) {
  const Matrix& vx = node(x).value;
  const Matrix& vw = node(w).value;
  const Matrix& vb = node(b).value;
  if (vx.cols() != vw.rows() || vb.rows() != 1 || vb.cols() != vw.cols()) {
    throw DimensionError("affine: x " + vx.shape_string() + ", W " + vw.shape_string() +
                         ", b " + vb.shape_string());
  }
  Matrix out = matmul(vx, vw);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += vb(0, j);
  }
  return record(Op::kAffine, {x, w, b}, std::move(out));
}

Var Tape::selu(Var x) { return unary(Op::kSelu, x, map(node(x).value, selu_value)); }

Var Tape::softplus(Var x) {
  return unary(Op::kSoftplus, x, map(node(x).value, softplus_value));
}

Var Tape::add(Var a, Var b) {
  check_same_shape(a, b, "add");
  return record(Op::kAdd, {a, b},
                zip(node(a).value, node(b).value, [](double u, double v) { return u + v; }));
}

Var Tape::sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  return record(Op::kSub, {a, b},
                zip(node(a).value, node(b).value, [](double u, double v) { return u - v; }));
}

Var Tape::mul(Var a, Var b) {
  check_same_shape(a, b, "mul");
  return record(Op::kMul, {a, b},
                zip(node(a).value, node(b).value, [](double u, double v) { return u * v; }));
}

Var Tape::square(Var x) {
  return unary(Op::kSquare, x, map(node(x).value, [](double u) { return u * u; }));
}

Var Tape::exp(Var x) {
  return unary(Op::kExp, x, map(node(x).value, [](double u) { return std::exp(u); }));
}

Var Tape::log(Var x) {
  const Matrix& v = node(x).value;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v[i] > 0.0)) {
      throw DomainError("log of non-positive entry " + std::to_string(v[i]) + " at index " +
                        std::to_string(i));
    }
  }
  return unary(Op::kLog, x, map(v, [](double u) { return std::log(u); }));
}

Var Tape::negate(Var x) {
  return unary(Op::kNegate, x, map(node(x).value, [](double u) { return -u; }));
}

Var Tape::scale(Var x, double factor) {
  return unary(Op::kScale, x, map(node(x).value, [factor](double u) { return factor * u; }),
               factor);
}

Var Tape::shift(Var x, double offset) {
  return unary(Op::kShift, x, map(node(x).value, [offset](double u) { return u + offset; }),
               offset);
}

Var Tape::sum(Var x) {
  double acc = 0.0;
  for (double v : node(x).value.data()) acc += v;
  return unary(Op::kSum, x, Matrix::scalar(acc));
}

Var Tape::mean(Var x) {
  const Matrix& v = node(x).value;
  double acc = 0.0;
  for (double u : v.data()) acc += u;
  const double m = v.empty() ? 0.0 : acc / static_cast<double>(v.size());
  return unary(Op::kMean, x, Matrix::scalar(m));
}

Var Tape::slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Matrix& v = node(x).value;
  if (begin + count > v.cols()) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") of " + v.shape_string());
  }
  Matrix out(v.rows(), count);
  for (std::size_t i = 0; i < v.rows(); ++i) {
    for (std::size_t j = 0; j < count; ++j) out(i, j) = v(i, begin + j);
  }
  return record(Op::kSliceCols, {x}, std::move(out), 0.0, begin);
}

const Matrix& Tape::value(Var v) const { return node(v).value; }

const Matrix& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!has_gradients_) throw ContractError("grad() requested before backward()");
  return n.grad;
}

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Tape::Op Tape::op(Var v) const { return node(v).op; }

void Tape::backward(Var loss) {
  const Matrix& lv = node(loss).value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("backward requires a 1x1 loss, got " + lv.shape_string());
  }
  for (Node& n : nodes_) n.grad = Matrix(n.value.rows(), n.value.cols());
  nodes_[loss.id].grad[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    if (nodes_[i].requires_grad) propagate(nodes_[i]);
  }
  has_gradients_ = true;
}

void Tape::propagate(const Node& n) {
  const Matrix& dy = n.grad;
  auto parent = [&](std::size_t k) -> Node& { return nodes_[n.parents[k]]; };
  auto wants = [&](std::size_t k) { return parent(k).requires_grad; };

  switch (n.op) {
    case Op::kParameter:
    case Op::kConstant:
      return;
    case Op::kAffine: {
      Node& x = parent(0);
      Node& w = parent(1);
      Node& b = parent(2);
      if (x.requires_grad) {
        Matrix dx = matmul_nt(dy, w.value);
        for (std::size_t i = 0; i < dx.size(); ++i) x.grad[i] += dx[i];
      }
      if (w.requires_grad) {
        Matrix dw = matmul_tn(x.value, dy);
        for (std::size_t i = 0; i < dw.size(); ++i) w.grad[i] += dw[i];
      }
      if (b.requires_grad) {
        for (std::size_t r = 0; r < dy.rows(); ++r) {
          for (std::size_t c = 0; c < dy.cols(); ++c) b.grad[c] += dy(r, c);
        }
      }
      return;
    }
    case Op::kSelu: {
      Node& x = parent(0);
      for (std::size_t i = 0; i < dy.size(); ++i) x.grad[i] += dy[i] * selu_slope(x.value[i]);
      return;
    }
    case Op::kSoftplus: {
      Node& x = parent(0);
      for (std::size_t i = 0; i < dy.size(); ++i) x.grad[i] += dy[i] * sigmoid(x.value[i]);
      return;
    }
    case Op::kAdd:
    case Op::kSub: {
      const double sign = n.op == Op::kAdd ? 1.0 : -1.0;
      if (wants(0)) {
        Node& a = parent(0);
        for (std::size_t i = 0; i < dy.size(); ++i) a.grad[i] += dy[i];
      }
      if (wants(1)) {
        Node& b = parent(1);
        for (std::size_t i = 0; i < dy.size(); ++i) b.grad[i] += sign * dy[i];
      }
      return;
    }
    case Op::kMul: {
      Node& a = parent(0);
      Node& b = parent(1);
      if (a.requires_grad) {
        for (std::size_t i = 0; i < dy.size(); ++i) a.grad[i] += dy[i] * b.value[i];
      }
      if (b.requires_grad) {
        for (std::size_t i = 0; i < dy.size(); ++i) b.grad[i] += dy[i] * a.value[i];
      }
      return;
    }
    case Op::kSquare: {
      Node& x = parent(0);
      for (std::size_t i = 0; i < dy.size(); ++i) x.grad[i] += 2.0 * x.value[i] * dy[i];
      return;
    }
    case Op::kExp: {
      Node& x = parent(0);
      for (std::size_t i = 0; i < dy.size(); ++i) x.grad[i] += n.value[i] * dy[i];
      return;
    }
    case Op::kLog: {
      Node& x = parent(0);
      for (std::size_t i = 0; i < dy.size(); ++i) x.grad[i] += dy[i] / x.value[i];
      return;
    }
    case Op::kNegate: {
      Node& x = parent(0);
      for (std::size_t i = 0; i < dy.size(); ++i) x.grad[i] -= dy[i];
      return;
    }
    case Op::kScale: {
      Node& x = parent(0);
      for (std::size_t i = 0; i < dy.size(); ++i) x.grad[i] += n.scalar * dy[i];
      return;
    }
    case Op::kShift: {
      Node& x = parent(0);
      for (std::size_t i = 0; i < dy.size(); ++i) x.grad[i] += dy[i];
      return;
    }
    case Op::kSum:
    case Op::kMean: {
      Node& x = parent(0);
      if (x.value.empty()) return;
      const double g = n.op == Op::kSum ? dy[0] : dy[0] / static_cast<double>(x.value.size());
      for (double& v : x.grad.data()) v += g;
      return;
    }
    case Op::kSliceCols: {
      Node& x = parent(0);
      for (std::size_t r = 0; r < dy.rows(); ++r) {
        for (std::size_t c = 0; c < dy.cols(); ++c) x.grad(r, n.offset + c) += dy(r, c);
      }
      return;
    }
  }
}

}  // namespace fsr
