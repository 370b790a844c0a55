#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "fsr/matrix.hpp"

namespace fsr {

/// Handle to a node recorded on a Tape. Only meaningful for the tape that
/// created it.
struct Var {
  std::size_t id = 0;
};

/// Standard SELU constants.
inline constexpr double kSeluAlpha = 1.6732632423543772;
inline constexpr double kSeluScale = 1.0507009873554805;

/// Reverse-mode automatic differentiation over dense matrices.
///
/// The tape records every operation in execution order, so parents always
/// precede their children and `backward` is a single reverse sweep. A tape
/// is meant to be rebuilt for every batch; values are never mutated after
/// they are recorded.
///
/// Gradients only flow into nodes that transitively depend on a
/// `parameter` leaf. `constant` leaves (and everything computed purely from
/// them) act as stop-gradients, which is how the training loops decide which
/// parameter group a given loss updates.
class Tape {
 public:
  enum class Op : std::uint8_t {
    kParameter,
    kConstant,
    kAffine,
    kSelu,
    kSoftplus,
    kAdd,
    kSub,
    kMul,
    kSquare,
    kExp,
    kLog,
    kNegate,
    kScale,
    kShift,
    kSum,
    kMean,
    kSliceCols,
  };

  Var parameter(Matrix value);
  Var constant(Matrix value);

  /// x * w + b, with the 1 x h bias broadcast over rows.
  Var affine(Var x, Var w, Var b);
  Var selu(Var x);
  /// ln(1 + e^x) in the overflow-safe form max(x, 0) + ln(1 + e^-|x|).
  Var softplus(Var x);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var square(Var x);
  Var exp(Var x);
  /// Throws DomainError if any entry is not strictly positive.
  Var log(Var x);
  Var negate(Var x);
  Var scale(Var x, double factor);
  Var shift(Var x, double offset);

  Var sum(Var x);
  Var mean(Var x);
  Var slice_cols(Var x, std::size_t begin, std::size_t count);

  const Matrix& value(Var v) const;
  /// Adjoint of `v` from the most recent backward(); throws ContractError
  /// if backward has not been run.
  const Matrix& grad(Var v) const;
  bool requires_grad(Var v) const;
  Op op(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a 1x1 loss. Gradients are reset first, so calling
  /// this twice yields identical adjoints.
  void backward(Var loss);

 private:
  struct Node {
    Op op;
    std::array<std::size_t, 3> parents{};
    std::size_t n_parents = 0;
    Matrix value;
    Matrix grad;
    double scalar = 0.0;
    std::size_t offset = 0;
    bool requires_grad = false;
  };

  const Node& node(Var v) const;
  Var record(Op op, std::initializer_list<Var> parents, Matrix value, double scalar = 0.0,
             std::size_t offset = 0);
  Var unary(Op op, Var x, Matrix value, double scalar = 0.0);
  void check_same_shape(Var a, Var b, const char* what) const;
  void propagate(const Node& n);

  std::vector<Node> nodes_;
  bool has_gradients_ = false;
};

}  // namespace fsr
