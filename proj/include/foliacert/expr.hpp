#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "foliacert/interval.hpp"

namespace foliacert {

using Rational = boost::multiprecision::cpp_rational;

/// Node kinds of the expression language: rational constants, variables x1..xd, the four
/// arithmetic operations, integer powers and the unary functions sin/cos/exp/sqrt.
enum class Op { constant, variable, add, sub, mul, div, neg, pow, sin, cos, exp, sqrt };

struct ExprNode;

/// Immutable expression tree with shared structure.
///
/// All construction goes through the smart constructors below, which fold constants exactly in
/// rational arithmetic and apply a small set of idempotent identities (x+0, x*1, x*0, --x, x^1,
/// x^0). Because the rewrite set is idempotent, printing a tree with to_string() and parsing it
/// back reproduces the same tree.
class Expr {
 public:
  Expr() = default;  // empty handle; only valid as an absent operand
  explicit Expr(std::shared_ptr<const ExprNode> node) : node_(std::move(node)) {}

  const ExprNode& node() const { return *node_; }
  bool empty() const { return node_ == nullptr; }
  Op op() const;

  /// Value if the tree is a single constant node.
  std::optional<Rational> constant_value() const;
  bool is_constant(long v) const;

 private:
  std::shared_ptr<const ExprNode> node_;
};

struct ExprNode {
  Op op = Op::constant;
  Rational value;    // Op::constant
  int index = 0;     // Op::variable (0-based), Op::pow (exponent)
  Expr lhs;          // first operand
  Expr rhs;          // second operand of binary ops
};

Expr constant(const Rational& value);
Expr constant(long value);
Expr variable(int index);

Expr operator+(const Expr& a, const Expr& b);
Expr operator-(const Expr& a, const Expr& b);
Expr operator*(const Expr& a, const Expr& b);
Expr operator/(const Expr& a, const Expr& b);
Expr operator-(const Expr& a);
Expr pow(const Expr& base, int exponent);
Expr sin(const Expr& a);
Expr cos(const Expr& a);
Expr exp(const Expr& a);
Expr sqrt(const Expr& a);

bool structurally_equal(const Expr& a, const Expr& b);

/// Symbolic partial derivative with respect to variable `index` (0-based).
Expr derivative(const Expr& e, int index);

/// Largest variable index referenced plus one (0 for constant trees).
int variable_bound(const Expr& e);

/// Fully parenthesized text form; variables print as x1..xd.
std::string to_string(const Expr& e);

/// Tree-walking evaluation. Throws EvalError on a domain violation.
double evaluate(const Expr& e, std::span<const double> x);

/// Range enclosure over a box. Throws BoundError when an operation leaves its domain.
Interval evaluate(const Expr& e, std::span<const Interval> box);

double to_double(const Rational& r);

/// Postfix program compiled from an Expr; the hot path for integrators.
class CompiledExpr {
 public:
  CompiledExpr() = default;
  explicit CompiledExpr(const Expr& e);

  double operator()(std::span<const double> x) const;
  bool is_constant() const { return code_.size() == 1 && code_[0].op == Op::constant; }

 private:
  struct Instr {
    Op op;
    double value;
    int index;
  };
  void emit(const Expr& e, int depth);

  std::vector<Instr> code_;
  int max_depth_ = 0;
};

}  // namespace foliacert
