#include "foliacert/expr.hpp"

#include <array>
#include <cmath>
#include <sstream>

#include "foliacert/errors.hpp"

namespace foliacert {
namespace {

Expr make(Op op, Expr lhs = {}, Expr rhs = {}, int index = 0) {
  auto n = std::make_shared<ExprNode>();
  n->op = op;
  n->lhs = std::move(lhs);
  n->rhs = std::move(rhs);
  n->index = index;
  return Expr(std::move(n));
}

bool is_const(const Expr& e) { return e.op() == Op::constant; }
const Rational& cval(const Expr& e) { return e.node().value; }

bool is_integer(const Rational& r) { return denominator(r) == 1; }

Rational rational_pow(const Rational& base, int n) {
  Rational result = 1;
  Rational b = n >= 0 ? base : Rational(1) / base;
  for (int k = std::abs(n); k > 0; --k) result *= b;
  return result;
}

}  // namespace

Op Expr::op() const { return node_->op; }

std::optional<Rational> Expr::constant_value() const {
  if (node_ && node_->op == Op::constant) return node_->value;
  return std::nullopt;
}

bool Expr::is_constant(long v) const {
  return node_ && node_->op == Op::constant && node_->value == Rational(v);
}

double to_double(const Rational& r) {
  // Exact-integer numerator and denominator below 2^53 give a correctly rounded quotient.
  const auto num = numerator(r);
  const auto den = denominator(r);
  const boost::multiprecision::cpp_int limit = boost::multiprecision::cpp_int(1) << 53;
  if (abs(num) < limit && den < limit) {
    return num.convert_to<double>() / den.convert_to<double>();
  }
  return r.convert_to<double>();
}

Expr constant(const Rational& value) {
  auto n = std::make_shared<ExprNode>();
  n->op = Op::constant;
  n->value = value;
  return Expr(std::move(n));
}

Expr constant(long value) { return constant(Rational(value)); }

Expr variable(int index) { return make(Op::variable, {}, {}, index); }

Expr operator+(const Expr& a, const Expr& b) {
  if (is_const(a) && is_const(b)) return constant(cval(a) + cval(b));
  if (a.is_constant(0)) return b;
  if (b.is_constant(0)) return a;
  return make(Op::add, a, b);
}

Expr operator-(const Expr& a, const Expr& b) {
  if (is_const(a) && is_const(b)) return constant(cval(a) - cval(b));
  if (b.is_constant(0)) return a;
  if (a.is_constant(0)) return -b;
  return make(Op::sub, a, b);
}

Expr operator*(const Expr& a, const Expr& b) {
  if (is_const(a) && is_const(b)) return constant(cval(a) * cval(b));
  if (a.is_constant(0) || b.is_constant(0)) return constant(0);
  if (a.is_constant(1)) return b;
  if (b.is_constant(1)) return a;
  if (a.is_constant(-1)) return -b;
  if (b.is_constant(-1)) return -a;
  return make(Op::mul, a, b);
}

Expr operator/(const Expr& a, const Expr& b) {
  if (is_const(a) && is_const(b) && cval(b) != 0) return constant(cval(a) / cval(b));
  if (b.is_constant(1)) return a;
  return make(Op::div, a, b);
}

Expr operator-(const Expr& a) {
  if (is_const(a)) return constant(-cval(a));
  if (a.op() == Op::neg) return a.node().lhs;
  return make(Op::neg, a);
}

Expr pow(const Expr& base, int exponent) {
  if (exponent == 0) return constant(1);
  if (exponent == 1) return base;
  if (is_const(base) && !(cval(base) == 0 && exponent < 0)) {
    return constant(rational_pow(cval(base), exponent));
  }
  return make(Op::pow, base, {}, exponent);
}

Expr sin(const Expr& a) { return a.is_constant(0) ? constant(0) : make(Op::sin, a); }
Expr cos(const Expr& a) { return a.is_constant(0) ? constant(1) : make(Op::cos, a); }
Expr exp(const Expr& a) { return a.is_constant(0) ? constant(1) : make(Op::exp, a); }
Expr sqrt(const Expr& a) {
  if (a.is_constant(0)) return constant(0);
  if (a.is_constant(1)) return constant(1);
  return make(Op::sqrt, a);
}

bool structurally_equal(const Expr& a, const Expr& b) {
  if (a.empty() || b.empty()) return a.empty() == b.empty();
  if (&a.node() == &b.node()) return true;
  const ExprNode& x = a.node();
  const ExprNode& y = b.node();
  if (x.op != y.op) return false;
  switch (x.op) {
    case Op::constant: return x.value == y.value;
    case Op::variable: return x.index == y.index;
    case Op::pow: return x.index == y.index && structurally_equal(x.lhs, y.lhs);
    default: return structurally_equal(x.lhs, y.lhs) && structurally_equal(x.rhs, y.rhs);
  }
}

Expr derivative(const Expr& e, int index) {
  const ExprNode& n = e.node();
  switch (n.op) {
    case Op::constant: return constant(0);
    case Op::variable: return constant(n.index == index ? 1 : 0);
    case Op::add: return derivative(n.lhs, index) + derivative(n.rhs, index);
    case Op::sub: return derivative(n.lhs, index) - derivative(n.rhs, index);
    case Op::mul:
      return derivative(n.lhs, index) * n.rhs + n.lhs * derivative(n.rhs, index);
    case Op::div: {
      const Expr num = derivative(n.lhs, index) * n.rhs - n.lhs * derivative(n.rhs, index);
      if (num.is_constant(0)) return constant(0);
      return num / pow(n.rhs, 2);
    }
    case Op::neg: return -derivative(n.lhs, index);
    case Op::pow:
      return constant(n.index) * pow(n.lhs, n.index - 1) * derivative(n.lhs, index);
    case Op::sin: return cos(n.lhs) * derivative(n.lhs, index);
    case Op::cos: return -(sin(n.lhs) * derivative(n.lhs, index));
    case Op::exp: return e * derivative(n.lhs, index);
    case Op::sqrt: {
      const Expr d = derivative(n.lhs, index);
      if (d.is_constant(0)) return constant(0);
      return d / (constant(2) * e);
    }
  }
  return constant(0);
}

int variable_bound(const Expr& e) {
  if (e.empty()) return 0;
  const ExprNode& n = e.node();
  if (n.op == Op::variable) return n.index + 1;
  return std::max(variable_bound(n.lhs), variable_bound(n.rhs));
}

namespace {

void print(const Expr& e, std::ostream& os) {
  const ExprNode& n = e.node();
  switch (n.op) {
    case Op::constant: {
      const Rational& v = n.value;
      if (is_integer(v) && v >= 0) {
        os << numerator(v);
      } else if (is_integer(v)) {
        os << "(-" << -numerator(v) << ")";
      } else {
        os << "(" << (v < 0 ? "-" : "") << abs(numerator(v)) << "/" << denominator(v) << ")";
      }
      return;
    }
    case Op::variable: os << "x" << (n.index + 1); return;
    case Op::add:
    case Op::sub:
    case Op::mul:
    case Op::div: {
      const char sym = n.op == Op::add ? '+' : n.op == Op::sub ? '-' : n.op == Op::mul ? '*' : '/';
      os << "(";
      print(n.lhs, os);
      os << " " << sym << " ";
      print(n.rhs, os);
      os << ")";
      return;
    }
    case Op::neg:
      os << "(-";
      print(n.lhs, os);
      os << ")";
      return;
    case Op::pow:
      os << "(";
      print(n.lhs, os);
      if (n.index < 0) {
        os << " ^ (-" << -n.index << "))";
      } else {
        os << " ^ " << n.index << ")";
      }
      return;
    case Op::sin:
    case Op::cos:
    case Op::exp:
    case Op::sqrt: {
      const char* name = n.op == Op::sin ? "sin" : n.op == Op::cos ? "cos" : n.op == Op::exp ? "exp" : "sqrt";
      os << name << "(";
      print(n.lhs, os);
      os << ")";
      return;
    }
  }
}

double checked_div(double a, double b) {
  if (b == 0.0) throw EvalError("division by zero");
  return a / b;
}

double checked_sqrt(double a) {
  if (a < 0.0) throw EvalError("sqrt of a negative number");
  return std::sqrt(a);
}

double int_pow(double base, int n) {
  if (n < 0) return checked_div(1.0, int_pow(base, -n));
  double result = 1.0;
  while (n > 0) {
    if (n & 1) result *= base;
    base *= base;
    n >>= 1;
  }
  return result;
}

Interval to_interval(const Rational& r) {
  const double v = to_double(r);
  if (is_integer(r) && std::abs(v) < 9007199254740992.0) return Interval(v);
  return detail::widen(v, v);
}

}  // namespace

std::string to_string(const Expr& e) {
  std::ostringstream os;
  print(e, os);
  return os.str();
}

double evaluate(const Expr& e, std::span<const double> x) {
  const ExprNode& n = e.node();
  switch (n.op) {
    case Op::constant: return to_double(n.value);
    case Op::variable: return x[static_cast<std::size_t>(n.index)];
    case Op::add: return evaluate(n.lhs, x) + evaluate(n.rhs, x);
    case Op::sub: return evaluate(n.lhs, x) - evaluate(n.rhs, x);
    case Op::mul: return evaluate(n.lhs, x) * evaluate(n.rhs, x);
    case Op::div: return checked_div(evaluate(n.lhs, x), evaluate(n.rhs, x));
    case Op::neg: return -evaluate(n.lhs, x);
    case Op::pow: return int_pow(evaluate(n.lhs, x), n.index);
    case Op::sin: return std::sin(evaluate(n.lhs, x));
    case Op::cos: return std::cos(evaluate(n.lhs, x));
    case Op::exp: return std::exp(evaluate(n.lhs, x));
    case Op::sqrt: return checked_sqrt(evaluate(n.lhs, x));
  }
  return 0.0;
}

Interval evaluate(const Expr& e, std::span<const Interval> box) {
  const ExprNode& n = e.node();
  switch (n.op) {
    case Op::constant: return to_interval(n.value);
    case Op::variable: return box[static_cast<std::size_t>(n.index)];
    case Op::add: return evaluate(n.lhs, box) + evaluate(n.rhs, box);
    case Op::sub: return evaluate(n.lhs, box) - evaluate(n.rhs, box);
    case Op::mul:
      // x*x must not be treated as a product of independent ranges.
      if (structurally_equal(n.lhs, n.rhs)) return square(evaluate(n.lhs, box));
      return evaluate(n.lhs, box) * evaluate(n.rhs, box);
    case Op::div: return evaluate(n.lhs, box) / evaluate(n.rhs, box);
    case Op::neg: return -evaluate(n.lhs, box);
    case Op::pow: return pow(evaluate(n.lhs, box), n.index);
    case Op::sin: return sin(evaluate(n.lhs, box));
    case Op::cos: return cos(evaluate(n.lhs, box));
    case Op::exp: return exp(evaluate(n.lhs, box));
    case Op::sqrt: return sqrt(evaluate(n.lhs, box));
  }
  return Interval(0.0);
}

CompiledExpr::CompiledExpr(const Expr& e) { emit(e, 1); }

void CompiledExpr::emit(const Expr& e, int depth) {
  const ExprNode& n = e.node();
  max_depth_ = std::max(max_depth_, depth);
  switch (n.op) {
    case Op::constant: code_.push_back({Op::constant, to_double(n.value), 0}); return;
    case Op::variable: code_.push_back({Op::variable, 0.0, n.index}); return;
    case Op::add:
    case Op::sub:
    case Op::mul:
    case Op::div:
      emit(n.lhs, depth);
      emit(n.rhs, depth + 1);
      code_.push_back({n.op, 0.0, 0});
      return;
    default:
      emit(n.lhs, depth);
      code_.push_back({n.op, 0.0, n.index});
      return;
  }
}

double CompiledExpr::operator()(std::span<const double> x) const {
  constexpr int kInline = 32;
  if (code_.empty()) return 0.0;
  std::array<double, kInline> inline_stack;
  inline_stack[0] = 0.0;
  std::vector<double> heap_stack;
  double* stack = inline_stack.data();
  if (max_depth_ > kInline) {
    heap_stack.resize(static_cast<std::size_t>(max_depth_));
    stack = heap_stack.data();
  }
  int top = -1;
  for (const Instr& in : code_) {
    switch (in.op) {
      case Op::constant: stack[++top] = in.value; break;
      case Op::variable: stack[++top] = x[static_cast<std::size_t>(in.index)]; break;
      case Op::add: stack[top - 1] += stack[top]; --top; break;
      case Op::sub: stack[top - 1] -= stack[top]; --top; break;
      case Op::mul: stack[top - 1] *= stack[top]; --top; break;
      case Op::div: stack[top - 1] = checked_div(stack[top - 1], stack[top]); --top; break;
      case Op::neg: stack[top] = -stack[top]; break;
      case Op::pow: stack[top] = int_pow(stack[top], in.index); break;
      case Op::sin: stack[top] = std::sin(stack[top]); break;
      case Op::cos: stack[top] = std::cos(stack[top]); break;
      case Op::exp: stack[top] = std::exp(stack[top]); break;
      case Op::sqrt: stack[top] = checked_sqrt(stack[top]); break;
    }
  }
  return stack[0];
}

}  // namespace foliacert
