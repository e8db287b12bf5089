#include "foliacert/field_spec.hpp"

#include <cctype>
#include <map>
#include <optional>
#include <sstream>

#include "foliacert/errors.hpp"

namespace foliacert {

VectorFieldSpec VectorFieldSpec::create(std::vector<Expr> components, Parameters parameters,
                                        int stable_dim) {
  const int d = static_cast<int>(components.size());
  if (d < 1) throw ValidationError("a vector field needs at least one component");
  if (stable_dim < 1) throw ValidationError("stable dimension d_s must be at least 1");
  if (d - stable_dim < 2) {
    throw ValidationError("center-unstable dimension d_cu = d - d_s must be at least 2 (d = " +
                          std::to_string(d) + ", d_s = " + std::to_string(stable_dim) + ")");
  }
  for (int i = 0; i < d; ++i) {
    if (variable_bound(components[static_cast<std::size_t>(i)]) > d) {
      throw ValidationError("component " + std::to_string(i + 1) +
                            " references a variable beyond x" + std::to_string(d));
    }
  }

  auto state = std::make_shared<State>();
  state->components = std::move(components);
  state->parameters = std::move(parameters);
  state->stable_dim = stable_dim;

  JacobianForm& jac = state->jacobian;
  jac.entries.assign(static_cast<std::size_t>(d), std::vector<Expr>(static_cast<std::size_t>(d)));
  jac.divergence = constant(0);
  jac.frobenius_sq = constant(0);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      Expr entry = derivative(state->components[static_cast<std::size_t>(i)], j);
      jac.frobenius_sq = jac.frobenius_sq + pow(entry, 2);
      if (i == j) jac.divergence = jac.divergence + entry;
      jac.entries[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = std::move(entry);
    }
  }

  for (const Expr& c : state->components) state->compiled_field.emplace_back(c);
  for (const auto& row : jac.entries) {
    for (const Expr& e : row) state->compiled_jacobian.emplace_back(e);
  }
  state->compiled_divergence = CompiledExpr(jac.divergence);
  state->compiled_frobenius_sq = CompiledExpr(jac.frobenius_sq);
  return VectorFieldSpec(std::move(state));
}

const Rational* VectorFieldSpec::parameter(const std::string& name) const {
  for (const auto& [key, value] : state_->parameters) {
    if (key == name) return &value;
  }
  return nullptr;
}

void VectorFieldSpec::eval(std::span<const double> x, std::span<double> out) const {
  const auto& f = state_->compiled_field;
  for (std::size_t i = 0; i < f.size(); ++i) out[i] = f[i](x);
}

void VectorFieldSpec::eval_jacobian(std::span<const double> x, Mat& out) const {
  const int d = dimension();
  out.resize(d, d);
  const auto& jac = state_->compiled_jacobian;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) out(i, j) = jac[static_cast<std::size_t>(i * d + j)](x);
  }
}

double VectorFieldSpec::eval_divergence(std::span<const double> x) const {
  return state_->compiled_divergence(x);
}

double VectorFieldSpec::eval_frobenius_sq(std::span<const double> x) const {
  return state_->compiled_frobenius_sq(x);
}

namespace {

std::span<const double> as_span(const Vec& x) {
  return {x.data(), static_cast<std::size_t>(x.size())};
}

void require_dim(const VectorFieldSpec& spec, const Vec& x) {
  if (x.size() != spec.dimension()) {
    throw ValidationError("point has dimension " + std::to_string(x.size()) + ", field has " +
                          std::to_string(spec.dimension()));
  }
}

}  // namespace

Vec eval_field(const VectorFieldSpec& spec, const Vec& x) {
  require_dim(spec, x);
  Vec out(spec.dimension());
  spec.eval(as_span(x), {out.data(), static_cast<std::size_t>(out.size())});
  return out;
}

Mat eval_jacobian(const VectorFieldSpec& spec, const Vec& x) {
  require_dim(spec, x);
  Mat out;
  spec.eval_jacobian(as_span(x), out);
  return out;
}

double divergence(const VectorFieldSpec& spec, const Vec& x) {
  require_dim(spec, x);
  return spec.eval_divergence(as_span(x));
}

double frobenius_norm_sq(const VectorFieldSpec& spec, const Vec& x) {
  require_dim(spec, x);
  return spec.eval_frobenius_sq(as_span(x));
}

// ---------------------------------------------------------------------------------------------
// Parsing

namespace {

enum class Tok { number, ident, symbol, separator, end };

struct Token {
  Tok kind;
  std::string text;
  int line;
  int column;
};

std::vector<Token> tokenize(const std::string& text) {
  std::vector<Token> out;
  int line = 1;
  int col = 1;
  std::size_t i = 0;
  auto advance = [&](std::size_t n) {
    i += n;
    col += static_cast<int>(n);
  };
  while (i < text.size()) {
    const char c = text[i];
    if (c == '\n') {
      out.push_back({Tok::separator, "\n", line, col});
      ++i;
      ++line;
      col = 1;
    } else if (c == '#') {
      while (i < text.size() && text[i] != '\n') advance(1);
    } else if (c == ';') {
      out.push_back({Tok::separator, ";", line, col});
      advance(1);
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      advance(1);
    } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      const int start_col = col;
      std::size_t j = i;
      while (j < text.size() && (std::isdigit(static_cast<unsigned char>(text[j])) || text[j] == '.')) ++j;
      if (j < text.size() && (text[j] == 'e' || text[j] == 'E')) {
        std::size_t k = j + 1;
        if (k < text.size() && (text[k] == '+' || text[k] == '-')) ++k;
        if (k < text.size() && std::isdigit(static_cast<unsigned char>(text[k]))) {
          j = k;
          while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
        }
      }
      out.push_back({Tok::number, text.substr(i, j - i), line, start_col});
      advance(j - i);
    } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const int start_col = col;
      std::size_t j = i;
      while (j < text.size() && (std::isalnum(static_cast<unsigned char>(text[j])) || text[j] == '_')) ++j;
      out.push_back({Tok::ident, text.substr(i, j - i), line, start_col});
      advance(j - i);
    } else if (std::string("+-*/^()=").find(c) != std::string::npos) {
      out.push_back({Tok::symbol, std::string(1, c), line, col});
      advance(1);
    } else if (static_cast<unsigned char>(c) >= 0x80) {
      throw ParseError("non-ASCII character outside a comment", line, col);
    } else {
      throw ParseError(std::string("unexpected character '") + c + "'", line, col);
    }
  }
  out.push_back({Tok::end, "", line, col});
  return out;
}

Rational decimal_to_rational(const std::string& s, int line, int col) {
  std::string mantissa = s;
  long exponent = 0;
  const auto epos = s.find_first_of("eE");
  if (epos != std::string::npos) {
    mantissa = s.substr(0, epos);
    exponent = std::stol(s.substr(epos + 1));
  }
  const auto dot = mantissa.find('.');
  std::string digits = mantissa;
  if (dot != std::string::npos) {
    if (mantissa.find('.', dot + 1) != std::string::npos) throw ParseError("malformed number '" + s + "'", line, col);
    digits = mantissa.substr(0, dot) + mantissa.substr(dot + 1);
    exponent -= static_cast<long>(mantissa.size() - dot - 1);
  }
  if (digits.empty()) throw ParseError("malformed number '" + s + "'", line, col);
  // a leading zero would make cpp_int read the digits as octal
  digits.erase(0, std::min(digits.find_first_not_of('0'), digits.size() - 1));
  boost::multiprecision::cpp_int num(digits);
  boost::multiprecision::cpp_int scale = 1;
  for (long k = 0; k < std::abs(exponent); ++k) scale *= 10;
  return exponent >= 0 ? Rational(num * scale) : Rational(num, scale);
}

class ExprParser {
 public:
  ExprParser(const std::vector<Token>& toks, std::size_t begin, std::size_t end, int dimension,
             const std::map<std::string, Rational>& params)
      : toks_(toks), pos_(begin), end_(end), dimension_(dimension), params_(params) {}

  Expr parse_all() {
    Expr e = parse_sum();
    if (pos_ != end_) fail("unexpected '" + toks_[pos_].text + "'");
    return e;
  }

 private:
  const Token& peek() const { return pos_ < end_ ? toks_[pos_] : toks_[end_]; }
  bool at_symbol(char c) const {
    return pos_ < end_ && toks_[pos_].kind == Tok::symbol && toks_[pos_].text[0] == c;
  }
  [[noreturn]] void fail(const std::string& msg) const {
    const Token& t = peek();
    throw ParseError(msg, t.line, t.column);
  }
  void expect(char c) {
    if (!at_symbol(c)) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  Expr parse_sum() {
    Expr e = parse_product();
    while (at_symbol('+') || at_symbol('-')) {
      const char op = toks_[pos_++].text[0];
      Expr rhs = parse_product();
      e = op == '+' ? e + rhs : e - rhs;
    }
    return e;
  }

  Expr parse_product() {
    Expr e = parse_unary();
    while (at_symbol('*') || at_symbol('/')) {
      const char op = toks_[pos_++].text[0];
      Expr rhs = parse_unary();
      e = op == '*' ? e * rhs : e / rhs;
    }
    return e;
  }

  Expr parse_unary() {
    if (at_symbol('-')) {
      ++pos_;
      return -parse_unary();
    }
    if (at_symbol('+')) {
      ++pos_;
      return parse_unary();
    }
    return parse_power();
  }

  Expr parse_power() {
    Expr base = parse_primary();
    if (!at_symbol('^')) return base;
    ++pos_;
    const Token& at = peek();
    const Expr exponent = parse_unary();
    const auto value = exponent.constant_value();
    if (!value || denominator(*value) != 1 || abs(*value) > 1000) {
      throw ParseError("exponent must be an integer constant", at.line, at.column);
    }
    return pow(base, numerator(*value).convert_to<int>());
  }

  Expr parse_primary() {
    const Token& t = peek();
    if (t.kind == Tok::number) {
      ++pos_;
      return constant(decimal_to_rational(t.text, t.line, t.column));
    }
    if (at_symbol('(')) {
      ++pos_;
      Expr e = parse_sum();
      expect(')');
      return e;
    }
    if (t.kind == Tok::ident) {
      ++pos_;
      if (t.text == "sin" || t.text == "cos" || t.text == "exp" || t.text == "sqrt") {
        expect('(');
        Expr arg = parse_sum();
        expect(')');
        if (t.text == "sin") return sin(arg);
        if (t.text == "cos") return cos(arg);
        if (t.text == "exp") return exp(arg);
        return sqrt(arg);
      }
      if (auto it = params_.find(t.text); it != params_.end()) return constant(it->second);
      if (t.text.size() > 1 && t.text[0] == 'x' &&
          t.text.find_first_not_of("0123456789", 1) == std::string::npos && t.text[1] != '0') {
        const int index = std::stoi(t.text.substr(1));
        if (index >= 1 && index <= dimension_) return variable(index - 1);
      }
      throw ParseError("unknown identifier '" + t.text + "'", t.line, t.column);
    }
    if (t.kind == Tok::end || t.kind == Tok::separator || pos_ >= end_) fail("unexpected end of expression");
    fail("unexpected '" + t.text + "'");
  }

  const std::vector<Token>& toks_;
  std::size_t pos_;
  std::size_t end_;
  int dimension_;
  const std::map<std::string, Rational>& params_;
};

struct Statement {
  std::size_t begin;  // first token
  std::size_t end;    // one past last token
};

std::optional<int> component_index(const std::string& name) {
  if (name.size() < 3 || name[0] != 'd' || name[1] != 'x') return std::nullopt;
  if (name.find_first_not_of("0123456789", 2) != std::string::npos || name[2] == '0') return std::nullopt;
  return std::stoi(name.substr(2));
}

}  // namespace

VectorFieldSpec parse_field(const std::string& text, const VectorFieldSpec::Parameters& overrides) {
  const std::vector<Token> toks = tokenize(text);

  std::vector<Statement> statements;
  std::size_t start = 0;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (toks[i].kind == Tok::separator || toks[i].kind == Tok::end) {
      if (i > start) statements.push_back({start, i});
      start = i + 1;
    }
  }

  std::map<std::string, Rational> params;
  VectorFieldSpec::Parameters declared;
  std::map<int, Statement> component_statements;
  int stable_dim = 1;

  for (const Statement& st : statements) {
    const Token& head = toks[st.begin];
    if (head.kind != Tok::ident) throw ParseError("statement must start with an identifier", head.line, head.column);

    if (head.text == "param") {
      if (st.end - st.begin < 4 || toks[st.begin + 1].kind != Tok::ident ||
          toks[st.begin + 2].text != "=") {
        throw ParseError("expected 'param <name> = <value>'", head.line, head.column);
      }
      const Token& name = toks[st.begin + 1];
      if (params.count(name.text)) throw ParseError("parameter '" + name.text + "' declared twice", name.line, name.column);
      ExprParser p(toks, st.begin + 3, st.end, 0, params);
      const Expr value = p.parse_all();
      auto folded = value.constant_value();
      if (!folded) throw ParseError("parameter value must be a constant", name.line, name.column);
      Rational v = *folded;
      for (const auto& [key, replacement] : overrides) {
        if (key == name.text) v = replacement;
      }
      params[name.text] = v;
      declared.emplace_back(name.text, v);
      continue;
    }

    if (st.end - st.begin < 3 || toks[st.begin + 1].text != "=") {
      const Token& t = toks[std::min(st.begin + 1, st.end - 1)];
      throw ParseError("expected '='", t.line, t.column);
    }

    if (head.text == "stable_dim") {
      const Token& v = toks[st.begin + 2];
      if (st.end - st.begin != 3 || v.kind != Tok::number || v.text.find_first_not_of("0123456789") != std::string::npos) {
        throw ParseError("stable_dim must be a positive integer", v.line, v.column);
      }
      stable_dim = std::stoi(v.text);
      continue;
    }

    const auto index = component_index(head.text);
    if (!index) throw ParseError("expected 'param', 'stable_dim' or 'dx<i>', got '" + head.text + "'", head.line, head.column);
    if (component_statements.count(*index)) throw ParseError("component " + head.text + " defined twice", head.line, head.column);
    component_statements[*index] = st;
  }

  for (const auto& [key, value] : overrides) {
    if (!params.count(key)) throw ValidationError("override for undeclared parameter '" + key + "'");
  }

  if (component_statements.empty()) throw ParseError("no 'dx<i> = ...' components", 1, 1);
  const int d = static_cast<int>(component_statements.size());
  if (component_statements.rbegin()->first != d) {
    const Token& t = toks[component_statements.rbegin()->second.begin];
    throw ParseError("dimension mismatch: components must be dx1..dx" + std::to_string(d) +
                         " without gaps", t.line, t.column);
  }

  std::vector<Expr> components;
  for (const auto& [i, st] : component_statements) {
    ExprParser p(toks, st.begin + 2, st.end, d, params);
    components.push_back(p.parse_all());
  }
  return VectorFieldSpec::create(std::move(components), std::move(declared), stable_dim);
}

namespace {

std::string rational_literal(const Rational& v) {
  std::ostringstream os;
  if (v < 0) os << "-";
  os << abs(numerator(v));
  if (denominator(v) != 1) os << "/" << denominator(v);
  return os.str();
}

}  // namespace

std::string serialize_field(const VectorFieldSpec& spec) {
  std::ostringstream os;
  for (const auto& [name, value] : spec.parameters()) {
    os << "param " << name << " = " << rational_literal(value) << "\n";
  }
  os << "stable_dim = " << spec.stable_dim() << "\n";
  for (int i = 0; i < spec.dimension(); ++i) {
    os << "dx" << (i + 1) << " = " << to_string(spec.components()[static_cast<std::size_t>(i)]) << "\n";
  }
  return os.str();
}

bool structurally_equal(const VectorFieldSpec& a, const VectorFieldSpec& b) {
  if (a.dimension() != b.dimension() || a.stable_dim() != b.stable_dim()) return false;
  if (a.parameters() != b.parameters()) return false;
  for (int i = 0; i < a.dimension(); ++i) {
    if (!structurally_equal(a.components()[static_cast<std::size_t>(i)], b.components()[static_cast<std::size_t>(i)])) return false;
  }
  return true;
}

Rational parse_rational(const std::string& text) {
  const std::vector<Token> toks = tokenize(text);
  std::size_t end = 0;
  while (toks[end].kind != Tok::end && toks[end].kind != Tok::separator) ++end;
  std::map<std::string, Rational> none;
  ExprParser p(toks, 0, end, 0, none);
  const Expr e = p.parse_all();
  const auto v = e.constant_value();
  if (!v) throw ParseError("expected a rational constant", 1, 1);
  return *v;
}

}  // namespace foliacert
