#pragma once

#include <cctype>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "symq/expr.hpp"

namespace symq {

/// Result of parsing an infix expression. Decimal literals and integers
/// outside the -3..5 action range become c-nodes with their value bound in
/// `constants` (pre-order); a bare "c" token yields an unbound slot (NaN).
struct ParsedExpr {
  ExprTree tree;
  std::vector<double> constants;
  bool fully_bound = true;
};

namespace detail {

struct PNode {
  int op = kConst;
  double cval = 0.0;       // bound value when op == kConst and bound
  bool bound = false;
  std::vector<PNode> kids;
};

class SkeletonParser {
 public:
  explicit SkeletonParser(std::string_view src) : src_(src) {}

  ParsedExpr run() {
    PNode root = parse_expr();
    skip_ws();
    if (pos_ != src_.size()) throw ParseError("trailing input", pos_);
    std::vector<int> actions;
    std::vector<double> constants;
    bool fully_bound = true;
    emit(root, actions, constants, fully_bound);
    return ParsedExpr{ExprTree::replay(actions), std::move(constants),
                      fully_bound};
  }

 private:
  static PNode leaf(int op) { return PNode{op, 0.0, false, {}}; }
  static PNode constant(double v) { return PNode{kConst, v, true, {}}; }
  static PNode unbound_constant() {
    return PNode{kConst, std::nan(""), false, {}};
  }
  static PNode node(int op, PNode a) {
    PNode n{op, 0.0, false, {}};
    n.kids.push_back(std::move(a));
    return n;
  }
  static PNode node(int op, PNode a, PNode b) {
    PNode n{op, 0.0, false, {}};
    n.kids.push_back(std::move(a));
    n.kids.push_back(std::move(b));
    return n;
  }

  void emit(const PNode& n, std::vector<int>& actions,
            std::vector<double>& constants, bool& fully_bound) const {
    actions.push_back(n.op);
    if (n.op == kConst) {
      constants.push_back(n.cval);
      if (!n.bound) fully_bound = false;
    }
    for (const PNode& k : n.kids) emit(k, actions, constants, fully_bound);
  }

  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  bool eat(std::string_view tok) {
    skip_ws();
    if (src_.substr(pos_, tok.size()) == tok) {
      pos_ += tok.size();
      return true;
    }
    return false;
  }

  char peek() {
    skip_ws();
    return pos_ < src_.size() ? src_[pos_] : '\0';
  }

  PNode parse_expr() {
    PNode lhs = parse_term();
    for (;;) {
      skip_ws();
      // '**' belongs to parse_power; a lone '+'/'-' continues the sum
      if (peek() == '+') {
        ++pos_;
        lhs = node(kAdd, std::move(lhs), parse_term());
      } else if (peek() == '-') {
        ++pos_;
        lhs = node(kAdd, std::move(lhs),
                   node(kMul, leaf(literal_op(-1)), parse_term()));
      } else {
        return lhs;
      }
    }
  }

  PNode parse_term() {
    PNode lhs = parse_factor();
    for (;;) {
      skip_ws();
      if (pos_ + 1 < src_.size() && src_[pos_] == '*' && src_[pos_ + 1] == '*') {
        return lhs;  // exponent, handled below us
      }
      if (peek() == '*') {
        ++pos_;
        lhs = node(kMul, std::move(lhs), parse_factor());
      } else if (peek() == '/') {
        ++pos_;
        lhs = node(kDiv, std::move(lhs), parse_factor());
      } else {
        return lhs;
      }
    }
  }

  PNode parse_factor() {
    if (peek() == '-') {
      ++pos_;
      PNode inner = parse_factor();
      return negate(std::move(inner));
    }
    return parse_power();
  }

  static PNode negate(PNode inner) {
    if (inner.kids.empty() && inner.op != kConst) {
      const OpInfo& info = op_info(inner.op);
      if (info.kind == OpKind::IntLiteral && -info.literal >= -3 &&
          -info.literal <= 5) {
        return leaf(literal_op(-info.literal));
      }
    }
    if (inner.op == kConst && inner.bound) {
      inner.cval = -inner.cval;
      return inner;
    }
    return node(kMul, leaf(literal_op(-1)), std::move(inner));
  }

  PNode parse_power() {
    PNode base = parse_primary();
    skip_ws();
    if (pos_ + 1 < src_.size() && src_[pos_] == '*' && src_[pos_ + 1] == '*') {
      pos_ += 2;
      return node(kPow, std::move(base), parse_factor());
    }
    return base;
  }

  PNode parse_primary() {
    skip_ws();
    if (pos_ >= src_.size()) throw ParseError("unexpected end of input", pos_);
    char c = src_[pos_];
    if (c == '(') {
      ++pos_;
      PNode inner = parse_expr();
      if (!eat(")")) throw ParseError("expected ')'", pos_);
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      return parse_number();
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      std::size_t start = pos_;
      while (pos_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[pos_])) ||
              src_[pos_] == '_')) {
        ++pos_;
      }
      std::string_view id = src_.substr(start, pos_ - start);
      if (id == "x_1" || id == "x" || id == "x1") return leaf(kX1);
      if (id == "x_2" || id == "y" || id == "x2") return leaf(kX2);
      if (id == "c") return unbound_constant();
      if (id == "pi") return constant(M_PI);
      int fn = func_op(id);
      if (fn >= 0) {
        if (!eat("(")) throw ParseError("expected '(' after function", pos_);
        PNode arg = parse_expr();
        if (!eat(")")) throw ParseError("expected ')'", pos_);
        return node(fn, std::move(arg));
      }
      throw ParseError("unknown identifier '" + std::string(id) + "'", start);
    }
    throw ParseError(std::string("unexpected character '") + c + "'", pos_);
  }

  PNode parse_number() {
    std::size_t start = pos_;
    bool is_int = true;
    while (pos_ < src_.size() &&
           (std::isdigit(static_cast<unsigned char>(src_[pos_])) ||
            src_[pos_] == '.')) {
      if (src_[pos_] == '.') is_int = false;
      ++pos_;
    }
    std::string text(src_.substr(start, pos_ - start));
    double v = 0.0;
    try {
      v = std::stod(text);
    } catch (const std::exception&) {
      throw ParseError("bad number '" + text + "'", start);
    }
    if (is_int && v >= -3 && v <= 5) {
      return leaf(literal_op(static_cast<int>(v)));
    }
    return constant(v);
  }

  static int func_op(std::string_view id) {
    if (id == "abs") return kAbs;
    if (id == "sqrt") return kSqrt;
    if (id == "exp") return kExp;
    if (id == "log" || id == "ln") return kLog;
    if (id == "sin") return kSin;
    if (id == "cos") return kCos;
    if (id == "tan") return kTan;
    if (id == "asin") return kAsin;
    if (id == "acos") return kAcos;
    if (id == "atan") return kAtan;
    if (id == "sinh") return kSinh;
    if (id == "cosh") return kCosh;
    if (id == "tanh") return kTanh;
    if (id == "coth") return kCoth;
    return -1;
  }

  std::string_view src_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline ParsedExpr parse_skeleton(std::string_view s) {
  return detail::SkeletonParser(s).run();
}

}  // namespace symq
