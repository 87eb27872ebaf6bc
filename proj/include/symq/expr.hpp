#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "symq/errors.hpp"
#include "symq/opcodes.hpp"

namespace symq {

inline constexpr int kPlaceholder = -1;
inline constexpr int kDefaultMaxLen = 32;

// Numeric guards for evaluate().
inline constexpr double kValueCap = 1e12;
inline constexpr double kDenomEps = 1e-12;

/// One-hot encoding of the action sequence taken so far. Rows beyond the
/// current length are all zero.
struct TreeMatrix {
  std::vector<int> actions;
  int max_len = kDefaultMaxLen;

  int length() const { return static_cast<int>(actions.size()); }

  std::vector<std::vector<double>> dense() const {
    std::vector<std::vector<double>> rows(
        static_cast<std::size_t>(max_len),
        std::vector<double>(kNumActions, 0.0));
    for (std::size_t t = 0; t < actions.size(); ++t) {
      rows[t][static_cast<std::size_t>(actions[t])] = 1.0;
    }
    return rows;
  }
};

/// Expression tree under construction. Placeholders mark unexpanded slots;
/// the next action always fills the leftmost placeholder in pre-order.
/// Value semantics: apply() returns a new tree, existing trees never mutate.
class ExprTree {
 public:
  struct Node {
    int op = kPlaceholder;
    int child[2] = {-1, -1};
  };

  ExprTree() : nodes_(1), frontier_{0} {}

  /// Rebuilds a tree by replaying an action sequence from scratch.
  static ExprTree replay(std::span<const int> actions) {
    ExprTree t;
    for (int a : actions) t = t.apply(a);
    return t;
  }

  bool complete() const { return frontier_.empty(); }
  int length() const { return static_cast<int>(actions_.size()); }
  int n_constants() const { return n_constants_; }
  int frontier_size() const { return static_cast<int>(frontier_.size()); }
  const std::vector<int>& actions() const { return actions_; }
  const std::vector<Node>& nodes() const { return nodes_; }

  ExprTree apply(int op) const {
    if (frontier_.empty()) {
      throw CompleteTreeError("apply_action on a complete tree");
    }
    const OpInfo& info = op_info(op);  // throws UnknownOp
    ExprTree next(*this);
    int slot = next.frontier_.front();
    next.frontier_.erase(next.frontier_.begin());
    next.nodes_[static_cast<std::size_t>(slot)].op = op;
    int base = static_cast<int>(next.nodes_.size());
    for (int k = 0; k < info.arity; ++k) {
      next.nodes_[static_cast<std::size_t>(slot)].child[k] = base + k;
      next.nodes_.emplace_back();
    }
    // Children of the expanded node are the leftmost pending placeholders,
    // so inserting them at the front keeps the frontier in pre-order.
    for (int k = info.arity - 1; k >= 0; --k) {
      next.frontier_.insert(next.frontier_.begin(), base + k);
    }
    next.actions_.push_back(op);
    if (op == kConst) ++next.n_constants_;
    return next;
  }

  /// Action ids in pre-order (depth-first, left-to-right). For trees built
  /// by replay this equals actions().
  std::vector<int> preorder() const {
    if (!complete()) throw IncompleteTreeError("preorder of incomplete tree");
    std::vector<int> out;
    out.reserve(actions_.size());
    preorder_walk(0, out);
    return out;
  }

  TreeMatrix encode_matrix(int max_len = kDefaultMaxLen) const {
    if (length() > max_len) {
      throw TooLongError("tree length " + std::to_string(length()) +
                         " exceeds max_len " + std::to_string(max_len));
    }
    return TreeMatrix{actions_, max_len};
  }

  /// Numeric value at one point, with constants bound to c-nodes in
  /// pre-order. Returns nullopt for any domain violation or non-finite
  /// intermediate.
  std::optional<double> evaluate(std::span<const double> constants,
                                 double x1, double x2) const {
    if (!complete()) throw IncompleteTreeError("evaluate incomplete tree");
    if (static_cast<int>(constants.size()) != n_constants_) {
      throw ConstantCountMismatchError(
          "expected " + std::to_string(n_constants_) + " constants, got " +
          std::to_string(constants.size()));
    }
    std::size_t cidx = 0;
    return eval_node(0, constants, cidx, x1, x2);
  }

  /// Fully parenthesized infix form; constants print as "c".
  std::string skeleton() const {
    if (!complete()) throw IncompleteTreeError("skeleton of incomplete tree");
    std::string out;
    print_node(0, out);
    return out;
  }

  /// Deterministic canonical string for recovery scoring: constants become
  /// "C", division becomes multiplication by a -1 power, and the flattened
  /// arguments of + and * are sorted.
  std::string canonical() const {
    if (!complete()) throw IncompleteTreeError("canonicalize incomplete tree");
    return canon_node(0);
  }

  bool structurally_equal(const ExprTree& other) const {
    if (!complete() || !other.complete()) return false;
    return preorder() == other.preorder();
  }

 private:
  void preorder_walk(int idx, std::vector<int>& out) const {
    const Node& n = nodes_[static_cast<std::size_t>(idx)];
    out.push_back(n.op);
    for (int k = 0; k < op_arity(n.op); ++k) preorder_walk(n.child[k], out);
  }

  std::optional<double> eval_node(int idx, std::span<const double> constants,
                                  std::size_t& cidx, double x1,
                                  double x2) const {
    const Node& n = nodes_[static_cast<std::size_t>(idx)];
    const OpInfo& info = op_info(n.op);
    double v = 0.0;
    switch (info.kind) {
      case OpKind::Variable:
        v = (n.op == kX1) ? x1 : x2;
        break;
      case OpKind::Constant:
        v = constants[cidx++];
        break;
      case OpKind::IntLiteral:
        v = static_cast<double>(info.literal);
        break;
      case OpKind::Unary: {
        auto a = eval_node(n.child[0], constants, cidx, x1, x2);
        if (!a) return std::nullopt;
        switch (n.op) {
          case kAbs: v = std::fabs(*a); break;
          case kSqrt:
            if (*a < 0.0) return std::nullopt;
            v = std::sqrt(*a);
            break;
          case kExp: v = std::exp(*a); break;
          case kLog:
            if (*a <= 0.0) return std::nullopt;
            v = std::log(*a);
            break;
          case kSin: v = std::sin(*a); break;
          case kCos: v = std::cos(*a); break;
          case kTan: v = std::tan(*a); break;
          case kAsin:
            if (std::fabs(*a) > 1.0) return std::nullopt;
            v = std::asin(*a);
            break;
          case kAcos:
            if (std::fabs(*a) > 1.0) return std::nullopt;
            v = std::acos(*a);
            break;
          case kAtan: v = std::atan(*a); break;
          case kSinh: v = std::sinh(*a); break;
          case kCosh: v = std::cosh(*a); break;
          case kTanh: v = std::tanh(*a); break;
          case kCoth: {
            double s = std::sinh(*a);
            if (std::fabs(s) < kDenomEps) return std::nullopt;
            v = std::cosh(*a) / s;
            break;
          }
          default: return std::nullopt;
        }
        break;
      }
      case OpKind::Binary: {
        auto a = eval_node(n.child[0], constants, cidx, x1, x2);
        if (!a) return std::nullopt;
        auto b = eval_node(n.child[1], constants, cidx, x1, x2);
        if (!b) return std::nullopt;
        switch (n.op) {
          case kAdd: v = *a + *b; break;
          case kMul: v = *a * *b; break;
          case kDiv:
            if (std::fabs(*b) < kDenomEps) return std::nullopt;
            v = *a / *b;
            break;
          case kPow: {
            if (*a == 0.0 && *b < 0.0) return std::nullopt;
            if (*a < 0.0 && std::fabs(*b - std::round(*b)) > 1e-9) {
              return std::nullopt;
            }
            double e = (*a < 0.0) ? std::round(*b) : *b;
            v = std::pow(*a, e);
            break;
          }
          default: return std::nullopt;
        }
        break;
      }
    }
    if (!std::isfinite(v) || std::fabs(v) > kValueCap) return std::nullopt;
    // normalize -0.0 so printed/compared values are stable
    if (v == 0.0) v = 0.0;
    return v;
  }

  void print_node(int idx, std::string& out) const {
    const Node& n = nodes_[static_cast<std::size_t>(idx)];
    const OpInfo& info = op_info(n.op);
    switch (info.kind) {
      case OpKind::Variable:
      case OpKind::Constant:
      case OpKind::IntLiteral:
        out += info.name;
        break;
      case OpKind::Unary:
        out += info.name;
        out += '(';
        print_node(n.child[0], out);
        out += ')';
        break;
      case OpKind::Binary:
        out += '(';
        print_node(n.child[0], out);
        out += info.name;
        print_node(n.child[1], out);
        out += ')';
        break;
    }
  }

  // Flattens nested + / * chains into one sorted argument list.
  void canon_collect(int idx, int chain_op, std::vector<std::string>& args) const {
    const Node& n = nodes_[static_cast<std::size_t>(idx)];
    if (n.op == chain_op) {
      canon_collect(n.child[0], chain_op, args);
      canon_collect(n.child[1], chain_op, args);
    } else {
      args.push_back(canon_node(idx));
    }
  }

  std::string canon_node(int idx) const {
    const Node& n = nodes_[static_cast<std::size_t>(idx)];
    const OpInfo& info = op_info(n.op);
    switch (info.kind) {
      case OpKind::Variable: return std::string(info.name);
      case OpKind::Constant: return "C";
      case OpKind::IntLiteral: return std::string(info.name);
      case OpKind::Unary:
        return std::string(info.name) + "(" + canon_node(n.child[0]) + ")";
      case OpKind::Binary: {
        if (n.op == kAdd || n.op == kMul) {
          std::vector<std::string> args;
          canon_collect(idx, n.op, args);
          std::sort(args.begin(), args.end());
          std::string out = (n.op == kAdd) ? "+(" : "*(";
          for (std::size_t i = 0; i < args.size(); ++i) {
            if (i) out += ',';
            out += args[i];
          }
          out += ')';
          return out;
        }
        if (n.op == kDiv) {
          // a/b == a * b**(-1)
          std::vector<std::string> args = {
              canon_node(n.child[0]),
              "**(" + canon_node(n.child[1]) + ",-1)"};
          std::sort(args.begin(), args.end());
          return "*(" + args[0] + "," + args[1] + ")";
        }
        return "**(" + canon_node(n.child[0]) + "," + canon_node(n.child[1]) +
               ")";
      }
    }
    return {};
  }

  std::vector<Node> nodes_;
  std::vector<int> frontier_;  // placeholder indices in pre-order
  std::vector<int> actions_;
  int n_constants_ = 0;
};

}  // namespace symq
