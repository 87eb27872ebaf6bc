#pragma once

// Shared helpers for the test binaries: an independent chi-squared p-value
// and a classifier that recovers the generator's source operators from an
// emitted tree (sub and powN compile to composite action patterns).

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "symq/datagen.hpp"
#include "symq/expr.hpp"

namespace testutil {

// regularized upper incomplete gamma Q(a, x), series + continued fraction
inline double gamma_q(double a, double x) {
  if (x < 0.0 || a <= 0.0) return 0.0;
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) {
    // P(a,x) by series, return 1 - P
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int n = 0; n < 500; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::fabs(del) < std::fabs(sum) * 1e-14) break;
    }
    double p = sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
    return 1.0 - p;
  }
  // Q(a,x) by Lentz continued fraction
  double b = x + 1.0 - a;
  double c = 1.0 / 1e-300;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 500; ++i) {
    double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < 1e-300) d = 1e-300;
    c = b + an / c;
    if (std::fabs(c) < 1e-300) c = 1e-300;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-14) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

/// p-value of a chi-squared statistic with df degrees of freedom.
inline double chi2_pvalue(double stat, int df) {
  return gamma_q(0.5 * df, 0.5 * stat);
}

/// Counts per source operator (index = symq::detail::SrcOp order) recovered
/// from a generated tree. Literal leaves only ever come from the sub and
/// powN compilations, so the patterns are unambiguous.
inline void count_src_ops(const symq::ExprTree& tree, int node,
                          std::array<long long, 14>& counts) {
  using symq::detail::SrcOp;
  const auto& nodes = tree.nodes();
  const auto& n = nodes[static_cast<std::size_t>(node)];
  const symq::OpInfo& info = symq::op_info(n.op);
  if (info.arity == 0) return;
  auto is_lit = [&](int idx, int value) {
    const auto& c = nodes[static_cast<std::size_t>(idx)];
    const symq::OpInfo& ci = symq::op_info(c.op);
    return ci.kind == symq::OpKind::IntLiteral && ci.literal == value;
  };
  switch (n.op) {
    case symq::kAdd: {
      const auto& rhs = nodes[static_cast<std::size_t>(n.child[1])];
      if (rhs.op == symq::kMul && is_lit(rhs.child[0], -1)) {
        ++counts[static_cast<std::size_t>(SrcOp::Sub)];
        count_src_ops(tree, n.child[0], counts);
        count_src_ops(tree, rhs.child[1], counts);
      } else {
        ++counts[static_cast<std::size_t>(SrcOp::Add)];
        count_src_ops(tree, n.child[0], counts);
        count_src_ops(tree, n.child[1], counts);
      }
      return;
    }
    case symq::kMul:
      ++counts[static_cast<std::size_t>(SrcOp::Mul)];
      break;
    case symq::kDiv:
      ++counts[static_cast<std::size_t>(SrcOp::Div)];
      break;
    case symq::kSqrt:
      ++counts[static_cast<std::size_t>(SrcOp::Sqrt)];
      break;
    case symq::kExp:
      ++counts[static_cast<std::size_t>(SrcOp::Exp)];
      break;
    case symq::kLog:
      ++counts[static_cast<std::size_t>(SrcOp::Ln)];
      break;
    case symq::kSin:
      ++counts[static_cast<std::size_t>(SrcOp::Sin)];
      break;
    case symq::kCos:
      ++counts[static_cast<std::size_t>(SrcOp::Cos)];
      break;
    case symq::kTan:
      ++counts[static_cast<std::size_t>(SrcOp::Tan)];
      break;
    case symq::kPow: {
      int n2 = symq::op_info(nodes[static_cast<std::size_t>(n.child[1])].op).literal;
      SrcOp p = n2 == 2 ? SrcOp::Pow2 : n2 == 3 ? SrcOp::Pow3
                : n2 == 4 ? SrcOp::Pow4 : SrcOp::Pow5;
      ++counts[static_cast<std::size_t>(p)];
      count_src_ops(tree, n.child[0], counts);
      return;
    }
    default:
      return;
  }
  for (int k = 0; k < info.arity; ++k) count_src_ops(tree, n.child[k], counts);
}

inline std::array<long long, 14> count_src_ops(const symq::ExprTree& tree) {
  std::array<long long, 14> counts{};
  count_src_ops(tree, 0, counts);
  return counts;
}

}  // namespace testutil
