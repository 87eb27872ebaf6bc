#pragma once

#include <array>
#include <string_view>

#include "symq/errors.hpp"

namespace symq {

inline constexpr int kNumActions = 30;

enum class OpKind { Variable, Constant, IntLiteral, Unary, Binary };

// Stable action ids shared by the tree builder, the dataset format and the
// model's output head. Do not reorder.
enum Op : int {
  kX1 = 0,
  kX2 = 1,
  kConst = 2,
  kAbs = 3,
  kAdd = 4,
  kMul = 5,
  kDiv = 6,
  kSqrt = 7,
  kExp = 8,
  kLog = 9,
  kPow = 10,
  kSin = 11,
  kCos = 12,
  kTan = 13,
  kAsin = 14,
  kAcos = 15,
  kAtan = 16,
  kSinh = 17,
  kCosh = 18,
  kTanh = 19,
  kCoth = 20,
  // integer literals -3..5 map to ids 21..29
  kLitBase = 21,
};

struct OpInfo {
  int id;
  OpKind kind;
  int arity;
  std::string_view name;   // token used by the skeleton grammar
  int literal;             // value for IntLiteral ops, 0 otherwise
};

namespace detail {
inline constexpr std::array<OpInfo, kNumActions> kOpTable = {{
    {0, OpKind::Variable, 0, "x_1", 0},
    {1, OpKind::Variable, 0, "x_2", 0},
    {2, OpKind::Constant, 0, "c", 0},
    {3, OpKind::Unary, 1, "abs", 0},
    {4, OpKind::Binary, 2, "+", 0},
    {5, OpKind::Binary, 2, "*", 0},
    {6, OpKind::Binary, 2, "/", 0},
    {7, OpKind::Unary, 1, "sqrt", 0},
    {8, OpKind::Unary, 1, "exp", 0},
    {9, OpKind::Unary, 1, "log", 0},
    {10, OpKind::Binary, 2, "**", 0},
    {11, OpKind::Unary, 1, "sin", 0},
    {12, OpKind::Unary, 1, "cos", 0},
    {13, OpKind::Unary, 1, "tan", 0},
    {14, OpKind::Unary, 1, "asin", 0},
    {15, OpKind::Unary, 1, "acos", 0},
    {16, OpKind::Unary, 1, "atan", 0},
    {17, OpKind::Unary, 1, "sinh", 0},
    {18, OpKind::Unary, 1, "cosh", 0},
    {19, OpKind::Unary, 1, "tanh", 0},
    {20, OpKind::Unary, 1, "coth", 0},
    {21, OpKind::IntLiteral, 0, "-3", -3},
    {22, OpKind::IntLiteral, 0, "-2", -2},
    {23, OpKind::IntLiteral, 0, "-1", -1},
    {24, OpKind::IntLiteral, 0, "0", 0},
    {25, OpKind::IntLiteral, 0, "1", 1},
    {26, OpKind::IntLiteral, 0, "2", 2},
    {27, OpKind::IntLiteral, 0, "3", 3},
    {28, OpKind::IntLiteral, 0, "4", 4},
    {29, OpKind::IntLiteral, 0, "5", 5},
}};
}  // namespace detail

inline const OpInfo& op_info(int id) {
  if (id < 0 || id >= kNumActions) {
    throw UnknownOpError("unknown op id " + std::to_string(id));
  }
  return detail::kOpTable[static_cast<std::size_t>(id)];
}

inline int op_arity(int id) { return op_info(id).arity; }

/// Id for an integer literal in -3..5.
inline int literal_op(int value) {
  if (value < -3 || value > 5) {
    throw UnknownOpError("no literal op for value " + std::to_string(value));
  }
  return kLitBase + (value + 3);
}

}  // namespace symq
