#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "symq/errors.hpp"
#include "symq/expr.hpp"
#include "symq/points.hpp"

namespace symq {

/// Coefficient of determination. May be negative; never NaN.
inline double r_squared(std::span<const double> y, std::span<const double> yhat) {
  if (y.size() != yhat.size()) {
    throw Error("r_squared: length mismatch");
  }
  if (y.size() < 2) {
    throw Error("r_squared: need at least 2 points");
  }
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double ss_tot = 0.0;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_tot += (y[i] - mean) * (y[i] - mean);
    ss_res += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  }
  if (ss_tot <= 0.0) {
    throw DegenerateTargetError("r_squared: Var(y) = 0");
  }
  return 1.0 - ss_res / ss_tot;
}

/// Callback that fits constants of a complete tree against the points and
/// returns the resulting R², or nullopt when fitting fails entirely.
/// Provided by the inference module; injected here to keep the environment
/// independent of the optimizer.
using ConstantFitter =
    std::function<std::optional<double>(const ExprTree&, const PointSet&)>;

struct EnvState {
  std::shared_ptr<const PointSet> points;
  ExprTree tree;

  int step_index() const { return tree.length(); }
  bool terminal() const { return tree.complete(); }
  TreeMatrix matrix(int max_len = kDefaultMaxLen) const {
    return tree.encode_matrix(max_len);
  }

  static EnvState initial(PointSet pts) {
    return EnvState{std::make_shared<PointSet>(std::move(pts)), ExprTree{}};
  }
};

struct Transition {
  EnvState state;
  int action;
  EnvState next_state;
  double reward = 0.0;
  bool done = false;
};

/// Terminal reward: R² of the fitted expression, clamped to [0,1].
/// Any fitting failure counts as 0.
inline double terminal_reward(const ExprTree& tree, const PointSet& points,
                              const ConstantFitter& fit) {
  try {
    std::optional<double> r2 = fit(tree, points);
    if (!r2 || !std::isfinite(*r2)) return 0.0;
    return std::clamp(*r2, 0.0, 1.0);
  } catch (const Error&) {
    return 0.0;
  }
}

inline Transition env_step(const EnvState& state, int action,
                           const ConstantFitter& fit) {
  if (state.terminal()) {
    throw EpisodeFinishedError("step on a terminal state");
  }
  EnvState next{state.points, state.tree.apply(action)};
  Transition tr{state, action, next, 0.0, next.terminal()};
  if (tr.done) {
    tr.reward = terminal_reward(next.tree, *next.points, fit);
  }
  return tr;
}

/// Runs a policy to termination or max_len; a truncated episode earns 0.
template <class Policy>
std::vector<Transition> rollout(PointSet points, Policy&& policy, int max_len,
                                const ConstantFitter& fit) {
  std::vector<Transition> traj;
  EnvState state = EnvState::initial(std::move(points));
  while (!state.terminal() && state.step_index() < max_len) {
    int action = policy(state);
    traj.push_back(env_step(state, action, fit));
    state = traj.back().next_state;
  }
  return traj;
}

}  // namespace symq
