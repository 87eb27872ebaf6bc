#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "symq/env.hpp"
#include "symq/errors.hpp"
#include "symq/infer.hpp"
#include "symq/model.hpp"
#include "symq/rng.hpp"

namespace symq {

/// Replay memory for the risk-seeking update. Each entry is one decision of a
/// sampled trajectory, tagged with that trajectory's terminal reward R_tau.
class MemoryBuffer {
 public:
  struct Entry {
    std::vector<int> prefix;
    int action = 0;
    double r_tau = 0.0;
  };

  explicit MemoryBuffer(std::size_t capacity = 512) : capacity_(capacity) {}

  void push(Entry e) {
    r_star_ = std::max(r_star_, e.r_tau);
    if (entries_.size() >= capacity_) {
      // evict the lowest-reward entry, oldest first among ties
      auto victim = std::min_element(
          entries_.begin(), entries_.end(),
          [](const Entry& a, const Entry& b) { return a.r_tau < b.r_tau; });
      entries_.erase(victim);
    }
    entries_.push_back(std::move(e));
  }

  const std::vector<Entry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  double r_star() const { return r_star_; }

 private:
  std::vector<Entry> entries_;
  std::size_t capacity_;
  double r_star_ = 0.0;  // best trajectory reward ever seen; never decreases
};

struct OnlineConfig {
  int budget = 50;
  double beta = 0.7;
  double learning_rate = 1e-4;
  double grad_clip = 1.0;
  std::size_t buffer_capacity = 512;
  int fit_restarts = 5;  // reward fitting budget, cheaper than inference
  int max_len = kDefaultMaxLen;
  std::uint64_t seed = 0;

  void validate() const {
    if (budget < 1 || beta < 0.0 || beta > 1.0 || learning_rate <= 0.0 ||
        grad_clip <= 0.0 || buffer_capacity < 1 || fit_restarts < 1) {
      throw Error("invalid online configuration");
    }
  }
};

/// Samples a_t ~ softmax(Q(s_t)) until the tree completes or max_len is hit.
/// Returns the action sequence and the completed tree (nullopt if truncated).
struct SampledTrajectory {
  std::vector<int> actions;
  std::optional<ExprTree> tree;  // set only when complete
};

inline SampledTrajectory sample_trajectory(const QModel& model,
                                           std::span<const double> zp,
                                           int max_len, std::mt19937_64& rng) {
  SampledTrajectory out;
  ExprTree tree;
  while (!tree.complete() && tree.length() < max_len) {
    std::vector<double> zt = model.tree_forward(out.actions).zt;
    std::vector<double> q = model.q_values(zp, zt);
    double qmax = *std::max_element(q.begin(), q.end());
    std::vector<double> p(q.size());
    double z = 0.0;
    for (std::size_t a = 0; a < q.size(); ++a) {
      p[a] = std::exp(q[a] - qmax);
      z += p[a];
    }
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double r = u(rng) * z;
    int action = static_cast<int>(q.size()) - 1;
    double acc = 0.0;
    for (std::size_t a = 0; a < p.size(); ++a) {
      acc += p[a];
      if (r < acc) {
        action = static_cast<int>(a);
        break;
      }
    }
    tree = tree.apply(action);
    out.actions.push_back(action);
  }
  if (tree.complete()) out.tree = std::move(tree);
  return out;
}

/// One risk-seeking REINFORCE step (Eq.-6 weights): each buffer entry enters
/// the cross-entropy objective with weight max(0, R_tau - beta * R*), so
/// below-threshold trajectories contribute exactly zero gradient.
inline void reinforce_update(QModel& model, const PointSet& points,
                             const MemoryBuffer& buffer,
                             const OnlineConfig& cfg) {
  if (buffer.empty()) throw EmptyBufferError("reinforce_update: empty buffer");
  Batch batch;
  batch.points.push_back(&points);
  bool any_positive = false;
  for (const MemoryBuffer::Entry& e : buffer.entries()) {
    double w = e.r_tau - cfg.beta * buffer.r_star();
    if (w <= 0.0) w = 0.0;
    if (w > 0.0) any_positive = true;
    batch.items.push_back(DecisionItem{0, e.prefix, e.action, w});
  }
  if (!any_positive) return;  // all entries filtered: parameters unchanged
  GradBundle grads = model.zero_grads();
  model.backward(batch, LossSpec{0.0, 1.0, false}, grads);
  clip_grads(grads, cfg.grad_clip);
  sgd_step(model, grads, cfg.learning_rate);
}

struct HistoryRow {
  int iter = 0;
  double r_tau = 0.0;
  double r_star = 0.0;
  std::string best_skeleton;
};

struct ExploreResult {
  std::optional<FitResult> best;
  std::vector<HistoryRow> history;
};

inline void write_history(std::ostream& os, const std::vector<HistoryRow>& h) {
  for (const HistoryRow& row : h) {
    nlohmann::json line = {{"iter", row.iter},
                           {"r_tau", row.r_tau},
                           {"r_star", row.r_star},
                           {"best_skeleton", row.best_skeleton}};
    os << line.dump() << '\n';
  }
}

/// Online search on one instance: sample, reward, remember, update — budget
/// times. Returns the refined model in place plus the best fitted expression.
inline ExploreResult explore(QModel& model, const PointSet& points,
                             const OnlineConfig& cfg) {
  cfg.validate();
  ExploreResult result;
  MemoryBuffer buffer(cfg.buffer_capacity);
  std::mt19937_64 rng = make_rng(cfg.seed, 0x0211123ULL);
  BfgsConfig fit_cfg;
  fit_cfg.restarts = cfg.fit_restarts;
  fit_cfg.seed = cfg.seed;

  for (int iter = 1; iter <= cfg.budget; ++iter) {
    std::vector<double> zp = model.encode_points(points);
    SampledTrajectory traj = sample_trajectory(model, zp, cfg.max_len, rng);
    double r_tau = 0.0;  // truncated trajectories earn nothing
    if (traj.tree) {
      try {
        FitResult fr = fit_constants(*traj.tree, points, fit_cfg);
        r_tau = std::clamp(fr.r2, 0.0, 1.0);
        if (!result.best || r_tau > std::clamp(result.best->r2, 0.0, 1.0)) {
          result.best = std::move(fr);
        }
      } catch (const Error&) {
        r_tau = 0.0;
      }
    }
    for (std::size_t t = 0; t < traj.actions.size(); ++t) {
      MemoryBuffer::Entry e;
      e.prefix.assign(traj.actions.begin(),
                      traj.actions.begin() + static_cast<long>(t));
      e.action = traj.actions[t];
      e.r_tau = r_tau;
      buffer.push(std::move(e));
    }
    reinforce_update(model, points, buffer, cfg);
    result.history.push_back(HistoryRow{
        iter, r_tau, buffer.r_star(),
        result.best ? result.best->skeleton : std::string{}});
  }
  return result;
}

}  // namespace symq
