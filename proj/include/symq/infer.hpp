#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "symq/env.hpp"
#include "symq/errors.hpp"
#include "symq/expr.hpp"
#include "symq/model.hpp"
#include "symq/rng.hpp"

namespace symq {

struct Candidate {
  std::vector<int> actions;
  double logp = 0.0;
  bool complete = false;
};

struct FitResult {
  std::string skeleton;
  std::string canonical;
  std::vector<int> actions;
  std::vector<double> constants;
  std::vector<double> yhat;
  double r2 = 0.0;
  double logp = 0.0;
};

namespace detail {

// logp descending, then lexicographically smaller action sequence first
inline bool candidate_before(const Candidate& a, const Candidate& b) {
  if (a.logp != b.logp) return a.logp > b.logp;
  return a.actions < b.actions;
}

inline std::vector<double> log_softmax(std::span<const double> q) {
  double qmax = *std::max_element(q.begin(), q.end());
  double z = 0.0;
  for (double v : q) z += std::exp(v - qmax);
  double logz = std::log(z) + qmax;
  std::vector<double> out(q.size());
  for (std::size_t k = 0; k < q.size(); ++k) out[k] = q[k] - logz;
  return out;
}

}  // namespace detail

/// Log-probability of an action sequence under the model (sum of per-step
/// log-softmax terms along its own prefix).
inline double candidate_logp(const QModel& model, std::span<const double> zp,
                             std::span<const int> actions) {
  double logp = 0.0;
  for (std::size_t t = 0; t < actions.size(); ++t) {
    std::vector<double> zt = model.tree_forward(actions.first(t)).zt;
    std::vector<double> ls = detail::log_softmax(model.q_values(zp, zt));
    logp += ls[static_cast<std::size_t>(actions[t])];
  }
  return logp;
}

/// Beam search over action sequences: live buffer of capacity 2L, output
/// buffer of capacity L. Every live candidate is expanded by all 30 actions
/// each round; completions move to the output once no live candidate can
/// still beat them (log-softmax increments are never positive, so a finished
/// trajectory whose logp exceeds every live logp is final). Output is sorted
/// by logp descending, ties by lexicographic action sequence.
inline std::vector<Candidate> beam_search(const QModel& model,
                                          const PointSet& points, int beam,
                                          int max_len = kDefaultMaxLen) {
  if (beam < 1) throw Error("beam_search: beam must be >= 1");
  const std::vector<double> zp = model.encode_points(points);
  const std::size_t live_cap = 2 * static_cast<std::size_t>(beam);

  struct Live {
    Candidate cand;
    ExprTree tree;
  };
  std::vector<Live> live;
  live.push_back(Live{Candidate{}, ExprTree{}});
  std::vector<Candidate> finished;  // sorted, not yet safe to emit
  std::vector<Candidate> output;

  auto flush_safe = [&](double best_live_logp) {
    std::size_t taken = 0;
    while (taken < finished.size() &&
           output.size() < static_cast<std::size_t>(beam) &&
           finished[taken].logp > best_live_logp) {
      output.push_back(finished[taken]);
      ++taken;
    }
    finished.erase(finished.begin(), finished.begin() + static_cast<long>(taken));
  };

  while (!live.empty() && output.size() < static_cast<std::size_t>(beam)) {
    std::vector<Live> next;
    for (const Live& lv : live) {
      std::vector<double> zt = model.tree_forward(lv.cand.actions).zt;
      std::vector<double> ls = detail::log_softmax(model.q_values(zp, zt));
      for (int a = 0; a < kNumActions; ++a) {
        ExprTree t = lv.tree.apply(a);
        // drop expansions that can no longer finish within max_len
        if (!t.complete() && t.length() + t.frontier_size() > max_len) continue;
        Candidate c;
        c.actions = lv.cand.actions;
        c.actions.push_back(a);
        c.logp = lv.cand.logp + ls[static_cast<std::size_t>(a)];
        if (t.complete()) {
          c.complete = true;
          finished.push_back(std::move(c));
        } else {
          next.push_back(Live{std::move(c), std::move(t)});
        }
      }
    }
    std::sort(next.begin(), next.end(), [](const Live& a, const Live& b) {
      return detail::candidate_before(a.cand, b.cand);
    });
    if (next.size() > live_cap) next.resize(live_cap);
    std::sort(finished.begin(), finished.end(), detail::candidate_before);
    if (finished.size() > static_cast<std::size_t>(beam)) {
      finished.resize(static_cast<std::size_t>(beam));
    }
    const double best_live =
        next.empty() ? -std::numeric_limits<double>::infinity()
                     : next.front().cand.logp;
    flush_safe(best_live);
    live = std::move(next);
  }
  // no live candidates remain: everything still pending is final
  for (Candidate& c : finished) {
    if (output.size() >= static_cast<std::size_t>(beam)) break;
    output.push_back(std::move(c));
  }
  std::sort(output.begin(), output.end(), detail::candidate_before);
  return output;
}

// ---- BFGS constant fitting --------------------------------------------------

struct BfgsConfig {
  int restarts = 20;
  int max_iters = 200;
  double grad_tol = 1e-8;
  double step_tol = 1e-12;
  double fd_h = 1e-6;
  double armijo_c1 = 1e-4;
  double clamp = 1e6;
  double invalid_penalty = 1e10;
  std::uint64_t seed = 0;
};

namespace detail {

inline double fit_objective(const ExprTree& tree, const PointSet& pts,
                            std::span<const double> c, double penalty) {
  double acc = 0.0;
  for (const Point& p : pts) {
    std::optional<double> v = tree.evaluate(c, p.x1, p.x2);
    if (!v) {
      acc += penalty;
    } else {
      double r = *v - p.y;
      acc += r * r;
    }
  }
  return acc / static_cast<double>(pts.size());
}

inline std::vector<double> fit_gradient(const ExprTree& tree,
                                        const PointSet& pts,
                                        std::vector<double> c,
                                        const BfgsConfig& cfg) {
  std::vector<double> g(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double saved = c[i];
    c[i] = saved + cfg.fd_h;
    double fp = fit_objective(tree, pts, c, cfg.invalid_penalty);
    c[i] = saved - cfg.fd_h;
    double fm = fit_objective(tree, pts, c, cfg.invalid_penalty);
    c[i] = saved;
    g[i] = (fp - fm) / (2.0 * cfg.fd_h);
  }
  return g;
}

struct BfgsOutcome {
  std::vector<double> c;
  double mse = std::numeric_limits<double>::infinity();
};

inline BfgsOutcome bfgs_minimize(const ExprTree& tree, const PointSet& pts,
                                 std::vector<double> x, const BfgsConfig& cfg) {
  const std::size_t n = x.size();
  auto clamp_vec = [&](std::vector<double>& v) {
    for (double& c : v) c = std::clamp(c, -cfg.clamp, cfg.clamp);
  };
  clamp_vec(x);
  double fx = fit_objective(tree, pts, x, cfg.invalid_penalty);
  std::vector<double> g = fit_gradient(tree, pts, x, cfg);
  // inverse-Hessian approximation, started at identity
  std::vector<double> h(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) h[i * n + i] = 1.0;

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    double gnorm = 0.0;
    for (double v : g) gnorm += v * v;
    if (std::sqrt(gnorm) <= cfg.grad_tol) break;
    std::vector<double> d(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) d[i] -= h[i * n + j] * g[j];
    }
    double gd = 0.0;
    for (std::size_t i = 0; i < n; ++i) gd += g[i] * d[i];
    if (!std::isfinite(gd) || gd >= 0.0) {
      // not a descent direction: reset to steepest descent
      std::fill(h.begin(), h.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) h[i * n + i] = 1.0;
      for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
      gd = -gnorm;
      if (gd >= 0.0) break;
    }
    // Armijo backtracking
    double t = 1.0;
    std::vector<double> xn(n);
    double fn = fx;
    bool accepted = false;
    while (t >= cfg.step_tol) {
      for (std::size_t i = 0; i < n; ++i) xn[i] = x[i] + t * d[i];
      clamp_vec(xn);
      fn = fit_objective(tree, pts, xn, cfg.invalid_penalty);
      if (std::isfinite(fn) && fn <= fx + cfg.armijo_c1 * t * gd) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    std::vector<double> gn = fit_gradient(tree, pts, xn, cfg);
    std::vector<double> s(n), y(n);
    double step_norm = 0.0;
    double sy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = xn[i] - x[i];
      y[i] = gn[i] - g[i];
      step_norm += s[i] * s[i];
      sy += s[i] * y[i];
    }
    x = xn;
    fx = fn;
    g = std::move(gn);
    if (std::sqrt(step_norm) <= cfg.step_tol) break;
    if (sy > 1e-12) {
      // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
      const double rho = 1.0 / sy;
      std::vector<double> hy(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) hy[i] += h[i * n + j] * y[j];
      }
      double yhy = 0.0;
      for (std::size_t i = 0; i < n; ++i) yhy += y[i] * hy[i];
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          h[i * n + j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) +
                          rho * rho * yhy * s[i] * s[j] + rho * s[i] * s[j];
        }
      }
    } else {
      std::fill(h.begin(), h.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) h[i * n + i] = 1.0;
    }
  }
  return BfgsOutcome{std::move(x), fx};
}

}  // namespace detail

/// Fits the c-slots of a complete tree to the points by MSE, keeping the best
/// of `restarts` BFGS runs (first start all-ones, the rest standard normal).
inline FitResult fit_constants(const ExprTree& tree, const PointSet& points,
                               const BfgsConfig& cfg = {}) {
  if (!tree.complete()) throw IncompleteTreeError("fit_constants: incomplete tree");
  if (points.empty()) throw Error("fit_constants: no points");
  FitResult res;
  res.skeleton = tree.skeleton();
  res.canonical = tree.canonical();
  res.actions = tree.preorder();
  const int nc = tree.n_constants();

  auto finish = [&](std::vector<double> consts) {
    res.constants = std::move(consts);
    res.yhat.resize(points.size());
    std::vector<double> y(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      std::optional<double> v = tree.evaluate(res.constants, points[i].x1, points[i].x2);
      res.yhat[i] = v ? *v : cfg.invalid_penalty;
      y[i] = points[i].y;
    }
    res.r2 = r_squared(y, res.yhat);
  };

  if (nc == 0) {
    finish({});
    return res;
  }

  detail::BfgsOutcome best;
  std::mt19937_64 rng = make_rng(cfg.seed, 0xBF65ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int r = 0; r < std::max(1, cfg.restarts); ++r) {
    std::vector<double> x0(static_cast<std::size_t>(nc), 1.0);
    if (r > 0) {
      for (double& v : x0) v = normal(rng);
    }
    detail::BfgsOutcome out = detail::bfgs_minimize(tree, points, std::move(x0), cfg);
    if (std::isfinite(out.mse) && out.mse < best.mse) best = std::move(out);
  }
  if (!std::isfinite(best.mse)) {
    throw AllRestartsFailedError("fit_constants: all restarts non-finite");
  }
  finish(std::move(best.c));
  return res;
}

/// ConstantFitter adapter for the environment's terminal reward.
inline ConstantFitter make_fitter(int restarts, std::uint64_t seed = 0) {
  BfgsConfig cfg;
  cfg.restarts = restarts;
  cfg.seed = seed;
  return [cfg](const ExprTree& tree, const PointSet& pts) -> std::optional<double> {
    try {
      return fit_constants(tree, pts, cfg).r2;
    } catch (const AllRestartsFailedError&) {
      return std::nullopt;
    }
  };
}

struct PredictConfig {
  int beam = 128;
  int max_len = kDefaultMaxLen;
  BfgsConfig bfgs;  // restarts default 20
};

/// Full decoding pipeline: beam search, canonical dedup, constant fitting,
/// rank by r2 (ties: logp, then action sequence).
inline std::vector<FitResult> predict(const QModel& model, const PointSet& points,
                                      const PredictConfig& cfg = {}) {
  std::vector<Candidate> cands = beam_search(model, points, cfg.beam, cfg.max_len);
  std::unordered_map<std::string, std::size_t> seen;
  std::vector<FitResult> results;
  for (const Candidate& cand : cands) {
    ExprTree tree = ExprTree::replay(cand.actions);
    std::string canon = tree.canonical();
    if (seen.count(canon)) continue;  // beam is sorted: first hit has best logp
    seen.emplace(canon, results.size());
    try {
      FitResult fr = fit_constants(tree, points, cfg.bfgs);
      fr.logp = cand.logp;
      results.push_back(std::move(fr));
    } catch (const AllRestartsFailedError&) {
      // drop unfittable skeletons
    }
  }
  std::sort(results.begin(), results.end(),
            [](const FitResult& a, const FitResult& b) {
              if (a.r2 != b.r2) return a.r2 > b.r2;
              if (a.logp != b.logp) return a.logp > b.logp;
              return a.actions < b.actions;
            });
  return results;
}

}  // namespace symq
