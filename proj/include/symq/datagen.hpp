#pragma once

#include <array>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "symq/errors.hpp"
#include "symq/expr.hpp"
#include "symq/parse.hpp"
#include "symq/points.hpp"
#include "symq/rng.hpp"

namespace symq {

struct Interval {
  double lo;
  double hi;
  bool valid() const { return hi > lo; }
};

struct GenConfig {
  int n_skeletons = 0;
  int constants_per_skeleton = 50;
  int points_per_expression = 100;
  Interval x_range{-10.0, 10.0};
  Interval const_range{-5.0, 5.0};
  int max_ops = kDefaultMaxLen;  // max actions per skeleton
  std::uint64_t seed = 0;

  void validate() const {
    if (n_skeletons <= 0 || constants_per_skeleton <= 0 ||
        points_per_expression <= 0 || max_ops <= 0) {
      throw Error("GenConfig: counts must be positive");
    }
    if (!x_range.valid() || !const_range.valid()) {
      throw Error("GenConfig: degenerate range");
    }
  }
};

struct CorpusRecord {
  std::string skeleton;
  std::vector<double> constants;
  PointSet points;
  std::vector<int> demo_actions;
};

namespace detail {

// Source operators with the generator's unnormalized weights. sub and powN
// are compiled into the 30-action vocabulary on emission.
enum class SrcOp { Add, Mul, Sub, Div, Sqrt, Exp, Ln, Sin, Cos, Tan, Pow2, Pow3, Pow4, Pow5 };

struct SrcEntry {
  SrcOp op;
  double weight;
};

inline constexpr std::array<SrcEntry, 14> kSrcOps = {{
    {SrcOp::Add, 10}, {SrcOp::Mul, 10}, {SrcOp::Sub, 5}, {SrcOp::Div, 5},
    {SrcOp::Sqrt, 4}, {SrcOp::Exp, 4},  {SrcOp::Ln, 4},  {SrcOp::Sin, 4},
    {SrcOp::Cos, 4},  {SrcOp::Tan, 4},  {SrcOp::Pow2, 4}, {SrcOp::Pow3, 4},
    {SrcOp::Pow4, 2}, {SrcOp::Pow5, 1},
}};

inline constexpr double kSrcWeightTotal = 65.0;
inline constexpr int kMaxGenDepth = 8;

inline SrcOp draw_src_op(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, kSrcWeightTotal);
  double r = u(rng);
  for (const SrcEntry& e : kSrcOps) {
    if (r < e.weight) return e.op;
    r -= e.weight;
  }
  return SrcOp::Pow5;
}

inline int draw_leaf(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, 2);
  int pick = u(rng);
  return pick == 0 ? kX1 : (pick == 1 ? kX2 : kConst);
}

// Emits actions in pre-order. `budget` counts remaining action slots shared
// across the whole tree and `reserved` counts sibling subtrees still waiting
// for at least one slot each. An operator is only drawn when its worst case
// (sub: 3 ops + 2 leaves) fits beside those reservations, so every operator
// draw comes from the full weight table and the emitted frequencies match it.
inline void gen_subtree(std::vector<int>& acts, int& budget, int depth,
                        int reserved, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  if (budget - reserved < 5 || depth >= kMaxGenDepth || u01(rng) < 0.20) {
    acts.push_back(draw_leaf(rng));
    --budget;
    return;
  }
  const SrcOp op = draw_src_op(rng);
  switch (op) {
    case SrcOp::Add:
      acts.push_back(kAdd); --budget;
      gen_subtree(acts, budget, depth + 1, reserved + 1, rng);
      gen_subtree(acts, budget, depth + 1, reserved, rng);
      break;
    case SrcOp::Mul:
      acts.push_back(kMul); --budget;
      gen_subtree(acts, budget, depth + 1, reserved + 1, rng);
      gen_subtree(acts, budget, depth + 1, reserved, rng);
      break;
    case SrcOp::Sub:
      // a - b compiles to a + (-1 * b)
      acts.push_back(kAdd);
      budget -= 3;
      gen_subtree(acts, budget, depth + 1, reserved + 1, rng);
      acts.push_back(kMul);
      acts.push_back(literal_op(-1));
      gen_subtree(acts, budget, depth + 1, reserved, rng);
      break;
    case SrcOp::Div:
      acts.push_back(kDiv); --budget;
      gen_subtree(acts, budget, depth + 1, reserved + 1, rng);
      gen_subtree(acts, budget, depth + 1, reserved, rng);
      break;
    case SrcOp::Sqrt: acts.push_back(kSqrt); --budget; gen_subtree(acts, budget, depth + 1, reserved, rng); break;
    case SrcOp::Exp:  acts.push_back(kExp);  --budget; gen_subtree(acts, budget, depth + 1, reserved, rng); break;
    case SrcOp::Ln:   acts.push_back(kLog);  --budget; gen_subtree(acts, budget, depth + 1, reserved, rng); break;
    case SrcOp::Sin:  acts.push_back(kSin);  --budget; gen_subtree(acts, budget, depth + 1, reserved, rng); break;
    case SrcOp::Cos:  acts.push_back(kCos);  --budget; gen_subtree(acts, budget, depth + 1, reserved, rng); break;
    case SrcOp::Tan:  acts.push_back(kTan);  --budget; gen_subtree(acts, budget, depth + 1, reserved, rng); break;
    case SrcOp::Pow2:
    case SrcOp::Pow3:
    case SrcOp::Pow4:
    case SrcOp::Pow5: {
      // powN compiles to **(child, N)
      int n = op == SrcOp::Pow2 ? 2 : op == SrcOp::Pow3 ? 3
              : op == SrcOp::Pow4 ? 4 : 5;
      acts.push_back(kPow);
      budget -= 2;
      gen_subtree(acts, budget, depth + 1, reserved, rng);
      acts.push_back(literal_op(n));
      break;
    }
  }
}

}  // namespace detail

/// Random unary-binary skeleton: internal nodes from the weighted source-op
/// table, leaves uniform over {x1, x2, c}, at least one variable leaf.
inline ExprTree sample_skeleton(std::mt19937_64& rng, const GenConfig& cfg) {
  cfg.validate();
  std::vector<int> acts;
  int budget = cfg.max_ops;
  detail::gen_subtree(acts, budget, 0, 0, rng);
  // Leaf constraints (>= 1 variable, <= 5 c-nodes so BFGS stays tractable)
  // are repaired by redrawing only the leaves: acceptance then never depends
  // on which operators were drawn, keeping their frequencies table-exact.
  std::vector<std::size_t> leaf_slots;
  for (std::size_t i = 0; i < acts.size(); ++i) {
    if (acts[i] == kX1 || acts[i] == kX2 || acts[i] == kConst) {
      leaf_slots.push_back(i);
    }
  }
  for (int attempt = 0; attempt < 100; ++attempt) {
    bool has_var = false;
    int n_const = 0;
    for (std::size_t i : leaf_slots) {
      if (acts[i] == kX1 || acts[i] == kX2) has_var = true;
      if (acts[i] == kConst) ++n_const;
    }
    if (has_var && n_const <= 5) return ExprTree::replay(acts);
    for (std::size_t i : leaf_slots) acts[i] = detail::draw_leaf(rng);
  }
  throw BudgetExceededError("no valid leaf assignment after 100 retries");
}

/// One value per c-node, uniform on const_range excluding (-0.1, 0.1).
inline std::vector<double> instantiate_constants(const ExprTree& skeleton,
                                                 std::mt19937_64& rng,
                                                 const GenConfig& cfg) {
  if (!skeleton.complete()) {
    throw IncompleteTreeError("instantiate_constants on incomplete tree");
  }
  std::uniform_real_distribution<double> u(cfg.const_range.lo, cfg.const_range.hi);
  std::vector<double> out(static_cast<std::size_t>(skeleton.n_constants()));
  for (double& v : out) {
    do {
      v = u(rng);
    } while (std::fabs(v) < 0.1);
  }
  return out;
}

/// n points with x uniform on x_range; points where the expression is
/// Invalid are rejected. Gives up after 50*n rejections.
inline PointSet sample_points(const ExprTree& expr,
                              std::span<const double> constants, int n,
                              std::mt19937_64& rng, const GenConfig& cfg) {
  if (!expr.complete()) throw IncompleteTreeError("sample_points on incomplete tree");
  std::uniform_real_distribution<double> u(cfg.x_range.lo, cfg.x_range.hi);
  PointSet pts;
  pts.reserve(static_cast<std::size_t>(n));
  long rejections = 0;
  const long budget = 50L * n;
  while (static_cast<int>(pts.size()) < n) {
    double x1 = u(rng);
    double x2 = u(rng);
    std::optional<double> y = expr.evaluate(constants, x1, x2);
    if (y) {
      pts.push_back(Point{x1, x2, *y});
    } else if (++rejections > budget) {
      throw DomainTooSmallError("sample_points: rejection budget exhausted");
    }
  }
  return pts;
}

inline nlohmann::json record_to_json(const CorpusRecord& r) {
  nlohmann::json j;
  j["skeleton"] = r.skeleton;
  j["constants"] = r.constants;
  nlohmann::json pts = nlohmann::json::array();
  for (const Point& p : r.points) pts.push_back({p.x1, p.x2, p.y});
  j["points"] = std::move(pts);
  j["demo_actions"] = r.demo_actions;
  return j;
}

inline CorpusRecord record_from_json(const nlohmann::json& j) {
  CorpusRecord r;
  r.skeleton = j.at("skeleton").get<std::string>();
  r.constants = j.at("constants").get<std::vector<double>>();
  for (const auto& p : j.at("points")) {
    r.points.push_back(Point{p.at(0).get<double>(), p.at(1).get<double>(),
                             p.at(2).get<double>()});
  }
  r.demo_actions = j.at("demo_actions").get<std::vector<int>>();
  return r;
}

inline void write_corpus(const std::vector<CorpusRecord>& records,
                         std::ostream& os) {
  for (const CorpusRecord& r : records) {
    os << record_to_json(r).dump() << '\n';
  }
}

inline std::vector<CorpusRecord> read_corpus(std::istream& is) {
  std::vector<CorpusRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw Error("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

/// Checks the CorpusRecord invariants: demo_actions replay to the skeleton
/// and every point evaluates finitely under the stored constants.
inline void validate_record(const CorpusRecord& r) {
  ExprTree replayed = ExprTree::replay(r.demo_actions);
  ExprTree parsed = parse_skeleton(r.skeleton).tree;
  if (!replayed.structurally_equal(parsed)) {
    throw Error("record invariant: demo_actions do not replay to skeleton " +
                r.skeleton);
  }
  for (const Point& p : r.points) {
    std::optional<double> y = replayed.evaluate(r.constants, p.x1, p.x2);
    if (!y || std::fabs(*y - p.y) > 1e-9 * std::max(1.0, std::fabs(p.y))) {
      throw Error("record invariant: stored point does not match expression");
    }
  }
}

/// Full corpus: n_skeletons canonically distinct skeletons, each instantiated
/// constants_per_skeleton times. Deterministic given cfg.seed; each skeleton
/// owns independent rng streams so generation order never matters.
inline std::vector<CorpusRecord> build_corpus(const GenConfig& cfg) {
  cfg.validate();
  std::vector<CorpusRecord> out;
  out.reserve(static_cast<std::size_t>(cfg.n_skeletons) *
              static_cast<std::size_t>(cfg.constants_per_skeleton));
  std::set<std::string> seen;
  for (int i = 0; i < cfg.n_skeletons; ++i) {
    ExprTree skel;
    bool ok = false;
    for (std::uint64_t attempt = 0; attempt < 1000 && !ok; ++attempt) {
      std::mt19937_64 rng =
          make_rng(cfg.seed, 0x5351ULL + static_cast<std::uint64_t>(i) * 1024 + attempt);
      ExprTree candidate = sample_skeleton(rng, cfg);
      std::string canon = candidate.canonical();
      if (seen.count(canon)) continue;
      // probe: the skeleton must admit valid points with non-constant y
      try {
        std::vector<double> probe_c = instantiate_constants(candidate, rng, cfg);
        PointSet probe = sample_points(candidate, probe_c,
                                       cfg.points_per_expression, rng, cfg);
        double y0 = probe.front().y;
        bool varies = false;
        for (const Point& p : probe) {
          if (std::fabs(p.y - y0) > 1e-9) { varies = true; break; }
        }
        if (!varies) continue;
      } catch (const DomainTooSmallError&) {
        continue;
      }
      seen.insert(canon);
      skel = candidate;
      ok = true;
    }
    if (!ok) {
      throw BudgetExceededError("could not find a distinct usable skeleton");
    }
    for (int j = 0; j < cfg.constants_per_skeleton; ++j) {
      CorpusRecord rec;
      rec.skeleton = skel.skeleton();
      rec.demo_actions = skel.actions();
      bool sampled = false;
      for (std::uint64_t attempt = 0; attempt < 100 && !sampled; ++attempt) {
        std::mt19937_64 rng = make_rng(
            cfg.seed,
            0xC0DEULL +
                (static_cast<std::uint64_t>(i) *
                     static_cast<std::uint64_t>(cfg.constants_per_skeleton) +
                 static_cast<std::uint64_t>(j)) *
                    128 +
                attempt);
        try {
          rec.constants = instantiate_constants(skel, rng, cfg);
          rec.points = sample_points(skel, rec.constants,
                                     cfg.points_per_expression, rng, cfg);
          sampled = true;
        } catch (const DomainTooSmallError&) {
          // this instantiation left no valid domain; redraw the constants
        }
      }
      if (!sampled) {
        throw DomainTooSmallError("record " + std::to_string(i) + "/" +
                                  std::to_string(j) +
                                  ": no valid instantiation found");
      }
      out.push_back(std::move(rec));
    }
  }
  return out;
}

}  // namespace symq
