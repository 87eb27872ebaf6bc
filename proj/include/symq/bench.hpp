#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "symq/datagen.hpp"
#include "symq/env.hpp"
#include "symq/errors.hpp"
#include "symq/infer.hpp"
#include "symq/model.hpp"
#include "symq/parse.hpp"
#include "symq/train.hpp"

namespace symq {

struct BenchEntry {
  std::string label;
  std::string expression;
  int n_vars = 1;
};

struct BenchmarkSuite {
  std::string name;
  std::vector<BenchEntry> entries;
};

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = {"nguyen", "constant", "keijzer",
                                                 "r", "feynman"};
  return names;
}

/// Fixture tables. x maps to x_1, y to x_2; pi is folded into a bound
/// constant; exponents outside the -3..5 literal range bind as constants.
inline BenchmarkSuite load_suite(const std::string& name) {
  BenchmarkSuite s;
  s.name = name;
  if (name == "nguyen") {
    s.entries = {
        {"Nguyen-1", "x**3+x**2+x", 1},
        {"Nguyen-2", "x**4+x**3+x**2+x", 1},
        {"Nguyen-3", "x**5+x**4+x**3+x**2+x", 1},
        {"Nguyen-4", "x**6+x**5+x**4+x**3+x**2+x", 1},
        {"Nguyen-5", "sin(x**2)*cos(x)-1", 1},
        {"Nguyen-6", "sin(x)+sin(x+x**2)", 1},
        {"Nguyen-7", "ln(x)+ln(x**2+1)", 1},
        {"Nguyen-8", "sqrt(x)", 1},
        {"Nguyen-9", "sin(x)+sin(y)", 2},
        {"Nguyen-10", "2*sin(x)*cos(y)", 2},
        {"Nguyen-11", "x**y", 2},
        {"Nguyen-12", "x**4-x**3+0.5*y**2-y", 2},
    };
  } else if (name == "constant") {
    s.entries = {
        {"Constant-1", "3.39*x**3+2.12*x**2+1.78*x", 1},
        {"Constant-2", "sin(x**2)*cos(x)-0.75", 1},
        {"Constant-3", "sin(1.5*x)*cos(0.5*y)", 2},
        {"Constant-4", "2.7*x**y", 2},
        {"Constant-5", "sqrt(1.23*x)", 1},
        {"Constant-6", "x**0.423", 1},
        {"Constant-7", "2*sin(1.3*x)*cos(y)", 2},
        {"Constant-8", "ln(x+1.4)+ln(x**2+1.3)", 1},
    };
  } else if (name == "keijzer") {
    s.entries = {
        {"Keijzer-3", "0.3*x*sin(2*pi*x)", 1},
        {"Keijzer-4", "x**3*exp(-x)*cos(x)*sin(x)*(sin(x**2)*cos(x)-1)", 1},
        {"Keijzer-6", "(x*(x+1))/2", 1},
        {"Keijzer-7", "ln(x)", 1},
        {"Keijzer-8", "sqrt(x)", 1},
        {"Keijzer-9", "ln(x+sqrt(x**2+1))", 1},
        {"Keijzer-10", "x**y", 2},
        {"Keijzer-11", "x*y+sin((x-1)*(y-1))", 2},
        {"Keijzer-12", "x**4-x**3+(y**2)/2-y", 2},
        {"Keijzer-13", "6*sin(x)*cos(y)", 2},
        {"Keijzer-14", "8/(2+x**2+y**2)", 2},
        {"Keijzer-15", "(x**3)/5+(y**3)/2-y-x", 2},
    };
  } else if (name == "r") {
    s.entries = {
        {"R-1", "((x+1)**3)/(x**2-x+1)", 1},
        {"R-2", "(x**5-3*x**3+1)/(x**2+1)", 1},
        {"R-3", "(x**6+x**5)/(x**4+x**3+x**2+x)", 1},
    };
  } else if (name == "feynman") {
    s.entries = {
        {"Feynman-1", "exp(-(x**2)/2)/sqrt(2*pi)", 1},
        {"Feynman-2", "exp(-((x/y)**2)/2)/(sqrt(2*pi)*y)", 2},
        {"Feynman-3", "x*y", 2},
        {"Feynman-4", "x*y", 2},
        {"Feynman-5", "0.5*x*y**2", 2},
        {"Feynman-6", "x/y", 2},
        {"Feynman-7", "sin(x)/sin(y)", 2},
        {"Feynman-8", "x/y", 2},
        {"Feynman-9", "(x*y)/(2*pi)", 2},
        {"Feynman-10", "1.5*x*y", 2},
        {"Feynman-11", "x/(4*pi*y**2)", 2},
        {"Feynman-12", "(x*y**2)/x", 2},
        {"Feynman-13", "x*y**2", 2},
        {"Feynman-14", "x/(2*(1+y))", 2},
        {"Feynman-15", "(x*y)/(2*pi)", 2},
    };
  } else {
    throw UnknownSuiteError("unknown suite '" + name + "'");
  }
  return s;
}

/// CRC-32 over every label and expression; guards the fixtures against edits.
inline std::uint32_t suite_checksum(const BenchmarkSuite& s) {
  std::string blob = s.name;
  for (const BenchEntry& e : s.entries) {
    blob += '\n';
    blob += e.label;
    blob += '|';
    blob += e.expression;
  }
  return detail::crc32(reinterpret_cast<const unsigned char*>(blob.data()),
                       blob.size());
}

/// Held-out evaluation points for one entry: datagen's rejection sampler on
/// the entry's ground truth, with the seed fixed per suite.
inline PointSet entry_points(const BenchEntry& entry, int n,
                             std::uint64_t suite_seed) {
  ParsedExpr parsed = parse_skeleton(entry.expression);
  if (!parsed.fully_bound) {
    throw EntryMismatchError("entry " + entry.label + " has unbound constants");
  }
  GenConfig cfg;
  cfg.n_skeletons = 1;
  std::mt19937_64 rng = make_rng(suite_seed, std::hash<std::string>{}(entry.label));
  return sample_points(parsed.tree, parsed.constants, n, rng, cfg);
}

struct EntryScore {
  std::string label;
  bool recovered = false;
  double r2 = 0.0;
};

struct SuiteReport {
  std::string suite;
  std::vector<EntryScore> rows;
  double recovery_rate = 0.0;
  double mean_r2 = 0.0;
};

/// Scores ranked predictions against a suite. Recovery compares the top
/// prediction's canonical form with the ground truth's (constants -> C);
/// r2 re-evaluates the top prediction on the held-out points.
inline SuiteReport score(const BenchmarkSuite& suite,
                         const std::vector<std::vector<FitResult>>& preds,
                         const std::vector<PointSet>& holdout) {
  if (preds.size() != suite.entries.size() ||
      holdout.size() != suite.entries.size()) {
    throw EntryMismatchError("score: one prediction list and point set per entry");
  }
  SuiteReport rep;
  rep.suite = suite.name;
  for (std::size_t i = 0; i < suite.entries.size(); ++i) {
    EntryScore row;
    row.label = suite.entries[i].label;
    if (!preds[i].empty()) {
      const FitResult& top = preds[i].front();
      std::string truth_canon = parse_skeleton(suite.entries[i].expression).tree.canonical();
      row.recovered = (top.canonical == truth_canon);
      ExprTree tree = ExprTree::replay(top.actions);
      const PointSet& pts = holdout[i];
      std::vector<double> y(pts.size()), yhat(pts.size());
      bool ok = true;
      for (std::size_t k = 0; k < pts.size(); ++k) {
        y[k] = pts[k].y;
        std::optional<double> v = tree.evaluate(top.constants, pts[k].x1, pts[k].x2);
        if (!v) { ok = false; break; }
        yhat[k] = *v;
      }
      row.r2 = ok ? r_squared(y, yhat) : 0.0;
    }
    rep.rows.push_back(std::move(row));
  }
  double rec = 0.0;
  double r2sum = 0.0;
  for (const EntryScore& r : rep.rows) {
    rec += r.recovered ? 1.0 : 0.0;
    r2sum += r.r2;
  }
  rep.recovery_rate = rec / static_cast<double>(rep.rows.size());
  rep.mean_r2 = r2sum / static_cast<double>(rep.rows.size());
  return rep;
}

/// Count-weighted average across suites (Table-6 style aggregation).
inline double weighted_average(std::span<const double> values,
                               std::span<const long> counts) {
  if (values.size() != counts.size() || values.empty()) {
    throw Error("weighted_average: mismatched inputs");
  }
  double num = 0.0;
  long den = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    num += values[i] * static_cast<double>(counts[i]);
    den += counts[i];
  }
  return num / static_cast<double>(den);
}

// ---- step-wise error analysis ------------------------------------------------

struct ErrorAnalysis {
  // error rate per progress decile (t/T binned into 10)
  std::array<long long, 10> bin_total{};
  std::array<long long, 10> bin_errors{};
  // per demo-op decision/error counts, plus corpus op frequency (Fig. 4 pair)
  std::array<long long, kNumActions> op_total{};
  std::array<long long, kNumActions> op_errors{};
  std::array<long long, kNumActions> op_frequency{};
  // wrong_choice[demo][chosen], normalized per demo row over errors
  std::array<std::array<double, kNumActions>, kNumActions> wrong_choice{};
  long long total = 0;
  long long errors = 0;

  double bin_error_rate(int b) const {
    return bin_total[static_cast<std::size_t>(b)] == 0
               ? 0.0
               : static_cast<double>(bin_errors[static_cast<std::size_t>(b)]) /
                     static_cast<double>(bin_total[static_cast<std::size_t>(b)]);
  }
  double error_fraction() const {
    return total == 0 ? 0.0 : static_cast<double>(errors) / static_cast<double>(total);
  }
};

/// Step-wise decisions with ground-truth prefixes, exactly as step_accuracy
/// counts them, plus the breakdowns behind Figs. 3-5.
inline ErrorAnalysis error_analysis(const QModel& model,
                                    std::span<const CorpusRecord> records) {
  ErrorAnalysis ea;
  std::array<std::array<long long, kNumActions>, kNumActions> wrong_counts{};
  for (const CorpusRecord& rec : records) {
    std::vector<double> zp = model.encode_points(rec.points);
    const auto T = rec.demo_actions.size();
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<double> zt =
          model.tree_forward(std::span<const int>(rec.demo_actions).first(t)).zt;
      int chosen = argmax_action(model.q_values(zp, zt));
      const int demo = rec.demo_actions[t];
      const int bin = std::min<int>(9, static_cast<int>(10 * t / T));
      ++ea.total;
      ++ea.bin_total[static_cast<std::size_t>(bin)];
      ++ea.op_total[static_cast<std::size_t>(demo)];
      if (chosen != demo) {
        ++ea.errors;
        ++ea.bin_errors[static_cast<std::size_t>(bin)];
        ++ea.op_errors[static_cast<std::size_t>(demo)];
        ++wrong_counts[static_cast<std::size_t>(demo)][static_cast<std::size_t>(chosen)];
      }
    }
    for (int a : rec.demo_actions) ++ea.op_frequency[static_cast<std::size_t>(a)];
  }
  for (int d = 0; d < kNumActions; ++d) {
    if (ea.op_errors[static_cast<std::size_t>(d)] == 0) continue;
    for (int c = 0; c < kNumActions; ++c) {
      ea.wrong_choice[static_cast<std::size_t>(d)][static_cast<std::size_t>(c)] =
          static_cast<double>(wrong_counts[static_cast<std::size_t>(d)][static_cast<std::size_t>(c)]) /
          static_cast<double>(ea.op_errors[static_cast<std::size_t>(d)]);
    }
  }
  return ea;
}

// ---- report / plot-data emitters ---------------------------------------------

inline void write_suite_report(std::ostream& os, const SuiteReport& rep) {
  os << "suite: " << rep.suite << '\n';
  for (const EntryScore& r : rep.rows) {
    os << r.label << "\trecovered=" << (r.recovered ? 1 : 0) << "\tr2=" << r.r2
       << '\n';
  }
  os << "aggregates: recovery_rate=" << rep.recovery_rate
     << " mean_r2=" << rep.mean_r2 << '\n';
}

inline void write_progress_csv(std::ostream& os, const ErrorAnalysis& ea) {
  os << "bin,total,errors,error_rate\n";
  for (int b = 0; b < 10; ++b) {
    os << b << ',' << ea.bin_total[static_cast<std::size_t>(b)] << ','
       << ea.bin_errors[static_cast<std::size_t>(b)] << ',' << ea.bin_error_rate(b)
       << '\n';
  }
}

inline void write_op_freq_csv(std::ostream& os, const ErrorAnalysis& ea) {
  os << "op,name,decisions,errors,corpus_frequency\n";
  for (int a = 0; a < kNumActions; ++a) {
    os << a << ',' << op_info(a).name << ','
       << ea.op_total[static_cast<std::size_t>(a)] << ','
       << ea.op_errors[static_cast<std::size_t>(a)] << ','
       << ea.op_frequency[static_cast<std::size_t>(a)] << '\n';
  }
}

inline void write_wrong_choice_csv(std::ostream& os, const ErrorAnalysis& ea) {
  os << "demo_op";
  for (int c = 0; c < kNumActions; ++c) os << ",chosen_" << c;
  os << '\n';
  for (int d = 0; d < kNumActions; ++d) {
    os << d;
    for (int c = 0; c < kNumActions; ++c) {
      os << ',' << ea.wrong_choice[static_cast<std::size_t>(d)][static_cast<std::size_t>(c)];
    }
    os << '\n';
  }
}

}  // namespace symq
