#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "symq/datagen.hpp"
#include "symq/errors.hpp"
#include "symq/expr.hpp"
#include "symq/model.hpp"
#include "symq/rng.hpp"

namespace symq {

struct TrainConfig {
  int batch_size = 512;
  double learning_rate = 1e-4;
  double alpha = 0.2;          // contrastive weight
  double tau = 0.07;           // contrastive temperature
  double grad_clip = 1.0;      // max global gradient norm
  int steps = 0;
  int eval_interval = 100;
  int eval_records = 256;      // cap on records used for accuracy metrics
  bool contrastive = true;
  bool early_stop = false;     // stop once step and equation accuracy hit 1.0
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 2 || learning_rate <= 0.0 || alpha < 0.0 || tau <= 0.0 ||
        grad_clip <= 0.0 || steps < 0 || eval_interval <= 0) {
      throw Error("invalid training configuration");
    }
  }
};

/// Eq.-3 objective for one decision: cross-entropy of the demonstrated action
/// under the softmax of the Q-values.
inline double offline_loss(std::span<const double> q, int demo) {
  if (demo < 0 || demo >= static_cast<int>(q.size())) {
    throw UnknownOpError("offline_loss: demo action out of range");
  }
  for (double v : q) {
    if (!std::isfinite(v)) throw NonFiniteInputError("offline_loss: non-finite q");
  }
  double qmax = *std::max_element(q.begin(), q.end());
  double z = 0.0;
  for (double v : q) z += std::exp(v - qmax);
  return std::log(z) + qmax - q[static_cast<std::size_t>(demo)];
}

/// d offline_loss / d q = softmax(q) - onehot(demo).
inline std::vector<double> offline_loss_grad(std::span<const double> q, int demo) {
  double qmax = *std::max_element(q.begin(), q.end());
  double z = 0.0;
  for (double v : q) z += std::exp(v - qmax);
  std::vector<double> g(q.size());
  for (std::size_t k = 0; k < q.size(); ++k) {
    g[k] = std::exp(q[k] - qmax) / z - (static_cast<int>(k) == demo ? 1.0 : 0.0);
  }
  return g;
}

/// Eq.-4 supervised contrastive loss on raw embeddings (normalized here).
/// labels[i] == labels[j] marks a positive pair.
inline double contrastive_loss(const std::vector<std::vector<double>>& emb,
                               const std::vector<int>& labels, double tau) {
  const std::size_t n = emb.size();
  if (labels.size() != n) throw Error("contrastive_loss: label count mismatch");
  if (n < 2) throw NoPositivesError("contrastive_loss: batch too small");
  std::vector<std::vector<double>> u(n);
  for (std::size_t i = 0; i < n; ++i) {
    double nm = 0.0;
    for (double v : emb[i]) nm += v * v;
    nm = std::max(std::sqrt(nm), 1e-12);
    u[i].resize(emb[i].size());
    for (std::size_t d = 0; d < emb[i].size(); ++d) u[i][d] = emb[i][d] / nm;
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> sims;
    std::vector<double> pos_sims;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double dot = 0.0;
      for (std::size_t d = 0; d < u[i].size(); ++d) dot += u[i][d] * u[j][d];
      sims.push_back(dot / tau);
      if (labels[j] == labels[i]) pos_sims.push_back(dot / tau);
    }
    if (pos_sims.empty()) {
      throw NoPositivesError("contrastive_loss: entry " + std::to_string(i) +
                             " has no positives");
    }
    double smax = *std::max_element(sims.begin(), sims.end());
    double z = 0.0;
    for (double s : sims) z += std::exp(s - smax);
    double logz = std::log(z) + smax;
    for (double s : pos_sims) {
      loss += (logz - s) / static_cast<double>(pos_sims.size());
    }
  }
  return loss / static_cast<double>(n);
}

/// Eq.-5 combined loss for a prepared batch (no parameter update).
inline LossBreakdown total_loss(const QModel& model, const Batch& batch,
                                const TrainConfig& cfg) {
  GradBundle scratch = model.zero_grads();
  LossSpec spec{cfg.alpha, cfg.tau, cfg.contrastive && cfg.alpha > 0.0};
  return model.backward(batch, spec, scratch);
}

inline int argmax_action(std::span<const double> q) {
  int best = 0;
  for (int a = 1; a < static_cast<int>(q.size()); ++a) {
    if (q[static_cast<std::size_t>(a)] > q[static_cast<std::size_t>(best)]) best = a;
  }
  return best;
}

/// Fraction of (ground-truth prefix, demo action) decisions where the model's
/// argmax matches the demonstration.
inline double step_accuracy(const QModel& model,
                            std::span<const CorpusRecord> records) {
  long long correct = 0;
  long long total = 0;
  for (const CorpusRecord& rec : records) {
    std::vector<double> zp = model.encode_points(rec.points);
    for (std::size_t t = 0; t < rec.demo_actions.size(); ++t) {
      auto prefix = std::span<const int>(rec.demo_actions).first(t);
      std::vector<double> zt = model.tree_forward(prefix).zt;
      std::vector<double> q = model.q_values(zp, zt);
      if (argmax_action(q) == rec.demo_actions[t]) ++correct;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

/// Greedy decode with the model's own choices fed back.
inline std::vector<int> greedy_decode(const QModel& model, const PointSet& pts,
                                      int max_len) {
  std::vector<double> zp = model.encode_points(pts);
  ExprTree tree;
  std::vector<int> actions;
  while (!tree.complete() && tree.length() < max_len) {
    std::vector<double> zt = model.tree_forward(actions).zt;
    int a = argmax_action(model.q_values(zp, zt));
    tree = tree.apply(a);
    actions.push_back(a);
  }
  return actions;
}

/// Fraction of records whose full greedy decode equals demo_actions.
inline double equation_accuracy(const QModel& model,
                                std::span<const CorpusRecord> records) {
  if (records.empty()) return 0.0;
  long long exact = 0;
  for (const CorpusRecord& rec : records) {
    std::vector<int> decoded =
        greedy_decode(model, rec.points, model.dims().max_len);
    if (decoded == rec.demo_actions) ++exact;
  }
  return static_cast<double>(exact) / static_cast<double>(records.size());
}

namespace detail {

// Records grouped by canonical skeleton so contrastive positives exist.
struct SkeletonGroups {
  std::vector<std::vector<std::size_t>> groups;  // record indices per skeleton
  std::vector<int> group_of;                     // per record
};

inline SkeletonGroups group_by_skeleton(std::span<const CorpusRecord> corpus) {
  SkeletonGroups g;
  g.group_of.resize(corpus.size());
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    std::string canon = ExprTree::replay(corpus[i].demo_actions).canonical();
    auto [it, inserted] = index.try_emplace(canon, g.groups.size());
    if (inserted) g.groups.emplace_back();
    g.groups[it->second].push_back(i);
    g.group_of[i] = static_cast<int>(it->second);
  }
  return g;
}

// B/2 skeletons, two instantiations each (the "multiviewed" construction).
inline Batch make_batch(std::span<const CorpusRecord> corpus,
                        const SkeletonGroups& g, int batch_size,
                        std::mt19937_64& rng) {
  Batch batch;
  const int n_groups = batch_size / 2;
  std::uniform_int_distribution<std::size_t> pick_group(0, g.groups.size() - 1);
  for (int k = 0; k < n_groups; ++k) {
    const std::size_t gi = pick_group(rng);
    const auto& members = g.groups[gi];
    std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
    std::size_t a = pick(rng);
    std::size_t b = pick(rng);
    if (members.size() > 1) {
      while (b == a) b = pick(rng);
    }
    for (std::size_t ri : {members[a], members[b]}) {
      const CorpusRecord& rec = corpus[ri];
      const int pidx = static_cast<int>(batch.points.size());
      batch.points.push_back(&rec.points);
      batch.labels.push_back(static_cast<int>(gi));
      for (std::size_t t = 0; t < rec.demo_actions.size(); ++t) {
        DecisionItem item;
        item.points_idx = pidx;
        item.prefix.assign(rec.demo_actions.begin(),
                           rec.demo_actions.begin() + static_cast<long>(t));
        item.target = rec.demo_actions[t];
        batch.items.push_back(std::move(item));
      }
    }
  }
  return batch;
}

}  // namespace detail

struct TrainResult {
  double final_loss = 0.0;
  double final_step_acc = 0.0;
  double final_eq_acc = 0.0;
};

/// SGD loop over the corpus. Metrics (ndjson) go to `metrics` when non-null.
/// Deterministic for a fixed config on one thread.
inline TrainResult fit(QModel& model, std::span<const CorpusRecord> corpus,
                       const TrainConfig& cfg, std::ostream* metrics = nullptr) {
  cfg.validate();
  if (corpus.empty()) throw EmptyCorpusError("fit: empty corpus");
  detail::SkeletonGroups groups = detail::group_by_skeleton(corpus);
  std::mt19937_64 rng = make_rng(cfg.seed, 0x7124171ULL);
  const auto t0 = std::chrono::steady_clock::now();
  auto eval_span = corpus.first(
      std::min<std::size_t>(corpus.size(), static_cast<std::size_t>(cfg.eval_records)));

  TrainResult result;
  LossSpec spec{cfg.alpha, cfg.tau, cfg.contrastive && cfg.alpha > 0.0};
  for (int step = 1; step <= cfg.steps; ++step) {
    Batch batch = detail::make_batch(corpus, groups, cfg.batch_size, rng);
    GradBundle grads = model.zero_grads();
    LossBreakdown loss = model.backward(batch, spec, grads);
    clip_grads(grads, cfg.grad_clip);
    sgd_step(model, grads, cfg.learning_rate);
    ++model.train_step;
    result.final_loss = loss.total;

    if (step % cfg.eval_interval == 0 || step == cfg.steps) {
      result.final_step_acc = step_accuracy(model, eval_span);
      result.final_eq_acc = equation_accuracy(model, eval_span);
      if (metrics) {
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                .count();
        nlohmann::json line = {
            {"step", model.train_step},
            {"loss", loss.total},
            {"offline_loss", loss.offline},
            {"contrastive_loss", loss.contrastive},
            {"step_acc", result.final_step_acc},
            {"eq_acc", result.final_eq_acc},
            {"wallclock_s", wall},
        };
        (*metrics) << line.dump() << '\n';
      }
      if (cfg.early_stop && result.final_step_acc >= 1.0 &&
          result.final_eq_acc >= 1.0) {
        break;
      }
    }
  }
  return result;
}

}  // namespace symq
