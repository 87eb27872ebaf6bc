#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "symq/train.hpp"

using namespace symq;

namespace {

ModelDims tiny_dims() { return ModelDims{16, 16, 32, 2, 16}; }

std::vector<CorpusRecord> small_corpus(std::uint64_t seed, int skeletons = 4,
                                       int instantiations = 3) {
  GenConfig cfg;
  cfg.n_skeletons = skeletons;
  cfg.constants_per_skeleton = instantiations;
  cfg.points_per_expression = 20;
  cfg.max_ops = 12;
  cfg.seed = seed;
  return build_corpus(cfg);
}

// Forces the model's argmax to `action` regardless of input.
void force_action(QModel& m, int action) {
  auto& ow = m.mutable_params()[m.idx("o_w")];
  std::fill(ow.v.begin(), ow.v.end(), 0.0);
  auto& ob = m.mutable_params()[m.idx("o_b")];
  std::fill(ob.v.begin(), ob.v.end(), 0.0);
  ob.v[static_cast<std::size_t>(action)] = 1.0;
}

}  // namespace

TEST_CASE("offline_loss closed forms") {
  std::vector<double> uniform(30, 0.0);
  CHECK(offline_loss(uniform, 7) == doctest::Approx(std::log(30.0)).epsilon(1e-12));

  std::vector<double> saturated(30, 0.0);
  saturated[3] = 50.0;
  CHECK(offline_loss(saturated, 3) == doctest::Approx(0.0).epsilon(1e-12));

  // shift invariance: adding a constant to all q leaves the loss unchanged
  std::vector<double> q = {1.0, -2.0, 0.5, 3.0};
  std::vector<double> shifted = q;
  for (double& v : shifted) v += 100.0;
  CHECK(offline_loss(q, 2) == doctest::Approx(offline_loss(shifted, 2)).epsilon(1e-12));

  CHECK_THROWS_AS(offline_loss(q, -1), UnknownOpError);
  CHECK_THROWS_AS(offline_loss(q, 4), UnknownOpError);
  std::vector<double> bad = {0.0, std::nan("")};
  CHECK_THROWS_AS(offline_loss(bad, 0), NonFiniteInputError);
}

TEST_CASE("offline_loss_grad matches finite differences") {
  std::vector<double> q = {0.3, -1.2, 2.0, 0.0, -0.5};
  const int demo = 2;
  std::vector<double> g = offline_loss_grad(q, demo);
  const double h = 1e-6;
  for (std::size_t k = 0; k < q.size(); ++k) {
    std::vector<double> qp = q, qm = q;
    qp[k] += h;
    qm[k] -= h;
    double fd = (offline_loss(qp, demo) - offline_loss(qm, demo)) / (2.0 * h);
    CHECK(std::fabs(g[k] - fd) < 1e-5);
  }
  // softmax - onehot sums to zero
  double sum = 0.0;
  for (double v : g) sum += v;
  CHECK(sum == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("contrastive_loss closed form and properties") {
  // two aligned members per class, orthogonal across classes, tau = 0.5:
  // every anchor sees one positive at sim 2 and two negatives at sim 0.
  std::vector<std::vector<double>> emb = {
      {1.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {0.0, 1.0}};
  std::vector<int> labels = {0, 0, 1, 1};
  double expected = std::log(std::exp(2.0) + 2.0) - 2.0;
  CHECK(contrastive_loss(emb, labels, 0.5) == doctest::Approx(expected).epsilon(1e-12));

  // scale invariance: embeddings are normalized internally
  std::vector<std::vector<double>> scaled = emb;
  for (double& v : scaled[0]) v *= 7.5;
  for (double& v : scaled[3]) v *= 0.01;
  CHECK(contrastive_loss(scaled, labels, 0.5) ==
        doctest::Approx(contrastive_loss(emb, labels, 0.5)).epsilon(1e-12));

  // a perfectly collapsed same-class pair costs nothing
  std::vector<std::vector<double>> pair = {{0.3, -0.4}, {0.6, -0.8}};
  CHECK(contrastive_loss(pair, {5, 5}, 0.07) == doctest::Approx(0.0).epsilon(1e-12));

  CHECK_THROWS_AS(contrastive_loss(emb, {0, 0, 1, 2}, 0.07), NoPositivesError);
  CHECK_THROWS_AS(contrastive_loss({{1.0}}, {0}, 0.07), NoPositivesError);
  CHECK_THROWS_AS(contrastive_loss(emb, {0, 0}, 0.07), Error);
}

TEST_CASE("total_loss decomposes as offline + alpha * contrastive") {
  QModel m(tiny_dims(), 3);
  std::vector<CorpusRecord> corpus = small_corpus(17);
  auto groups = detail::group_by_skeleton(corpus);
  std::mt19937_64 rng = make_rng(5, 0);
  Batch batch = detail::make_batch(corpus, groups, 8, rng);

  TrainConfig base;
  base.batch_size = 8;
  base.steps = 1;

  TrainConfig off = base;
  off.alpha = 0.0;
  LossBreakdown l0 = total_loss(m, batch, off);
  CHECK(l0.contrastive == 0.0);
  CHECK(l0.total == doctest::Approx(l0.offline).epsilon(1e-12));

  TrainConfig a2 = base;
  a2.alpha = 0.2;
  LossBreakdown l2 = total_loss(m, batch, a2);
  CHECK(l2.total ==
        doctest::Approx(l2.offline + 0.2 * l2.contrastive).epsilon(1e-12));
  CHECK(l2.offline == doctest::Approx(l0.offline).epsilon(1e-12));

  TrainConfig a4 = base;
  a4.alpha = 0.4;
  LossBreakdown l4 = total_loss(m, batch, a4);
  // linear in alpha with a shared contrastive term
  CHECK(l4.contrastive == doctest::Approx(l2.contrastive).epsilon(1e-12));
  CHECK(l4.total - l4.offline ==
        doctest::Approx(2.0 * (l2.total - l2.offline)).epsilon(1e-6));

  // disabling the contrastive flag zeroes the term even with alpha > 0
  TrainConfig noc = a2;
  noc.contrastive = false;
  LossBreakdown ln = total_loss(m, batch, noc);
  CHECK(ln.total == doctest::Approx(l0.offline).epsilon(1e-12));
}

TEST_CASE("argmax_action breaks ties toward the lowest id") {
  std::vector<double> q(30, 0.0);
  CHECK(argmax_action(q) == 0);
  q[12] = 3.0;
  q[20] = 3.0;
  CHECK(argmax_action(q) == 12);
}

TEST_CASE("step_accuracy against an independent count") {
  std::vector<CorpusRecord> corpus = small_corpus(23);
  QModel m(tiny_dims(), 1);
  force_action(m, kX1);
  long long hits = 0;
  long long total = 0;
  for (const CorpusRecord& rec : corpus) {
    for (int a : rec.demo_actions) {
      if (a == kX1) ++hits;
      ++total;
    }
  }
  CHECK(step_accuracy(m, corpus) ==
        doctest::Approx(static_cast<double>(hits) / static_cast<double>(total))
            .epsilon(1e-12));
  CHECK(step_accuracy(m, std::span<const CorpusRecord>{}) == 0.0);
}

TEST_CASE("greedy_decode terminates and respects forced choices") {
  QModel forced(tiny_dims(), 1);
  force_action(forced, kX1);
  PointSet pts = {Point{1.0, 2.0, 3.0}, Point{0.0, 1.0, 1.0}};
  CHECK(greedy_decode(forced, pts, 16) == std::vector<int>{kX1});

  QModel loop(tiny_dims(), 1);
  force_action(loop, kAdd);
  std::vector<int> trunc = greedy_decode(loop, pts, 5);
  CHECK(trunc.size() == 5);
  CHECK_FALSE(ExprTree::replay(std::span<const int>(trunc).first(0)).complete());
}

TEST_CASE("equation_accuracy") {
  std::vector<CorpusRecord> corpus = small_corpus(29, 3, 2);
  QModel m(tiny_dims(), 1);
  force_action(m, kX1);
  long long exact = 0;
  for (const CorpusRecord& rec : corpus) {
    if (rec.demo_actions == std::vector<int>{kX1}) ++exact;
  }
  CHECK(equation_accuracy(m, corpus) ==
        doctest::Approx(static_cast<double>(exact) /
                        static_cast<double>(corpus.size()))
            .epsilon(1e-12));
  CHECK(equation_accuracy(m, std::span<const CorpusRecord>{}) == 0.0);
}

TEST_CASE("make_batch pairs instantiations of the same skeleton") {
  std::vector<CorpusRecord> corpus = small_corpus(31);
  auto groups = detail::group_by_skeleton(corpus);
  CHECK(groups.groups.size() >= 2);
  std::mt19937_64 rng = make_rng(9, 0);
  Batch b = detail::make_batch(corpus, groups, 8, rng);
  REQUIRE(b.points.size() == 8);
  REQUIRE(b.labels.size() == 8);
  for (std::size_t k = 0; k < 8; k += 2) CHECK(b.labels[k] == b.labels[k + 1]);
  CHECK_FALSE(b.items.empty());
  for (const DecisionItem& item : b.items) {
    CHECK(item.points_idx >= 0);
    CHECK(item.points_idx < 8);
    CHECK(item.target >= 0);
    CHECK(item.target < kNumActions);
    // the prefix plus the target is a valid continuation
    ExprTree t = ExprTree::replay(item.prefix);
    CHECK_FALSE(t.complete());
    CHECK_NOTHROW(t.apply(item.target));
  }
}

TEST_CASE("fit reduces the loss on a tiny corpus") {
  std::vector<CorpusRecord> corpus = small_corpus(41, 3, 4);
  QModel m(tiny_dims(), 7);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.learning_rate = 1e-3;
  cfg.steps = 200;
  cfg.eval_interval = 10;
  cfg.seed = 7;
  std::ostringstream metrics;
  TrainResult res = fit(m, corpus, cfg, &metrics);
  CHECK(m.train_step == 200);

  std::vector<double> losses;
  std::istringstream is(metrics.str());
  std::string line;
  while (std::getline(is, line)) {
    nlohmann::json j = nlohmann::json::parse(line);
    losses.push_back(j.at("loss").get<double>());
    CHECK(j.at("offline_loss").get<double>() >= 0.0);
    CHECK(j.at("wallclock_s").get<double>() >= 0.0);
    CHECK(j.at("step").get<std::uint64_t>() <= 200);
  }
  REQUIRE(losses.size() == 20);
  double head = (losses[0] + losses[1] + losses[2]) / 3.0;
  double tail = (losses[17] + losses[18] + losses[19]) / 3.0;
  CHECK(tail < head);
  CHECK(res.final_loss == doctest::Approx(losses.back()).epsilon(1e-12));
}

TEST_CASE("fit is deterministic for a fixed seed") {
  std::vector<CorpusRecord> corpus = small_corpus(43);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.learning_rate = 5e-4;
  cfg.steps = 25;
  cfg.eval_interval = 5;
  cfg.seed = 11;

  QModel a(tiny_dims(), 13);
  QModel b(tiny_dims(), 13);
  fit(a, corpus, cfg);
  fit(b, corpus, cfg);
  REQUIRE(a.params().size() == b.params().size());
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params()[i].v == b.params()[i].v);  // bit-exact
  }
}

TEST_CASE("fit input validation") {
  QModel m(tiny_dims(), 1);
  TrainConfig cfg;
  cfg.steps = 1;
  CHECK_THROWS_AS(fit(m, std::span<const CorpusRecord>{}, cfg), EmptyCorpusError);

  std::vector<CorpusRecord> corpus = small_corpus(47, 2, 2);
  TrainConfig bad = cfg;
  bad.batch_size = 1;
  CHECK_THROWS_AS(fit(m, corpus, bad), Error);
  bad = cfg;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(fit(m, corpus, bad), Error);
  bad = cfg;
  bad.tau = 0.0;
  CHECK_THROWS_AS(fit(m, corpus, bad), Error);
}
