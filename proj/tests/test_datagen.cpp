#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "symq/datagen.hpp"
#include "symq/parse.hpp"
#include "test_util.hpp"

using namespace symq;

TEST_CASE("source-operator weight table") {
  double total = 0.0;
  for (const auto& e : detail::kSrcOps) total += e.weight;
  CHECK(total == 65.0);
  CHECK(detail::kSrcOps[0].weight == 10.0);  // add
  CHECK(detail::kSrcOps[1].weight == 10.0);  // mul
  CHECK(detail::kSrcOps[2].weight == 5.0);   // sub
  CHECK(detail::kSrcOps[3].weight == 5.0);   // div
  CHECK(detail::kSrcOps[13].weight == 1.0);  // pow5
}

TEST_CASE("max_ops = 1 gives a single variable leaf") {
  GenConfig cfg;
  cfg.n_skeletons = 1;
  cfg.max_ops = 1;
  std::mt19937_64 rng = make_rng(11, 0);
  for (int i = 0; i < 50; ++i) {
    ExprTree t = sample_skeleton(rng, cfg);
    CHECK(t.length() == 1);
    int a = t.actions().front();
    CHECK((a == kX1 || a == kX2));
  }
}

TEST_CASE("sampled skeletons satisfy the leaf constraints") {
  GenConfig cfg;
  cfg.n_skeletons = 1;
  std::mt19937_64 rng = make_rng(12, 0);
  for (int i = 0; i < 500; ++i) {
    ExprTree t = sample_skeleton(rng, cfg);
    CHECK(t.complete());
    CHECK(t.length() <= cfg.max_ops);
    bool has_var = false;
    for (int a : t.actions()) {
      if (a == kX1 || a == kX2) has_var = true;
    }
    CHECK(has_var);
    CHECK(t.n_constants() <= 5);
  }
}

TEST_CASE("operator frequencies track the weight table (quick check)") {
  GenConfig cfg;
  cfg.n_skeletons = 1;
  std::mt19937_64 rng = make_rng(13, 0);
  std::array<long long, 14> counts{};
  for (int i = 0; i < 2000; ++i) {
    auto c = testutil::count_src_ops(sample_skeleton(rng, cfg));
    for (std::size_t k = 0; k < counts.size(); ++k) counts[k] += c[k];
  }
  long long total = 0;
  for (long long c : counts) total += c;
  REQUIRE(total > 0);
  double stat = 0.0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    double expected = static_cast<double>(total) * detail::kSrcOps[k].weight / 65.0;
    double diff = static_cast<double>(counts[k]) - expected;
    stat += diff * diff / expected;
  }
  CHECK(testutil::chi2_pvalue(stat, 13) > 0.001);
}

TEST_CASE("instantiate_constants") {
  GenConfig cfg;
  cfg.n_skeletons = 1;
  std::mt19937_64 rng = make_rng(14, 0);

  ExprTree no_c = parse_skeleton("x_1+x_2").tree;
  CHECK(instantiate_constants(no_c, rng, cfg).empty());

  ExprTree cx = parse_skeleton("c*x_1").tree;
  std::set<double> values;
  for (int i = 0; i < 50; ++i) {
    auto v = instantiate_constants(cx, rng, cfg);
    REQUIRE(v.size() == 1);
    values.insert(v[0]);
  }
  CHECK(values.size() == 50);  // continuous draws, all distinct

  for (int i = 0; i < 10000; ++i) {
    for (double v : instantiate_constants(cx, rng, cfg)) {
      CHECK(std::fabs(v) >= 0.1);
      CHECK(v >= cfg.const_range.lo);
      CHECK(v <= cfg.const_range.hi);
    }
  }

  CHECK_THROWS_AS(instantiate_constants(ExprTree{}.apply(kAdd), rng, cfg),
                  IncompleteTreeError);
}

TEST_CASE("sample_points") {
  GenConfig cfg;
  cfg.n_skeletons = 1;
  std::mt19937_64 rng = make_rng(15, 0);

  ExprTree x1 = parse_skeleton("x_1").tree;
  PointSet p = sample_points(x1, {}, 100, rng, cfg);
  CHECK(p.size() == 100);
  for (const Point& pt : p) CHECK(pt.y == pt.x1);

  ExprTree logx = parse_skeleton("log(x_1)").tree;
  PointSet lp = sample_points(logx, {}, 100, rng, cfg);
  for (const Point& pt : lp) CHECK(pt.x1 > 0.0);

  ExprTree bad = parse_skeleton("1/(x_1+(-1*x_1))").tree;
  CHECK_THROWS_AS(sample_points(bad, {}, 10, rng, cfg), DomainTooSmallError);
}

TEST_CASE("build_corpus cardinality, determinism, validity") {
  GenConfig cfg;
  cfg.n_skeletons = 2;
  cfg.constants_per_skeleton = 3;
  cfg.points_per_expression = 10;
  cfg.seed = 99;
  std::vector<CorpusRecord> corpus = build_corpus(cfg);
  CHECK(corpus.size() == 6);

  std::ostringstream a, b;
  write_corpus(corpus, a);
  write_corpus(build_corpus(cfg), b);
  CHECK(a.str() == b.str());

  std::set<std::string> canons;
  for (const CorpusRecord& rec : corpus) {
    validate_record(rec);
    canons.insert(ExprTree::replay(rec.demo_actions).canonical());
  }
  CHECK(canons.size() == 2);  // skeletons pairwise distinct
}

TEST_CASE("corpus round trip and corrupt line reporting") {
  GenConfig cfg;
  cfg.n_skeletons = 1;
  cfg.constants_per_skeleton = 2;
  cfg.points_per_expression = 5;
  cfg.seed = 7;
  std::vector<CorpusRecord> corpus = build_corpus(cfg);
  std::ostringstream os;
  write_corpus(corpus, os);
  std::istringstream is(os.str());
  std::vector<CorpusRecord> back = read_corpus(is);
  REQUIRE(back.size() == corpus.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].skeleton == corpus[i].skeleton);
    CHECK(back[i].demo_actions == corpus[i].demo_actions);
    CHECK(back[i].constants == corpus[i].constants);
  }

  std::istringstream broken(os.str() + "{not json\n");
  try {
    read_corpus(broken);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("GenConfig validation") {
  GenConfig cfg;
  CHECK_THROWS_AS(cfg.validate(), Error);  // n_skeletons 0
  cfg.n_skeletons = 1;
  cfg.x_range = {1.0, 1.0};
  CHECK_THROWS_AS(cfg.validate(), Error);
}
