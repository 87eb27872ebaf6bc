#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "symq/model.hpp"

namespace fs = std::filesystem;

namespace {

std::string cli_path() {
  if (const char* p = std::getenv("SYMQ_CLI_BIN")) return p;
  return SYMQ_CLI_PATH;
}

fs::path work_dir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "symq_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  std::string cmd = "\"" + cli_path() + "\" " + args + " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

int run_env(const std::string& env, const std::string& args) {
  std::string cmd = env + " \"" + cli_path() + "\" " + args + " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream is(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    if (!line.empty()) ++n;
  }
  return n;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

const std::string kTinyDims =
    " --kp 8 --kt 8 --hidden 16 --layers 1 --max-len 16 ";

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  CHECK(run("") == 2);
  CHECK(run("gen --skeletons 2") == 2);          // missing -o
  CHECK(run("gen --bogus-flag 1 -o x") == 2);    // unknown flag
  CHECK(run("frobnicate") == 2);                 // unknown subcommand
}

TEST_CASE("gen writes the corpus, runconfig, and is seed-deterministic") {
  fs::path a = work_dir() / "corpus_a.ndjson";
  fs::path b = work_dir() / "corpus_b.ndjson";
  std::string flags = "gen --skeletons 5 --constants 2 --points 8 --max-ops 10 ";
  CHECK(run(flags + "--seed 3 -o " + q(a)) == 0);
  CHECK(line_count(a) == 10);
  CHECK(fs::exists(a.string() + ".runconfig"));
  std::string rc = slurp(a.string() + ".runconfig");
  CHECK(rc.find("[gen]") != std::string::npos);
  CHECK(rc.find("seed=3") != std::string::npos);

  CHECK(run(flags + "--seed 3 -o " + q(b)) == 0);
  CHECK(slurp(a) == slurp(b));

  // $SYMQ_SEED is the fallback when --seed is absent
  fs::path c = work_dir() / "corpus_c.ndjson";
  CHECK(run_env("SYMQ_SEED=3", flags + "-o " + q(c)) == 0);
  CHECK(slurp(c) == slurp(a));

  fs::path d = work_dir() / "corpus_d.ndjson";
  CHECK(run(flags + "--seed 4 -o " + q(d)) == 0);
  CHECK(slurp(d) != slurp(a));
}

TEST_CASE("train produces a loadable checkpoint and metrics; resume continues") {
  fs::path corpus = work_dir() / "train_corpus.ndjson";
  REQUIRE(run("gen --skeletons 4 --constants 2 --points 10 --max-ops 8 --seed 5 -o " +
              q(corpus)) == 0);

  fs::path ck = work_dir() / "model.ck";
  CHECK(run("train -c " + q(corpus) + " -o " + q(ck) + kTinyDims +
            "--steps 5 --batch 4 --eval-interval 2 --seed 1") == 0);
  symq::QModel m = symq::QModel::load(ck.string());
  CHECK(m.train_step == 5);
  CHECK(m.dims().k_p == 8);
  CHECK(m.dims().max_len == 16);

  fs::path metrics = ck.string() + ".metrics.ndjson";
  REQUIRE(fs::exists(metrics));
  std::ifstream is(metrics);
  std::string line;
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    nlohmann::json j = nlohmann::json::parse(line);
    CHECK(j.contains("loss"));
    CHECK(j.contains("step_acc"));
    ++rows;
  }
  CHECK(rows == 3);  // steps 2, 4, and the final step 5

  fs::path ck2 = work_dir() / "model2.ck";
  CHECK(run("train -c " + q(corpus) + " -o " + q(ck2) + " --resume " + q(ck) +
            " --steps 3 --batch 4 --seed 1") == 0);
  CHECK(symq::QModel::load(ck2.string()).train_step == 8);

  CHECK(run("train -c " + q(work_dir() / "missing.ndjson") + " -o " + q(ck) +
            " --steps 1") == 3);
}

TEST_CASE("infer emits ranked ndjson predictions") {
  fs::path pts = work_dir() / "points.ndjson";
  {
    std::ofstream os(pts);
    for (int i = 0; i < 20; ++i) {
      double x = -5.0 + 0.5 * i;
      os << "[" << x << ",0.0," << 3.0 * x << "]\n";
    }
  }
  fs::path ck = work_dir() / "model.ck";
  REQUIRE(fs::exists(ck));  // from the train case

  fs::path preds = work_dir() / "preds.ndjson";
  CHECK(run("infer -m " + q(ck) + " -p " + q(pts) + " -o " + q(preds) +
            " --beam 8 --restarts 2 --max-len 8 --seed 2") == 0);
  std::ifstream is(preds);
  std::string line;
  int rank = 0;
  double prev_r2 = 2.0;
  while (std::getline(is, line)) {
    nlohmann::json j = nlohmann::json::parse(line);
    CHECK(j.at("rank").get<int>() == ++rank);
    double r2 = j.at("r2").get<double>();
    CHECK(r2 <= prev_r2);
    prev_r2 = r2;
    CHECK(!j.at("skeleton").get<std::string>().empty());
    CHECK(!j.at("canonical").get<std::string>().empty());
  }
  CHECK(rank >= 1);

  fs::path bad = work_dir() / "bad_points.ndjson";
  {
    std::ofstream os(bad);
    os << "[1.0, 2.0]\n";  // missing y
  }
  CHECK(run("infer -m " + q(ck) + " -p " + q(bad)) == 3);
  CHECK(run("infer -m " + q(work_dir() / "no_model.ck") + " -p " + q(pts)) == 3);
}

TEST_CASE("online writes a monotone history and a refined checkpoint") {
  fs::path ck = work_dir() / "model.ck";
  fs::path pts = work_dir() / "points.ndjson";
  REQUIRE(fs::exists(ck));
  REQUIRE(fs::exists(pts));

  fs::path refined = work_dir() / "refined.ck";
  fs::path hist = work_dir() / "history.ndjson";
  CHECK(run("online -m " + q(ck) + " -p " + q(pts) + " -o " + q(refined) +
            " --history " + q(hist) + " --budget 3 --restarts 2 --seed 5") == 0);

  std::ifstream is(hist);
  std::string line;
  int iter = 0;
  double prev_rstar = -1.0;
  while (std::getline(is, line)) {
    nlohmann::json j = nlohmann::json::parse(line);
    CHECK(j.at("iter").get<int>() == ++iter);
    double rstar = j.at("r_star").get<double>();
    CHECK(rstar >= prev_rstar);
    prev_rstar = rstar;
  }
  CHECK(iter == 3);
  CHECK(symq::QModel::load(refined.string()).dims().k_p == 8);
}

TEST_CASE("bench scores a suite and rejects unknown names") {
  fs::path ck = work_dir() / "model.ck";
  REQUIRE(fs::exists(ck));
  fs::path rep = work_dir() / "report.txt";
  CHECK(run("bench -m " + q(ck) + " --suite r -o " + q(rep) +
            " --beam 4 --restarts 1 --points 20 --seed 2") == 0);
  std::string out = slurp(rep);
  CHECK(out.find("suite: r") != std::string::npos);
  CHECK(out.find("R-1") != std::string::npos);
  CHECK(out.find("R-3") != std::string::npos);
  CHECK(out.find("aggregates:") != std::string::npos);

  CHECK(run("bench -m " + q(ck) + " --suite nonesuch") == 3);
}

TEST_CASE("analyze emits the three CSV companions") {
  fs::path ck = work_dir() / "model.ck";
  fs::path corpus = work_dir() / "train_corpus.ndjson";
  REQUIRE(fs::exists(ck));
  REQUIRE(fs::exists(corpus));
  fs::path prefix = work_dir() / "analysis";
  CHECK(run("analyze -m " + q(ck) + " -c " + q(corpus) + " -o " + q(prefix)) == 0);
  std::string prog = slurp(prefix.string() + ".progress.csv");
  CHECK(prog.rfind("bin,total,errors,error_rate", 0) == 0);
  std::string freq = slurp(prefix.string() + ".opfreq.csv");
  CHECK(freq.rfind("op,name,decisions,errors,corpus_frequency", 0) == 0);
  std::string wrong = slurp(prefix.string() + ".wrongchoice.csv");
  CHECK(wrong.rfind("demo_op,chosen_0", 0) == 0);
}
