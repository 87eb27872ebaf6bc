// Command-line surface for the symbolic-regression pipeline:
//   gen | train | infer | online | bench | analyze
// Exit codes: 0 success, 2 usage/config error, 3 runtime/data error.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "symq/symq.hpp"

namespace {

struct Common {
  std::uint64_t seed = 0;
  bool seed_given = false;
  int jobs = 1;
};

std::uint64_t resolve_seed(const Common& c) {
  if (c.seed_given) return c.seed;
  if (const char* env = std::getenv("SYMQ_SEED")) {
    return std::strtoull(env, nullptr, 10);
  }
  return c.seed;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "root random seed (fallback: $SYMQ_SEED)")
      ->each([&c](const std::string&) { c.seed_given = true; });
  app->add_option("--jobs", c.jobs, "worker count (outputs are order-deterministic)");
}

// Resolved-configuration copy written next to every output.
void write_run_config(const std::string& out_path, const std::string& section,
                      const std::map<std::string, std::string>& kv) {
  std::ofstream os(out_path + ".runconfig");
  os << "[" << section << "]\n";
  for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
}

symq::PointSet read_points_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw symq::Error("cannot open points file: " + path);
  symq::PointSet pts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      pts.push_back(symq::Point{j.at(0).get<double>(), j.at(1).get<double>(),
                                j.at(2).get<double>()});
    } catch (const std::exception& e) {
      throw symq::Error("points line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (pts.empty()) throw symq::Error("points file is empty: " + path);
  return pts;
}

std::vector<symq::CorpusRecord> read_corpus_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw symq::Error("cannot open corpus: " + path);
  return symq::read_corpus(is);
}

int cmd_gen(const Common& common, const symq::GenConfig& cfg_in,
            const std::string& out) {
  symq::GenConfig cfg = cfg_in;
  cfg.seed = resolve_seed(common);
  std::vector<symq::CorpusRecord> corpus = symq::build_corpus(cfg);
  std::ofstream os(out);
  if (!os) throw symq::Error("cannot open output: " + out);
  symq::write_corpus(corpus, os);
  write_run_config(out, "gen",
                   {{"skeletons", std::to_string(cfg.n_skeletons)},
                    {"constants", std::to_string(cfg.constants_per_skeleton)},
                    {"points", std::to_string(cfg.points_per_expression)},
                    {"max_ops", std::to_string(cfg.max_ops)},
                    {"seed", std::to_string(cfg.seed)}});
  std::cout << "wrote " << corpus.size() << " records to " << out << "\n";
  return 0;
}

int cmd_train(const Common& common, const std::string& corpus_path,
              const std::string& out, const std::string& resume,
              symq::ModelDims dims, symq::TrainConfig tcfg,
              std::string metrics_path) {
  tcfg.seed = resolve_seed(common);
  std::vector<symq::CorpusRecord> corpus = read_corpus_file(corpus_path);
  symq::QModel model = resume.empty() ? symq::QModel(dims, tcfg.seed)
                                      : symq::QModel::load(resume);
  if (metrics_path.empty()) metrics_path = out + ".metrics.ndjson";
  std::ofstream metrics(metrics_path);
  symq::TrainResult res = symq::fit(model, corpus, tcfg, &metrics);
  model.save(out);
  write_run_config(out, "train",
                   {{"corpus", corpus_path},
                    {"steps", std::to_string(tcfg.steps)},
                    {"batch_size", std::to_string(tcfg.batch_size)},
                    {"learning_rate", std::to_string(tcfg.learning_rate)},
                    {"alpha", std::to_string(tcfg.alpha)},
                    {"tau", std::to_string(tcfg.tau)},
                    {"grad_clip", std::to_string(tcfg.grad_clip)},
                    {"resume", resume},
                    {"seed", std::to_string(tcfg.seed)}});
  std::cout << "trained to step " << model.train_step << " loss " << res.final_loss
            << " step_acc " << res.final_step_acc << " eq_acc " << res.final_eq_acc
            << "\n";
  return 0;
}

int cmd_infer(const Common& common, const std::string& model_path,
              const std::string& points_path, const std::string& out, int beam,
              int restarts, int max_len) {
  symq::QModel model = symq::QModel::load(model_path);
  symq::PointSet pts = read_points_file(points_path);
  symq::PredictConfig cfg;
  cfg.beam = beam;
  cfg.max_len = std::min(max_len, model.dims().max_len);
  cfg.bfgs.restarts = restarts;
  cfg.bfgs.seed = resolve_seed(common);
  std::vector<symq::FitResult> results = symq::predict(model, pts, cfg);
  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!out.empty()) {
    file.open(out);
    if (!file) throw symq::Error("cannot open output: " + out);
    os = &file;
  }
  int rank = 1;
  for (const symq::FitResult& r : results) {
    nlohmann::json line = {{"rank", rank++},
                           {"skeleton", r.skeleton},
                           {"canonical", r.canonical},
                           {"constants", r.constants},
                           {"r2", r.r2},
                           {"logp", r.logp}};
    (*os) << line.dump() << "\n";
  }
  if (!out.empty()) {
    write_run_config(out, "infer",
                     {{"model", model_path},
                      {"points", points_path},
                      {"beam", std::to_string(beam)},
                      {"restarts", std::to_string(restarts)},
                      {"seed", std::to_string(resolve_seed(common))}});
  }
  return 0;
}

int cmd_online(const Common& common, const std::string& model_path,
               const std::string& points_path, const std::string& out,
               const std::string& history_path, symq::OnlineConfig cfg) {
  cfg.seed = resolve_seed(common);
  symq::QModel model = symq::QModel::load(model_path);
  cfg.max_len = std::min(cfg.max_len, model.dims().max_len);
  symq::PointSet pts = read_points_file(points_path);
  symq::ExploreResult res = symq::explore(model, pts, cfg);
  if (!out.empty()) {
    model.save(out);
    write_run_config(out, "online",
                     {{"model", model_path},
                      {"points", points_path},
                      {"budget", std::to_string(cfg.budget)},
                      {"beta", std::to_string(cfg.beta)},
                      {"learning_rate", std::to_string(cfg.learning_rate)},
                      {"seed", std::to_string(cfg.seed)}});
  }
  if (!history_path.empty()) {
    std::ofstream hs(history_path);
    symq::write_history(hs, res.history);
  } else {
    symq::write_history(std::cout, res.history);
  }
  if (res.best) {
    std::cout << "best: " << res.best->skeleton << " r2=" << res.best->r2 << "\n";
  }
  return 0;
}

int cmd_bench(const Common& common, const std::string& model_path,
              const std::string& suite_name, const std::string& out, int beam,
              int restarts, int n_points) {
  symq::QModel model = symq::QModel::load(model_path);
  std::vector<std::string> names;
  if (suite_name == "all") {
    names = symq::suite_names();
  } else {
    names = {suite_name};
  }
  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!out.empty()) {
    file.open(out);
    if (!file) throw symq::Error("cannot open output: " + out);
    os = &file;
  }
  const std::uint64_t seed = resolve_seed(common);
  std::vector<double> suite_r2;
  std::vector<long> suite_counts;
  for (const std::string& name : names) {
    symq::BenchmarkSuite suite = symq::load_suite(name);
    std::vector<std::vector<symq::FitResult>> preds;
    std::vector<symq::PointSet> holdout;
    for (const symq::BenchEntry& entry : suite.entries) {
      symq::PointSet fit_pts = symq::entry_points(entry, n_points, seed);
      holdout.push_back(symq::entry_points(entry, n_points, seed + 1));
      symq::PredictConfig pcfg;
      pcfg.beam = beam;
      pcfg.max_len = model.dims().max_len;
      pcfg.bfgs.restarts = restarts;
      pcfg.bfgs.seed = seed;
      preds.push_back(symq::predict(model, fit_pts, pcfg));
    }
    symq::SuiteReport rep = symq::score(suite, preds, holdout);
    symq::write_suite_report(*os, rep);
    suite_r2.push_back(rep.mean_r2);
    suite_counts.push_back(static_cast<long>(suite.entries.size()));
  }
  if (names.size() > 1) {
    (*os) << "weighted_avg_r2=" << symq::weighted_average(suite_r2, suite_counts)
          << "\n";
  }
  if (!out.empty()) {
    write_run_config(out, "bench",
                     {{"model", model_path},
                      {"suite", suite_name},
                      {"beam", std::to_string(beam)},
                      {"restarts", std::to_string(restarts)},
                      {"points", std::to_string(n_points)},
                      {"seed", std::to_string(seed)}});
  }
  return 0;
}

int cmd_analyze(const Common& common, const std::string& model_path,
                const std::string& corpus_path, const std::string& prefix) {
  symq::QModel model = symq::QModel::load(model_path);
  std::vector<symq::CorpusRecord> corpus = read_corpus_file(corpus_path);
  symq::ErrorAnalysis ea = symq::error_analysis(model, corpus);
  {
    std::ofstream os(prefix + ".progress.csv");
    symq::write_progress_csv(os, ea);
  }
  {
    std::ofstream os(prefix + ".opfreq.csv");
    symq::write_op_freq_csv(os, ea);
  }
  {
    std::ofstream os(prefix + ".wrongchoice.csv");
    symq::write_wrong_choice_csv(os, ea);
  }
  write_run_config(prefix, "analyze",
                   {{"model", model_path},
                    {"corpus", corpus_path},
                    {"seed", std::to_string(resolve_seed(common))}});
  std::cout << "decisions=" << ea.total << " errors=" << ea.errors
            << " error_fraction=" << ea.error_fraction() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sequential-decision symbolic regression"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value config file");

  Common common;

  // gen
  auto* gen = app.add_subcommand("gen", "generate a training corpus");
  symq::GenConfig gen_cfg;
  std::string gen_out;
  gen->add_option("--skeletons", gen_cfg.n_skeletons, "distinct skeletons")->required();
  gen->add_option("--constants", gen_cfg.constants_per_skeleton, "instantiations per skeleton");
  gen->add_option("--points", gen_cfg.points_per_expression, "points per record");
  gen->add_option("--max-ops", gen_cfg.max_ops, "max actions per skeleton");
  gen->add_option("-o,--output", gen_out, "output corpus (ndjson)")->required();
  add_common(gen, common);

  // train
  auto* train = app.add_subcommand("train", "offline training");
  std::string train_corpus, train_out, train_resume, train_metrics;
  symq::ModelDims dims;
  symq::TrainConfig tcfg;
  train->add_option("-c,--corpus", train_corpus, "training corpus")->required();
  train->add_option("-o,--output", train_out, "checkpoint path")->required();
  train->add_option("--resume", train_resume, "checkpoint to continue from");
  train->add_option("--metrics", train_metrics, "metrics log path");
  train->add_option("--steps", tcfg.steps, "SGD steps")->required();
  train->add_option("--batch", tcfg.batch_size, "batch size");
  train->add_option("--lr", tcfg.learning_rate, "learning rate");
  train->add_option("--alpha", tcfg.alpha, "contrastive weight");
  train->add_option("--tau", tcfg.tau, "contrastive temperature");
  train->add_option("--clip", tcfg.grad_clip, "gradient clip max-norm");
  train->add_option("--eval-interval", tcfg.eval_interval, "metric cadence");
  train->add_flag("--early-stop", tcfg.early_stop, "stop at perfect accuracy");
  train->add_option("--kp", dims.k_p, "points embedding width");
  train->add_option("--kt", dims.k_t, "tree embedding width");
  train->add_option("--hidden", dims.hidden, "hidden width");
  train->add_option("--layers", dims.layers, "Q-head hidden layers");
  train->add_option("--max-len", dims.max_len, "max action sequence length");
  add_common(train, common);

  // infer
  auto* infer = app.add_subcommand("infer", "beam-search decoding");
  std::string infer_model, infer_points, infer_out;
  int infer_beam = 128, infer_restarts = 20, infer_max_len = symq::kDefaultMaxLen;
  infer->add_option("-m,--model", infer_model, "checkpoint")->required();
  infer->add_option("-p,--points", infer_points, "points file (ndjson [x1,x2,y])")->required();
  infer->add_option("-o,--output", infer_out, "predictions file");
  infer->add_option("--beam", infer_beam, "beam size");
  infer->add_option("--restarts", infer_restarts, "BFGS restarts");
  infer->add_option("--max-len", infer_max_len, "max sequence length");
  add_common(infer, common);

  // online
  auto* online = app.add_subcommand("online", "risk-seeking online search");
  std::string online_model, online_points, online_out, online_history;
  symq::OnlineConfig ocfg;
  online->add_option("-m,--model", online_model, "checkpoint")->required();
  online->add_option("-p,--points", online_points, "points file")->required();
  online->add_option("-o,--output", online_out, "refined checkpoint");
  online->add_option("--history", online_history, "history log path");
  online->add_option("--budget", ocfg.budget, "exploration budget");
  online->add_option("--beta", ocfg.beta, "risk threshold coefficient");
  online->add_option("--lr", ocfg.learning_rate, "learning rate");
  online->add_option("--restarts", ocfg.fit_restarts, "reward BFGS restarts");
  add_common(online, common);

  // bench
  auto* bench = app.add_subcommand("bench", "benchmark suites");
  std::string bench_model, bench_suite = "all", bench_out;
  int bench_beam = 128, bench_restarts = 20, bench_points = 100;
  bench->add_option("-m,--model", bench_model, "checkpoint")->required();
  bench->add_option("--suite", bench_suite, "nguyen|constant|keijzer|r|feynman|all");
  bench->add_option("-o,--output", bench_out, "report path");
  bench->add_option("--beam", bench_beam, "beam size");
  bench->add_option("--restarts", bench_restarts, "BFGS restarts");
  bench->add_option("--points", bench_points, "points per entry");
  add_common(bench, common);

  // analyze
  auto* analyze = app.add_subcommand("analyze", "step-wise error analysis");
  std::string an_model, an_corpus, an_prefix = "analysis";
  analyze->add_option("-m,--model", an_model, "checkpoint")->required();
  analyze->add_option("-c,--corpus", an_corpus, "eval corpus")->required();
  analyze->add_option("-o,--output", an_prefix, "output prefix for CSVs");
  add_common(analyze, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen(common, gen_cfg, gen_out);
    if (train->parsed()) {
      return cmd_train(common, train_corpus, train_out, train_resume, dims, tcfg,
                       train_metrics);
    }
    if (infer->parsed()) {
      return cmd_infer(common, infer_model, infer_points, infer_out, infer_beam,
                       infer_restarts, infer_max_len);
    }
    if (online->parsed()) {
      return cmd_online(common, online_model, online_points, online_out,
                        online_history, ocfg);
    }
    if (bench->parsed()) {
      return cmd_bench(common, bench_model, bench_suite, bench_out, bench_beam,
                       bench_restarts, bench_points);
    }
    if (analyze->parsed()) return cmd_analyze(common, an_model, an_corpus, an_prefix);
  } catch (const symq::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
