// milnet command-line front end: train/predict/eval/gridsearch/gradcheck/synth.
//
// Exit codes: 0 success, 1 I/O failure, 2 bad usage or invalid input values,
// 3 gradient-check mismatch.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "milnet/data.hpp"
#include "milnet/evaluation.hpp"
#include "milnet/gradcheck.hpp"
#include "milnet/network.hpp"
#include "milnet/training.hpp"

using namespace milnet;

namespace {

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Options shared by every subcommand that trains networks. CLI flags beat
// values from --config, which beat the built-in defaults.
struct TrainFlags {
  std::string config_path;
  std::size_t batch = 100;
  std::size_t iters = 10000;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  bool no_standardize = false;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--config", f.config_path, "key=value training-config file");
  cmd->add_option("--batch", f.batch, "mini-batch size (default 100)");
  cmd->add_option("--iters", f.iters, "mini-batch iterations (default 10000)");
  cmd->add_option("--lambda", f.lambda, "L1 penalty strength");
  cmd->add_option("--seed", f.seed, "master seed (default 0)");
  cmd->add_flag("--no-standardize", f.no_standardize, "skip feature z-scoring");
}

TrainConfig resolve_train_config(const CLI::App* cmd, const TrainFlags& f) {
  TrainConfig cfg;
  if (!f.config_path.empty()) {
    cfg = train_config_from_kv(read_text_file(f.config_path), cfg);
  }
  if (cmd->count("--batch")) cfg.batch_size = f.batch;
  if (cmd->count("--iters")) cfg.max_iterations = f.iters;
  if (cmd->count("--lambda")) cfg.lambda = f.lambda;
  if (cmd->count("--seed")) cfg.seed = f.seed;
  if (f.no_standardize) cfg.standardize = false;
  validate_train_config(cfg);
  return cfg;
}

void add_model_flags(CLI::App* cmd, std::string& pool, std::string& arch) {
  cmd->add_option("--pool", pool, "pooling: mean, max or smoothmax (default mean)")
      ->check(CLI::IsMember({"mean", "max", "smoothmax"}));
  cmd->add_option("--arch", arch, "architecture: proposed or prior-nn")
      ->check(CLI::IsMember({"proposed", "prior-nn"}));
}

std::size_t resolve_jobs(const CLI::App* cmd, std::size_t flag_value) {
  if (cmd->count("--jobs")) {
    if (flag_value == 0) throw std::invalid_argument("--jobs must be at least 1");
    return flag_value;
  }
  if (const char* env = std::getenv("MILNET_JOBS")) {
    char* end = nullptr;
    const unsigned long parsed = std::strtoul(env, &end, 10);
    if (end == env || *end != '\0' || parsed == 0) {
      throw std::invalid_argument("MILNET_JOBS must be a positive integer");
    }
    return static_cast<std::size_t>(parsed);
  }
  return 1;
}

// --report takes one base path; the CSV and JSON twins share its stem.
void write_reports(const EvalReport& report, const std::string& base) {
  std::string stem = base;
  for (const std::string ext : {".csv", ".json"}) {
    if (stem.size() > ext.size() && stem.ends_with(ext)) {
      stem.resize(stem.size() - ext.size());
      break;
    }
  }
  write_report_csv(report, stem + ".csv");
  write_report_json(report, stem + ".json");
}

struct TrainOpts {
  std::string data_path;
  std::string out_path;
  std::string pool = "mean";
  std::string arch = "proposed";
  std::size_t embed_dim = 8;
  TrainFlags flags;
};

int run_train(const CLI::App* cmd, const TrainOpts& o) {
  const MilDataset raw = load_dataset(o.data_path);
  const TrainConfig cfg = resolve_train_config(cmd, o.flags);

  Architecture arch;
  arch.kind = arch_kind_from_string(o.arch);
  arch.input_dim = raw.dim;
  arch.embed_dim = o.embed_dim;
  const Network net = init_network(arch, pool_kind_from_string(o.pool), cfg.seed);

  std::optional<Standardizer> standardizer;
  MilDataset data = raw;
  if (cfg.standardize) {
    standardizer = fit_standardizer(raw);
    data = apply_standardizer(*standardizer, raw);
  }

  auto [trained, report] = train(net, data, cfg);
  trained.standardizer = standardizer;
  save_model(trained, o.out_path);

  std::cout << "final train objective: " << fmt_g17(report.checkpoints.back().full_objective)
            << "\n";
  std::cout << "train EER: " << fmt_g17(eer(score_bags(trained, data.bags))) << "\n";
  return 0;
}

struct PredictOpts {
  std::string model_path;
  std::string data_path;
  std::string out_path;
};

int run_predict(const PredictOpts& o) {
  const Network net = load_model(o.model_path);
  MilDataset data = load_dataset(o.data_path);
  if (data.dim != net.arch.input_dim) {
    throw std::invalid_argument("model expects dimension " +
                                std::to_string(net.arch.input_dim) + ", dataset has " +
                                std::to_string(data.dim));
  }
  if (net.standardizer) data = apply_standardizer(*net.standardizer, data);
  const std::vector<ScoredBag> scored = score_bags(net, data.bags);

  std::ofstream file;
  if (!o.out_path.empty()) {
    file.open(o.out_path);
    if (!file) throw std::runtime_error("cannot write predictions file '" + o.out_path + "'");
  }
  std::ostream& out = o.out_path.empty() ? std::cout : file;
  out << "bag_id,score\n";
  for (const ScoredBag& s : scored) out << s.id << ',' << fmt_g17(s.score) << "\n";
  if (!o.out_path.empty() && !file) {
    throw std::runtime_error("write failed for '" + o.out_path + "'");
  }
  return 0;
}

struct EvalOpts {
  std::string data_path;
  std::string plan_path;
  std::string report_path;
  std::string pool = "mean";
  std::string arch = "proposed";
  std::size_t folds = 10;
  std::size_t repeats = 5;
  std::size_t embed_dim = 0;
  std::size_t jobs = 1;
  TrainFlags flags;
};

int run_eval(const CLI::App* cmd, const EvalOpts& o) {
  const MilDataset data = load_dataset(o.data_path);
  const TrainConfig cfg = resolve_train_config(cmd, o.flags);
  ModelTemplate tmpl;
  tmpl.kind = arch_kind_from_string(o.arch);
  tmpl.pool = pool_kind_from_string(o.pool);

  const bool has_plan = cmd->count("--plan") > 0;
  const bool has_fold_opts = cmd->count("--folds") > 0 || cmd->count("--repeats") > 0;
  if (has_plan == has_fold_opts) {
    throw std::invalid_argument("give either --plan or --folds/--repeats, not both or neither");
  }
  const SplitPlan plan =
      has_plan ? load_split_plan(o.plan_path) : make_splits(data, o.folds, o.repeats, cfg.seed);

  const bool has_m = cmd->count("--embed-dim") > 0;
  const bool has_lambda = cmd->count("--lambda") > 0;
  if (has_m != has_lambda) {
    throw std::invalid_argument(
        "fixed-cell evaluation needs both --embed-dim and --lambda (omit both for grid search)");
  }
  const std::size_t jobs = resolve_jobs(cmd, o.jobs);

  const EvalReport report =
      has_m ? evaluate_folds(data, plan, o.embed_dim, cfg.lambda, cfg, tmpl, jobs)
            : cross_validate(data, plan, Grid{}, cfg, tmpl, jobs);

  if (!o.report_path.empty()) write_reports(report, o.report_path);
  std::cout << "mean train EER: " << fmt_g17(report.mean_train_eer) << "\n";
  std::cout << "mean test EER: " << fmt_g17(report.mean_test_eer) << "\n";
  return 0;
}

struct GridSearchOpts {
  std::string data_path;
  std::string out_path;
  std::string pool = "mean";
  std::string arch = "proposed";
  std::size_t folds = 5;
  std::size_t jobs = 1;
  TrainFlags flags;
};

int run_gridsearch(const CLI::App* cmd, const GridSearchOpts& o) {
  const MilDataset data = load_dataset(o.data_path);
  const TrainConfig cfg = resolve_train_config(cmd, o.flags);
  ModelTemplate tmpl;
  tmpl.kind = arch_kind_from_string(o.arch);
  tmpl.pool = pool_kind_from_string(o.pool);

  const GridChoice choice =
      grid_search(data.bags, Grid{}, o.folds, cfg, tmpl, cfg.seed, resolve_jobs(cmd, o.jobs));

  if (!o.out_path.empty()) {
    std::ofstream out(o.out_path);
    if (!out) throw std::runtime_error("cannot write grid table '" + o.out_path + "'");
    out << "m,lambda,mean_eer\n";
    for (const GridCell& cell : choice.cells) {
      out << cell.embed_dim << ',' << fmt_g17(cell.lambda) << ',' << fmt_g17(cell.mean_eer)
          << "\n";
    }
    if (!out) throw std::runtime_error("write failed for '" + o.out_path + "'");
  }

  double best_eer = 0.0;
  for (const GridCell& cell : choice.cells) {
    if (cell.embed_dim == choice.embed_dim && cell.lambda == choice.lambda) {
      best_eer = cell.mean_eer;
    }
  }
  std::cout << "chosen m: " << choice.embed_dim << "\n";
  std::cout << "chosen lambda: " << fmt_g17(choice.lambda) << "\n";
  std::cout << "inner EER: " << fmt_g17(best_eer) << "\n";
  return 0;
}

struct GradCheckOpts {
  std::size_t trials = 100;
  std::string pool;
  std::uint64_t seed = 0;
  bool sabotage = false;
};

int run_gradcheck_cmd(const CLI::App* cmd, const GradCheckOpts& o) {
  GradCheckOptions options;
  options.trials = o.trials;
  options.seed = o.seed;
  options.sabotage = o.sabotage;
  if (cmd->count("--pool")) options.pools = {pool_kind_from_string(o.pool)};

  const GradCheckResult result = run_gradcheck(options);
  std::cout << "cases run: " << result.cases_run << "\n";
  std::cout << "kink exclusions: " << result.kink_exclusions << "\n";
  std::cout << "tie exclusions: " << result.tie_exclusions << "\n";
  std::cout << "max relative error: " << fmt_g17(result.max_rel_error) << "\n";
  if (result.failures > 0) {
    std::cout << "gradient mismatches: " << result.failures << "\n";
    return 3;
  }
  return 0;
}

struct SynthOpts {
  std::string regime;
  std::string out_path;
  std::size_t bags = 100;
  std::size_t dim = 2;
  std::size_t min_instances = 1;
  std::size_t max_instances = 1;
  double separation = 1.0;
  std::uint64_t seed = 0;
};

int run_synth(const SynthOpts& o) {
  SynthSpec spec;
  spec.regime = o.regime == "witness" ? SynthRegime::kWitness : SynthRegime::kDistributionShift;
  spec.dim = o.dim;
  spec.bags_per_class = o.bags;
  spec.instances_min = o.min_instances;
  spec.instances_max = o.max_instances;
  spec.separation = o.separation;
  spec.seed = o.seed;

  const MilDataset data = generate_synthetic(spec);
  write_dataset(data, o.out_path);
  std::cout << data.bags.size() << " bags written to " << o.out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multiple-instance learning networks with in-network pooling"};
  app.require_subcommand(1);

  TrainOpts train_o;
  CLI::App* train_cmd = app.add_subcommand("train", "train a network on a bag dataset");
  train_cmd->add_option("--data", train_o.data_path, "dataset CSV")->required();
  train_cmd->add_option("--out", train_o.out_path, "model JSON output path")->required();
  add_model_flags(train_cmd, train_o.pool, train_o.arch);
  train_cmd->add_option("--embed-dim", train_o.embed_dim, "embedding width m (default 8)");
  add_train_flags(train_cmd, train_o.flags);

  PredictOpts predict_o;
  CLI::App* predict_cmd = app.add_subcommand("predict", "score bags with a saved model");
  predict_cmd->add_option("--model", predict_o.model_path, "model JSON")->required();
  predict_cmd->add_option("--data", predict_o.data_path, "dataset CSV")->required();
  predict_cmd->add_option("--out", predict_o.out_path, "write bag_id,score CSV here (default stdout)");

  EvalOpts eval_o;
  CLI::App* eval_cmd = app.add_subcommand("eval", "cross-validated equal-error-rate evaluation");
  eval_cmd->add_option("--data", eval_o.data_path, "dataset CSV")->required();
  eval_cmd->add_option("--plan", eval_o.plan_path, "split-plan CSV (alternative to --folds)");
  eval_cmd->add_option("--folds", eval_o.folds, "folds per repetition (default 10)");
  eval_cmd->add_option("--repeats", eval_o.repeats, "repetitions (default 5)");
  eval_cmd->add_option("--embed-dim", eval_o.embed_dim,
                       "fixed embedding width (with --lambda: skip grid search)");
  eval_cmd->add_option("--report", eval_o.report_path, "report base path (.csv and .json)");
  eval_cmd->add_option("--jobs", eval_o.jobs, "max concurrent fold tasks (env MILNET_JOBS)");
  add_model_flags(eval_cmd, eval_o.pool, eval_o.arch);
  add_train_flags(eval_cmd, eval_o.flags);

  GridSearchOpts grid_o;
  CLI::App* grid_cmd = app.add_subcommand("gridsearch", "inner-CV (m, lambda) selection");
  grid_cmd->add_option("--data", grid_o.data_path, "dataset CSV")->required();
  grid_cmd->add_option("--folds", grid_o.folds, "inner folds (default 5)");
  grid_cmd->add_option("--out", grid_o.out_path, "write the m,lambda,mean_eer table here");
  grid_cmd->add_option("--jobs", grid_o.jobs, "max concurrent grid cells (env MILNET_JOBS)");
  add_model_flags(grid_cmd, grid_o.pool, grid_o.arch);
  add_train_flags(grid_cmd, grid_o.flags);

  GradCheckOpts gc_o;
  CLI::App* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gc_cmd->add_option("--trials", gc_o.trials, "cases per pooling kind (default 100)");
  gc_cmd->add_option("--pool", gc_o.pool, "restrict to one pooling kind")
      ->check(CLI::IsMember({"mean", "max", "smoothmax"}));
  gc_cmd->add_option("--seed", gc_o.seed, "case seed (default 0)");
  gc_cmd->add_flag("--sabotage", gc_o.sabotage)->group("");  // negative control, test-only

  SynthOpts synth_o;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic bag dataset");
  synth_cmd->add_option("--regime", synth_o.regime, "witness or shift")
      ->required()
      ->check(CLI::IsMember({"witness", "shift", "distribution-shift"}));
  synth_cmd->add_option("--out", synth_o.out_path, "dataset CSV output path")->required();
  synth_cmd->add_option("--bags", synth_o.bags, "bags per class (default 100)");
  synth_cmd->add_option("--dim", synth_o.dim, "instance dimension (default 2)");
  synth_cmd->add_option("--min-instances", synth_o.min_instances, "min instances per bag");
  synth_cmd->add_option("--max-instances", synth_o.max_instances, "max instances per bag");
  synth_cmd->add_option("--separation", synth_o.separation,
                        "witness: per-feature witness-mean offset; shift: component mean distance "
                        "(default 1)");
  synth_cmd->add_option("--seed", synth_o.seed, "generator seed (default 0)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd) return run_train(train_cmd, train_o);
    if (*predict_cmd) return run_predict(predict_o);
    if (*eval_cmd) return run_eval(eval_cmd, eval_o);
    if (*grid_cmd) return run_gridsearch(grid_cmd, grid_o);
    if (*gc_cmd) return run_gradcheck_cmd(gc_cmd, gc_o);
    if (*synth_cmd) return run_synth(synth_o);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;  // unreachable with require_subcommand(1)
}
