#include "milnet/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <utility>

#include "milnet/rng.hpp"

namespace milnet {

namespace {

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void validate_scored(const std::vector<ScoredBag>& scored, std::size_t* positives,
                     std::size_t* negatives) {
  std::size_t pos = 0;
  std::size_t neg = 0;
  for (const ScoredBag& s : scored) {
    if (s.label != -1 && s.label != 1) {
      throw std::invalid_argument("scored bag '" + s.id + "' has label outside {-1, +1}");
    }
    if (!std::isfinite(s.score)) {
      throw std::invalid_argument("scored bag '" + s.id + "' has a non-finite score");
    }
    (s.label > 0 ? pos : neg)++;
  }
  if (pos == 0 || neg == 0) {
    throw std::invalid_argument("ROC needs at least one bag of each class");
  }
  *positives = pos;
  *negatives = neg;
}

// Runs fn(0..n-1) on up to `jobs` threads. Task indices are handed out
// through a shared counter; the first exception wins and aborts the rest.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n || failed.load()) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(std::min(jobs, n));
  for (std::size_t t = 0; t < std::min(jobs, n); ++t) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

std::vector<RocPoint> roc_points(const std::vector<ScoredBag>& scored) {
  std::size_t positives = 0;
  std::size_t negatives = 0;
  validate_scored(scored, &positives, &negatives);

  std::vector<std::pair<double, int>> ranked;  // (score, label), best first
  ranked.reserve(scored.size());
  for (const ScoredBag& s : scored) ranked.emplace_back(s.score, s.label);
  std::sort(ranked.begin(), ranked.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  std::vector<RocPoint> points;
  points.push_back({0.0, 0.0});
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t i = 0;
  while (i < ranked.size()) {
    // Everything tied at this score crosses the threshold together.
    const double threshold = ranked[i].first;
    for (; i < ranked.size() && ranked[i].first == threshold; ++i) {
      (ranked[i].second > 0 ? tp : fp)++;
    }
    points.push_back({static_cast<double>(fp) / static_cast<double>(negatives),
                      static_cast<double>(tp) / static_cast<double>(positives)});
  }
  return points;
}

double eer(const std::vector<ScoredBag>& scored) {
  const std::vector<RocPoint> points = roc_points(scored);
  // h = TPR - (1 - FPR) walks from -1 at (0,0) to +1 at (1,1); the EER sits
  // where the polyline crosses h = 0.
  for (std::size_t k = 1; k < points.size(); ++k) {
    const RocPoint& a = points[k - 1];
    const RocPoint& b = points[k];
    const double hb = b.tpr + b.fpr - 1.0;
    if (hb < 0.0) continue;
    const double dx = b.fpr - a.fpr;
    const double dy = b.tpr - a.tpr;
    const double s = (1.0 - a.fpr - a.tpr) / (dx + dy);
    return a.fpr + s * dx;
  }
  return 1.0;  // unreachable: the final point always has h = +1
}

const GridCell& best_cell(const std::vector<GridCell>& cells) {
  if (cells.empty()) throw std::invalid_argument("best_cell: no cells");
  const GridCell* best = &cells.front();
  for (const GridCell& cell : cells) {
    if (cell.mean_eer < best->mean_eer ||
        (cell.mean_eer == best->mean_eer &&
         (cell.embed_dim < best->embed_dim ||
          (cell.embed_dim == best->embed_dim && cell.lambda > best->lambda)))) {
      best = &cell;
    }
  }
  return *best;
}

namespace {

constexpr std::uint64_t kGridPlanTag = 0x47504C4EULL;  // inner split plan
constexpr std::uint64_t kGridCellTag = 0x4743454CULL;  // per (cell, fold) training
constexpr std::uint64_t kFoldTag = 0x464F4C44ULL;      // outer fold task
constexpr std::uint64_t kGridTag = 0x47524944ULL;      // grid search within a fold
constexpr std::uint64_t kFinalTag = 0x46494E4CULL;     // final per-fold model

void validate_grid(const Grid& grid) {
  if (grid.embed_dims.empty() || grid.lambdas.empty()) {
    throw std::invalid_argument("grid must list at least one embedding width and one lambda");
  }
  for (std::size_t m : grid.embed_dims) {
    if (m == 0) throw std::invalid_argument("grid embedding widths must be positive");
  }
  for (double lambda : grid.lambdas) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
      throw std::invalid_argument("grid lambdas must be finite and non-negative");
    }
  }
}

void sort_by_id(std::vector<Bag>& bags) {
  std::sort(bags.begin(), bags.end(), [](const Bag& a, const Bag& b) { return a.id < b.id; });
}

// Trains on `train` with the given sizes/seed and returns the held-out EER.
// Both portions must already be standardized if they are going to be.
double fold_eer(const MilDataset& train_part, const std::vector<Bag>& held_out,
                std::size_t embed_dim, double lambda, const TrainConfig& config,
                const ModelTemplate& tmpl, std::uint64_t seed) {
  TrainConfig cfg = config;
  cfg.lambda = lambda;
  cfg.seed = seed;
  Architecture arch;
  arch.kind = tmpl.kind;
  arch.input_dim = train_part.dim;
  arch.embed_dim = embed_dim;
  const Network net = init_network(arch, tmpl.pool, seed);
  auto [trained, report] = train(net, train_part, cfg);
  (void)report;
  return eer(score_bags(trained, held_out));
}

}  // namespace

GridChoice grid_search(const std::vector<Bag>& train_bags, const Grid& grid,
                       std::size_t inner_folds, const TrainConfig& config,
                       const ModelTemplate& tmpl, std::uint64_t seed, std::size_t jobs) {
  validate_grid(grid);
  validate_train_config(config);
  if (inner_folds < 2) throw std::invalid_argument("grid_search: need at least 2 inner folds");

  MilDataset inner;
  inner.bags = train_bags;
  inner.dim = train_bags.empty() || train_bags.front().instances.empty()
                  ? 0
                  : train_bags.front().instances.front().size();
  validate_dataset(inner);

  const SplitPlan plan = make_splits(inner, inner_folds, 1, derive_seed(seed, {kGridPlanTag}));

  // Fold portions (and their standardization) are shared by every cell.
  std::vector<MilDataset> fold_train(inner_folds);
  std::vector<std::vector<Bag>> fold_val(inner_folds);
  for (std::size_t f = 0; f < inner_folds; ++f) {
    MilDataset train_part;
    train_part.dim = inner.dim;
    std::vector<Bag> val_part;
    for (const Bag& bag : inner.bags) {
      (plan.fold_of(0, bag.id) == f ? val_part : train_part.bags).push_back(bag);
    }
    sort_by_id(train_part.bags);
    sort_by_id(val_part);
    if (config.standardize) {
      const Standardizer std_ = fit_standardizer(train_part);
      train_part = apply_standardizer(std_, train_part);
      MilDataset val_ds;
      val_ds.bags = std::move(val_part);
      val_ds.dim = inner.dim;
      val_part = apply_standardizer(std_, val_ds).bags;
    }
    fold_train[f] = std::move(train_part);
    fold_val[f] = std::move(val_part);
  }

  GridChoice choice;
  choice.cells.resize(grid.embed_dims.size() * grid.lambdas.size());
  parallel_for(choice.cells.size(), jobs, [&](std::size_t cell_index) {
    const std::size_t m = grid.embed_dims[cell_index / grid.lambdas.size()];
    const double lambda = grid.lambdas[cell_index % grid.lambdas.size()];
    double eer_sum = 0.0;
    for (std::size_t f = 0; f < inner_folds; ++f) {
      eer_sum += fold_eer(fold_train[f], fold_val[f], m, lambda, config, tmpl,
                          derive_seed(seed, {kGridCellTag, cell_index, f}));
    }
    choice.cells[cell_index] = {m, lambda, eer_sum / static_cast<double>(inner_folds)};
  });
  const GridCell& winner = best_cell(choice.cells);
  choice.embed_dim = winner.embed_dim;
  choice.lambda = winner.lambda;
  return choice;
}

namespace {

// Runs the outer protocol; `grid` selects hyperparameters per fold when
// given, otherwise (fixed_m, fixed_lambda) is used everywhere.
EvalReport run_protocol(const MilDataset& dataset, const SplitPlan& plan, const Grid* grid,
                        std::size_t fixed_m, double fixed_lambda, const TrainConfig& config,
                        const ModelTemplate& tmpl, std::size_t jobs) {
  validate_dataset(dataset);
  validate_train_config(config);
  if (grid) validate_grid(*grid);
  if (!grid && fixed_m == 0) {
    throw std::invalid_argument("embedding width must be positive");
  }
  if (!grid && (!(fixed_lambda >= 0.0) || !std::isfinite(fixed_lambda))) {
    throw std::invalid_argument("lambda must be finite and non-negative");
  }
  if (plan.repeats == 0 || plan.folds < 2 || plan.assignment.size() != plan.repeats) {
    throw std::invalid_argument("split plan is empty or inconsistent");
  }
  for (std::size_t rep = 0; rep < plan.repeats; ++rep) {
    if (plan.assignment[rep].size() != dataset.bags.size()) {
      throw std::invalid_argument("split plan and dataset disagree on the bag set");
    }
    for (const Bag& bag : dataset.bags) {
      if (plan.fold_of(rep, bag.id) >= plan.folds) {
        throw std::invalid_argument("split plan assigns bag '" + bag.id +
                                    "' to an out-of-range fold");
      }
    }
  }

  const std::size_t tasks = plan.repeats * plan.folds;
  std::vector<FoldResult> rows(tasks);
  parallel_for(tasks, jobs, [&](std::size_t t) {
    const std::size_t rep = t / plan.folds;
    const std::size_t fold = t % plan.folds;

    MilDataset train_part;
    train_part.dim = dataset.dim;
    MilDataset test_part;
    test_part.dim = dataset.dim;
    for (const Bag& bag : dataset.bags) {
      (plan.fold_of(rep, bag.id) == fold ? test_part : train_part).bags.push_back(bag);
    }
    if (train_part.bags.empty() || test_part.bags.empty()) {
      throw std::invalid_argument("fold " + std::to_string(fold) + " of repetition " +
                                  std::to_string(rep) + " leaves a portion empty");
    }
    // Id order makes the fold outcome independent of dataset row order.
    sort_by_id(train_part.bags);
    sort_by_id(test_part.bags);

    const std::uint64_t fold_seed = derive_seed(config.seed, {kFoldTag, rep, fold});
    if (config.standardize) {
      const Standardizer std_ = fit_standardizer(train_part);
      train_part = apply_standardizer(std_, train_part);
      test_part = apply_standardizer(std_, test_part);
    }

    std::size_t m = fixed_m;
    double lambda = fixed_lambda;
    if (grid) {
      const GridChoice choice =
          grid_search(train_part.bags, *grid, 5, config, tmpl, derive_seed(fold_seed, {kGridTag}));
      m = choice.embed_dim;
      lambda = choice.lambda;
    }

    TrainConfig cfg = config;
    cfg.lambda = lambda;
    cfg.seed = derive_seed(fold_seed, {kFinalTag});
    Architecture arch;
    arch.kind = tmpl.kind;
    arch.input_dim = dataset.dim;
    arch.embed_dim = m;
    const Network net = init_network(arch, tmpl.pool, cfg.seed);
    auto [trained, report] = train(net, train_part, cfg);
    (void)report;

    FoldResult row;
    row.repetition = rep;
    row.fold = fold;
    row.embed_dim = m;
    row.lambda = lambda;
    row.train_eer = eer(score_bags(trained, train_part.bags));
    row.test_eer = eer(score_bags(trained, test_part.bags));
    rows[t] = row;
  });

  EvalReport report;
  report.folds = std::move(rows);
  double train_sum = 0.0;
  double test_sum = 0.0;
  for (const FoldResult& row : report.folds) {
    train_sum += row.train_eer;
    test_sum += row.test_eer;
  }
  report.mean_train_eer = train_sum / static_cast<double>(tasks);
  report.mean_test_eer = test_sum / static_cast<double>(tasks);
  return report;
}

}  // namespace

EvalReport cross_validate(const MilDataset& dataset, const SplitPlan& plan, const Grid& grid,
                          const TrainConfig& config, const ModelTemplate& tmpl,
                          std::size_t jobs) {
  return run_protocol(dataset, plan, &grid, 0, 0.0, config, tmpl, jobs);
}

EvalReport evaluate_folds(const MilDataset& dataset, const SplitPlan& plan,
                          std::size_t embed_dim, double lambda, const TrainConfig& config,
                          const ModelTemplate& tmpl, std::size_t jobs) {
  return run_protocol(dataset, plan, nullptr, embed_dim, lambda, config, tmpl, jobs);
}

std::vector<ScoredBag> score_bags(const Network& net, const std::vector<Bag>& bags) {
  std::vector<ScoredBag> scored;
  scored.reserve(bags.size());
  for (const Bag& bag : bags) {
    scored.push_back({bag.id, bag.label, forward_bag(net, bag)});
  }
  return scored;
}

void write_report_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report file '" + path + "'");
  out << "repetition,fold,m,lambda,train_eer,test_eer\n";
  for (const FoldResult& row : report.folds) {
    out << row.repetition << ',' << row.fold << ',' << row.embed_dim << ','
        << fmt_g17(row.lambda) << ',' << fmt_g17(row.train_eer) << ','
        << fmt_g17(row.test_eer) << "\n";
  }
  out << "mean,,,," << fmt_g17(report.mean_train_eer) << ',' << fmt_g17(report.mean_test_eer)
      << "\n";
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

void write_report_json(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report file '" + path + "'");
  out << "{\"folds\":[";
  for (std::size_t i = 0; i < report.folds.size(); ++i) {
    const FoldResult& row = report.folds[i];
    if (i) out << ',';
    out << "{\"repetition\":" << row.repetition << ",\"fold\":" << row.fold
        << ",\"m\":" << row.embed_dim << ",\"lambda\":" << fmt_g17(row.lambda)
        << ",\"train_eer\":" << fmt_g17(row.train_eer)
        << ",\"test_eer\":" << fmt_g17(row.test_eer) << '}';
  }
  out << "],\"mean_train_eer\":" << fmt_g17(report.mean_train_eer)
      << ",\"mean_test_eer\":" << fmt_g17(report.mean_test_eer) << "}\n";
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace milnet
