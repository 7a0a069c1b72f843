#ifndef MILNET_EVALUATION_HPP_
#define MILNET_EVALUATION_HPP_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "milnet/data.hpp"
#include "milnet/network.hpp"
#include "milnet/training.hpp"

namespace milnet {

// One bag's classifier score next to its ground truth.
struct ScoredBag {
  std::string id;
  int label = 0;  // -1 or +1
  double score = 0.0;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

// ROC polyline from sweeping a threshold over the distinct scores in
// descending order. Anchored at (0,0) and (1,1), monotone in both
// coordinates. Throws std::invalid_argument when a class is missing.
std::vector<RocPoint> roc_points(const std::vector<ScoredBag>& scored);

// Equal error rate: the false-positive rate where the linearly interpolated
// ROC crosses TPR = 1 - FPR. 0 iff the classes are perfectly separated,
// 1 when they are perfectly anti-separated.
double eer(const std::vector<ScoredBag>& scored);

// Hyperparameter grid: embedding widths crossed with L1 strengths.
struct Grid {
  std::vector<std::size_t> embed_dims = {2, 4, 8, 12, 16, 20};
  std::vector<double> lambdas = {1e-7, 1e-6, 1e-5, 1e-4, 1e-3};
};

// Everything about a candidate model except its sizes.
struct ModelTemplate {
  ArchKind kind = ArchKind::kProposed;
  PoolKind pool = PoolKind::kMax;
};

struct GridCell {
  std::size_t embed_dim = 0;
  double lambda = 0.0;
  double mean_eer = 0.0;
};

struct GridChoice {
  std::size_t embed_dim = 0;
  double lambda = 0.0;
  std::vector<GridCell> cells;  // every candidate, grid order
};

// Winning cell: lowest mean EER; ties fall to the smaller embedding, then to
// the larger lambda (the stronger penalty). Throws on an empty list.
const GridCell& best_cell(const std::vector<GridCell>& cells);

// Inner cross-validated model selection. Evaluates every (embed_dim, lambda)
// cell with `inner_folds`-fold stratified CV on the given bags and returns
// the winner plus the full table. When config.standardize is set each inner
// training portion is z-scored and its validation portion mapped through the
// same transform. Seeds for the inner plan and for each (cell, fold) training
// run are derived from `seed`, so cells are reproducible in isolation.
// `jobs` caps concurrent cell evaluations; the result does not depend on it.
GridChoice grid_search(const std::vector<Bag>& train_bags, const Grid& grid,
                       std::size_t inner_folds, const TrainConfig& config,
                       const ModelTemplate& tmpl, std::uint64_t seed, std::size_t jobs = 1);

struct FoldResult {
  std::size_t repetition = 0;
  std::size_t fold = 0;
  std::size_t embed_dim = 0;
  double lambda = 0.0;
  double train_eer = 0.0;
  double test_eer = 0.0;
};

struct EvalReport {
  std::vector<FoldResult> folds;  // (repetition, fold) order
  double mean_train_eer = 0.0;
  double mean_test_eer = 0.0;
};

// Outer protocol: for every (repetition, fold) of the plan, standardize on
// the training portion (when configured), pick (embed_dim, lambda) by inner
// grid search, train a final model on the whole training portion, and record
// EER on both portions. Portions are ordered by bag id, so dataset order
// never affects the result. `jobs` caps concurrent fold tasks; results are
// keyed by (repetition, fold) regardless of completion order.
EvalReport cross_validate(const MilDataset& dataset, const SplitPlan& plan, const Grid& grid,
                          const TrainConfig& config, const ModelTemplate& tmpl,
                          std::size_t jobs = 1);

// Same outer protocol with a fixed (embed_dim, lambda) instead of a grid
// search in every fold.
EvalReport evaluate_folds(const MilDataset& dataset, const SplitPlan& plan,
                          std::size_t embed_dim, double lambda, const TrainConfig& config,
                          const ModelTemplate& tmpl, std::size_t jobs = 1);

// Scores bags exactly as given; any standardization must have been applied
// by the caller beforehand.
std::vector<ScoredBag> score_bags(const Network& net, const std::vector<Bag>& bags);

// Report files: CSV rows `repetition,fold,m,lambda,train_eer,test_eer` plus
// a trailing mean line, and a JSON mirror of the same fields. Doubles carry
// 17 significant digits in both.
void write_report_csv(const EvalReport& report, const std::string& path);
void write_report_json(const EvalReport& report, const std::string& path);

}  // namespace milnet

#endif  // MILNET_EVALUATION_HPP_
