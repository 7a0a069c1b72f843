#ifndef MILNET_DATA_HPP_
#define MILNET_DATA_HPP_

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace milnet {

// One sample: a non-empty ordered list of fixed-length feature vectors that
// share a single bag-level label in {-1, +1}. Instance-level labels do not
// exist in this representation.
struct Bag {
  std::string id;
  int label = 0;
  std::vector<std::vector<double>> instances;

  std::size_t size() const { return instances.size(); }
};

struct MilDataset {
  std::vector<Bag> bags;
  std::size_t dim = 0;

  std::size_t total_instances() const;
};

// Throws std::invalid_argument if ids collide, a bag is empty, a label is
// outside {-1, +1}, an instance dimension disagrees with dim, or an entry is
// not finite.
void validate_dataset(const MilDataset& dataset);

// Per-feature affine map x -> (x - mean) / scale.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;
};

// Explicit (repetition, bag id) -> fold assignment.
struct SplitPlan {
  std::size_t repeats = 0;
  std::size_t folds = 0;
  std::vector<std::unordered_map<std::string, std::size_t>> assignment;  // one map per repetition

  std::size_t fold_of(std::size_t repetition, const std::string& bag_id) const;
};

enum class SynthRegime { kWitness, kDistributionShift };

struct SynthSpec {
  SynthRegime regime = SynthRegime::kWitness;
  std::size_t dim = 2;
  std::size_t bags_per_class = 100;
  std::size_t instances_min = 1;
  std::size_t instances_max = 1;
  std::uint64_t seed = 0;
  // Witness regime: per-feature offset of the witness mean above background.
  // Distribution-shift regime: distance between the two component means.
  double separation = 1.0;
};

// Generation bookkeeping: per bag, the indices of instances drawn from the
// signal component (witness instances, or component-A draws in the
// distribution-shift regime). Indexed like dataset.bags.
struct SynthMeta {
  std::vector<std::vector<std::size_t>> signal_instances;
};

// CSV contract: header `bag_id,label,f1,...,fd`, one instance per row, label
// repeated identically on every row of a bag. Rows of a bag need not be
// contiguous; instance order within a bag follows file order.
MilDataset load_dataset(const std::string& path);
void write_dataset(const MilDataset& dataset, const std::string& path);

// mean/scale are the per-feature mean and population standard deviation over
// all instances of all bags; scale entries are floored at 1e-8.
Standardizer fit_standardizer(const MilDataset& dataset);
MilDataset apply_standardizer(const Standardizer& std, const MilDataset& dataset);

// Stratified fold assignment, a pure function of the bag-id/label sets,
// folds, repeats and seed (dataset order does not matter). Per repetition,
// fold sizes differ by at most one and per-fold class counts stay within one
// of proportional.
SplitPlan make_splits(const MilDataset& dataset, std::size_t folds, std::size_t repeats,
                      std::uint64_t seed);

// Split-plan CSV: header `repetition,fold,bag_id`, zero-based indices.
SplitPlan load_split_plan(const std::string& path);
void write_split_plan(const SplitPlan& plan, const std::string& path);

// Deterministic synthetic generator for the two labeling regimes: `witness`
// (positives differ from the background in at least one instance) and
// `distribution-shift` (both classes mix two components with different
// weights: component-A probability 0.8 for positives, 0.2 for negatives).
MilDataset generate_synthetic(const SynthSpec& spec, SynthMeta* meta = nullptr);

}  // namespace milnet

#endif  // MILNET_DATA_HPP_
