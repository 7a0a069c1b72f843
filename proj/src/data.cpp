#include "milnet/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "milnet/rng.hpp"

namespace milnet {

namespace {

constexpr double kScaleFloor = 1e-8;

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

std::string strip(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_feature(const std::string& field, std::size_t line_no, std::size_t col) {
  const std::string s = strip(field);
  if (s.empty()) {
    throw std::runtime_error("line " + std::to_string(line_no) + ": missing value in feature column " +
                             std::to_string(col));
  }
  double value = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw std::runtime_error("line " + std::to_string(line_no) + ": feature column " + std::to_string(col) +
                             " is not a finite number: '" + s + "'");
  }
  return value;
}

int parse_label(const std::string& field, std::size_t line_no) {
  const std::string s = strip(field);
  if (s == "1" || s == "+1") return 1;
  if (s == "-1") return -1;
  throw std::runtime_error("line " + std::to_string(line_no) + ": label must be -1 or +1, got '" + s + "'");
}

}  // namespace

std::size_t MilDataset::total_instances() const {
  std::size_t n = 0;
  for (const Bag& bag : bags) n += bag.size();
  return n;
}

void validate_dataset(const MilDataset& dataset) {
  std::unordered_set<std::string> ids;
  for (const Bag& bag : dataset.bags) {
    if (!ids.insert(bag.id).second) {
      throw std::invalid_argument("duplicate bag id '" + bag.id + "'");
    }
    if (bag.instances.empty()) {
      throw std::invalid_argument("bag '" + bag.id + "' is empty");
    }
    if (bag.label != 1 && bag.label != -1) {
      throw std::invalid_argument("bag '" + bag.id + "': label must be -1 or +1");
    }
    for (const auto& inst : bag.instances) {
      if (inst.size() != dataset.dim) {
        throw std::invalid_argument("bag '" + bag.id + "': instance dimension " +
                                    std::to_string(inst.size()) + " != dataset dim " +
                                    std::to_string(dataset.dim));
      }
      for (double v : inst) {
        if (!std::isfinite(v)) {
          throw std::invalid_argument("bag '" + bag.id + "': non-finite feature value");
        }
      }
    }
  }
}

std::size_t SplitPlan::fold_of(std::size_t repetition, const std::string& bag_id) const {
  if (repetition >= assignment.size()) {
    throw std::invalid_argument("repetition " + std::to_string(repetition) + " out of range");
  }
  auto it = assignment[repetition].find(bag_id);
  if (it == assignment[repetition].end()) {
    throw std::invalid_argument("bag '" + bag_id + "' not covered by split plan");
  }
  return it->second;
}

MilDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open dataset file '" + path + "'");
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("dataset file '" + path + "' is empty");
  }
  auto header = split_csv_line(line);
  if (header.size() < 3 || strip(header[0]) != "bag_id" || strip(header[1]) != "label") {
    throw std::runtime_error("dataset header must be 'bag_id,label,f1,...,fd'");
  }
  const std::size_t dim = header.size() - 2;

  MilDataset ds;
  ds.dim = dim;
  std::unordered_map<std::string, std::size_t> bag_index;
  std::size_t line_no = 1;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (strip(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != dim + 2) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": expected " + std::to_string(dim + 2) +
                               " fields, got " + std::to_string(fields.size()));
    }
    const std::string id = strip(fields[0]);
    if (id.empty()) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": empty bag_id");
    }
    const int label = parse_label(fields[1], line_no);
    std::vector<double> features(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      features[k] = parse_feature(fields[2 + k], line_no, k + 1);
    }
    auto it = bag_index.find(id);
    if (it == bag_index.end()) {
      bag_index.emplace(id, ds.bags.size());
      ds.bags.push_back(Bag{id, label, {std::move(features)}});
    } else {
      Bag& bag = ds.bags[it->second];
      if (bag.label != label) {
        throw std::runtime_error("line " + std::to_string(line_no) + ": bag '" + id +
                                 "' carries conflicting labels");
      }
      bag.instances.push_back(std::move(features));
    }
    ++rows;
  }
  if (rows == 0) {
    throw std::runtime_error("dataset file '" + path + "' has no data rows");
  }
  return ds;
}

void write_dataset(const MilDataset& dataset, const std::string& path) {
  validate_dataset(dataset);
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write dataset file '" + path + "'");
  }
  out << "bag_id,label";
  for (std::size_t k = 1; k <= dataset.dim; ++k) out << ",f" << k;
  out << "\n";
  for (const Bag& bag : dataset.bags) {
    for (const auto& inst : bag.instances) {
      out << bag.id << ',' << bag.label;
      for (double v : inst) out << ',' << fmt_g17(v);
      out << "\n";
    }
  }
  if (!out) {
    throw std::runtime_error("write failed for '" + path + "'");
  }
}

Standardizer fit_standardizer(const MilDataset& dataset) {
  if (dataset.bags.empty()) {
    throw std::invalid_argument("fit_standardizer: dataset is empty");
  }
  const std::size_t d = dataset.dim;
  const std::size_t n = dataset.total_instances();
  Standardizer std_;
  std_.mean.assign(d, 0.0);
  std_.scale.assign(d, 0.0);
  for (const Bag& bag : dataset.bags) {
    for (const auto& inst : bag.instances) {
      for (std::size_t k = 0; k < d; ++k) std_.mean[k] += inst[k];
    }
  }
  for (std::size_t k = 0; k < d; ++k) std_.mean[k] /= static_cast<double>(n);
  for (const Bag& bag : dataset.bags) {
    for (const auto& inst : bag.instances) {
      for (std::size_t k = 0; k < d; ++k) {
        const double c = inst[k] - std_.mean[k];
        std_.scale[k] += c * c;
      }
    }
  }
  for (std::size_t k = 0; k < d; ++k) {
    std_.scale[k] = std::sqrt(std_.scale[k] / static_cast<double>(n));
    if (std_.scale[k] < kScaleFloor) std_.scale[k] = kScaleFloor;
  }
  return std_;
}

MilDataset apply_standardizer(const Standardizer& std_, const MilDataset& dataset) {
  if (std_.mean.size() != dataset.dim || std_.scale.size() != dataset.dim) {
    throw std::invalid_argument("apply_standardizer: dimension mismatch");
  }
  MilDataset out = dataset;
  for (Bag& bag : out.bags) {
    for (auto& inst : bag.instances) {
      for (std::size_t k = 0; k < dataset.dim; ++k) {
        inst[k] = (inst[k] - std_.mean[k]) / std_.scale[k];
      }
    }
  }
  return out;
}

SplitPlan make_splits(const MilDataset& dataset, std::size_t folds, std::size_t repeats,
                      std::uint64_t seed) {
  if (folds < 2) throw std::invalid_argument("make_splits: folds must be >= 2");
  if (repeats < 1) throw std::invalid_argument("make_splits: repeats must be >= 1");

  // Sorted per-class id lists make the plan a function of the id set, not of
  // dataset order.
  std::vector<std::string> neg_ids, pos_ids;
  for (const Bag& bag : dataset.bags) {
    (bag.label > 0 ? pos_ids : neg_ids).push_back(bag.id);
  }
  std::sort(neg_ids.begin(), neg_ids.end());
  std::sort(pos_ids.begin(), pos_ids.end());
  for (const auto* cls : {&neg_ids, &pos_ids}) {
    if (cls->size() < folds) {
      throw std::invalid_argument("make_splits: a class has " + std::to_string(cls->size()) +
                                  " bags, fewer than " + std::to_string(folds) + " folds");
    }
  }

  SplitPlan plan;
  plan.repeats = repeats;
  plan.folds = folds;
  plan.assignment.resize(repeats);
  for (std::size_t rep = 0; rep < repeats; ++rep) {
    Rng rng(derive_seed(seed, {0x53504C54ULL /* split */, rep}));
    // Rotating window for the remainder bags keeps total fold sizes within
    // one of each other across classes.
    std::size_t extra_start = rng.below(folds);
    for (const auto* cls : {&neg_ids, &pos_ids}) {
      std::vector<std::string> ids = *cls;
      shuffle(ids, rng);
      const std::size_t base = ids.size() / folds;
      const std::size_t extra = ids.size() % folds;
      std::size_t next = 0;
      for (std::size_t f = 0; f < folds; ++f) {
        std::size_t take = base;
        const std::size_t offset = (f + folds - extra_start) % folds;
        if (offset < extra) ++take;
        for (std::size_t j = 0; j < take; ++j) {
          plan.assignment[rep][ids[next++]] = f;
        }
      }
      extra_start = (extra_start + extra) % folds;
    }
  }
  return plan;
}

SplitPlan load_split_plan(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open split plan '" + path + "'");
  }
  std::string line;
  if (!std::getline(in, line) || split_csv_line(strip(line)) != std::vector<std::string>{"repetition", "fold", "bag_id"}) {
    throw std::runtime_error("split plan header must be 'repetition,fold,bag_id'");
  }
  SplitPlan plan;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (strip(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != 3) {
      throw std::runtime_error("split plan line " + std::to_string(line_no) + ": expected 3 fields");
    }
    std::size_t rep = 0, fold = 0;
    try {
      rep = std::stoul(strip(fields[0]));
      fold = std::stoul(strip(fields[1]));
    } catch (const std::exception&) {
      throw std::runtime_error("split plan line " + std::to_string(line_no) + ": bad indices");
    }
    const std::string id = strip(fields[2]);
    if (rep >= plan.assignment.size()) plan.assignment.resize(rep + 1);
    if (!plan.assignment[rep].emplace(id, fold).second) {
      throw std::runtime_error("split plan line " + std::to_string(line_no) + ": bag '" + id +
                               "' assigned twice in repetition " + std::to_string(rep));
    }
    plan.folds = std::max(plan.folds, fold + 1);
  }
  plan.repeats = plan.assignment.size();
  if (plan.repeats == 0) {
    throw std::runtime_error("split plan '" + path + "' has no rows");
  }
  for (std::size_t rep = 0; rep < plan.repeats; ++rep) {
    if (plan.assignment[rep].empty()) {
      throw std::runtime_error("split plan repetition " + std::to_string(rep) + " has no rows");
    }
  }
  return plan;
}

void write_split_plan(const SplitPlan& plan, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write split plan '" + path + "'");
  }
  out << "repetition,fold,bag_id\n";
  for (std::size_t rep = 0; rep < plan.assignment.size(); ++rep) {
    // Sort rows by (fold, id) so the file is deterministic.
    std::vector<std::pair<std::size_t, std::string>> rows;
    rows.reserve(plan.assignment[rep].size());
    for (const auto& [id, fold] : plan.assignment[rep]) rows.emplace_back(fold, id);
    std::sort(rows.begin(), rows.end());
    for (const auto& [fold, id] : rows) {
      out << rep << ',' << fold << ',' << id << "\n";
    }
  }
  if (!out) {
    throw std::runtime_error("write failed for '" + path + "'");
  }
}

namespace {

std::string synth_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%04zu", prefix, i);
  return buf;
}

}  // namespace

MilDataset generate_synthetic(const SynthSpec& spec, SynthMeta* meta) {
  if (spec.dim < 1) throw std::invalid_argument("generate_synthetic: dim must be >= 1");
  if (spec.bags_per_class < 1) throw std::invalid_argument("generate_synthetic: bags_per_class must be >= 1");
  if (spec.instances_min < 1 || spec.instances_max < spec.instances_min) {
    throw std::invalid_argument("generate_synthetic: invalid instances-per-bag range");
  }
  if (!(spec.separation > 0.0)) {
    throw std::invalid_argument("generate_synthetic: separation must be positive");
  }

  Rng rng(derive_seed(spec.seed, {0x53594E54ULL /* synth */}));
  MilDataset ds;
  ds.dim = spec.dim;
  if (meta) meta->signal_instances.clear();

  auto bag_size = [&]() {
    return spec.instances_min + rng.below(spec.instances_max - spec.instances_min + 1);
  };
  auto background_instance = [&]() {
    std::vector<double> x(spec.dim);
    for (std::size_t k = 0; k < spec.dim; ++k) x[k] = rng.normal();
    return x;
  };

  const std::size_t n_class = spec.bags_per_class;
  for (std::size_t cls = 0; cls < 2; ++cls) {
    const bool positive = (cls == 0);
    for (std::size_t i = 0; i < n_class; ++i) {
      Bag bag;
      bag.id = synth_id(positive ? "pos" : "neg", i);
      bag.label = positive ? 1 : -1;
      const std::size_t n = bag_size();
      std::vector<std::size_t> signal;

      if (spec.regime == SynthRegime::kWitness) {
        // Negative bags are pure background N(0, I); positive bags replace a
        // few instances with witnesses whose every feature sits `separation`
        // noise units above background, so even a lone witness stays
        // resolvable under max pooling in bags of twenty instances.
        if (positive) {
          const std::size_t max_witness =
              std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(n))));
          const std::size_t n_witness = 1 + rng.below(max_witness);
          std::vector<std::size_t> order(n);
          for (std::size_t j = 0; j < n; ++j) order[j] = j;
          shuffle(order, rng);
          signal.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_witness));
          std::sort(signal.begin(), signal.end());
        }
        std::size_t next_signal = 0;
        for (std::size_t j = 0; j < n; ++j) {
          const bool witness = next_signal < signal.size() && signal[next_signal] == j;
          if (witness) ++next_signal;
          std::vector<double> x = background_instance();
          if (witness) {
            for (double& v : x) v += spec.separation;
          }
          bag.instances.push_back(std::move(x));
        }
      } else {
        // Both classes mix components N(+sep/2 * e1, I) and N(-sep/2 * e1, I);
        // only the mixing weight carries the label.
        const double p_signal = positive ? 0.8 : 0.2;
        const double half = spec.separation / 2.0;
        for (std::size_t j = 0; j < n; ++j) {
          const bool from_a = rng.uniform() < p_signal;
          if (from_a) signal.push_back(j);
          std::vector<double> x = background_instance();
          x[0] += from_a ? half : -half;
          bag.instances.push_back(std::move(x));
        }
      }

      ds.bags.push_back(std::move(bag));
      if (meta) meta->signal_instances.push_back(std::move(signal));
    }
  }
  return ds;
}

}  // namespace milnet
