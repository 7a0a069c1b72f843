#ifndef MILNET_TRAINING_HPP_
#define MILNET_TRAINING_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "milnet/network.hpp"

namespace milnet {

struct AdamParams {
  double alpha = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  std::size_t batch_size = 100;
  std::size_t max_iterations = 10000;
  double lambda = 0.0;  // L1 strength on weight matrices
  AdamParams adam;
  std::uint64_t seed = 0;
  bool standardize = true;
};

void validate_train_config(const TrainConfig& config);

// Parameter-shaped moment accumulators plus the step counter.
struct AdamState {
  Gradients first_moment;
  Gradients second_moment;
  std::size_t step = 0;
};

AdamState init_adam_state(const Network& net);

struct TrainReport {
  struct Checkpoint {
    std::size_t iteration = 0;
    double batch_objective = 0.0;
    double full_objective = 0.0;
  };
  std::vector<Checkpoint> checkpoints;
  double final_weight_l1 = 0.0;
};

struct HingeResult {
  double loss = 0.0;
  double dscore = 0.0;
};

// loss = max(0, 1 - label*score); dscore = -label while inside the margin.
HingeResult hinge_loss(double score, int label);

// Mean hinge loss over bags plus lambda * sum|w| over weight matrices
// (biases excluded).
double objective(const Network& net, const std::vector<Bag>& bags, double lambda);

// Mean of per-bag score gradients weighted by the hinge derivative; exactly
// the average of backward_bag results over the batch.
Gradients batch_gradient(const Network& net, const std::vector<const Bag*>& batch);

// One Adam update with bias correction. The L1 subgradient lambda * sign(w)
// (sign(0) = 0) is folded into the weight gradients before the update;
// biases carry no penalty.
void adam_step(Network& net, const Gradients& grads, AdamState& state, const AdamParams& adam,
               double lambda);

// Runs exactly config.max_iterations mini-batch steps: the bag order is
// reshuffled every epoch (deterministic per seed), consecutive slices form
// batches, and a final short slice is used as-is. Checkpoints are recorded at
// iteration 0, every 500 iterations and at the last iteration. Training never
// standardizes; callers own that choice.
std::pair<Network, TrainReport> train(const Network& net, const MilDataset& dataset,
                                      const TrainConfig& config);

// Flat key=value serialization of TrainConfig (one `key=value` per line).
std::string train_config_to_kv(const TrainConfig& config);
TrainConfig train_config_from_kv(const std::string& text, const TrainConfig& base = {});

}  // namespace milnet

#endif  // MILNET_TRAINING_HPP_
