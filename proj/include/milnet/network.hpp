#ifndef MILNET_NETWORK_HPP_
#define MILNET_NETWORK_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "milnet/data.hpp"

namespace milnet {

// Pooling inside the network turns a variable-size set of per-instance
// embeddings into one fixed-length vector. smooth-max computes
// (1/|b|) * ln(sum_x exp(v(x))) coordinate-wise.
enum class PoolKind { kMean, kMax, kSmoothMax };

// kProposed pools m-dimensional per-instance embeddings and classifies the
// pooled vector; kPriorNn runs the whole network per instance and max-pools
// the scalar output after the last linear unit.
enum class ArchKind { kProposed, kPriorNn };

enum class Activation { kRelu, kLinear };

const char* to_string(PoolKind kind);
const char* to_string(ArchKind kind);
const char* to_string(Activation act);
PoolKind pool_kind_from_string(const std::string& s);
ArchKind arch_kind_from_string(const std::string& s);
Activation activation_from_string(const std::string& s);

// Dense layer y = act(W x + b); weights row-major, out_dim x in_dim.
struct Layer {
  std::size_t out_dim = 0;
  std::size_t in_dim = 0;
  std::vector<double> weights;
  std::vector<double> bias;
  Activation activation = Activation::kLinear;
};

struct Architecture {
  ArchKind kind = ArchKind::kProposed;
  std::size_t input_dim = 0;
  std::size_t embed_dim = 0;  // bag-representation width m (hidden width for prior-nn)
};

// pre: per-instance layers applied before pooling. post: classifier layers on
// the pooled vector; empty post means the pooled scalar is the score.
// prior-nn networks keep all layers in pre and pool the scalar output.
struct Network {
  Architecture arch;
  PoolKind pool = PoolKind::kMean;
  std::vector<Layer> pre;
  std::vector<Layer> post;
  std::optional<Standardizer> standardizer;
};

// Throws std::invalid_argument unless layer dimensions chain from input_dim
// to a single scalar output and the architecture invariants hold (prior-nn:
// max pooling, scalar pre output, empty post).
void validate_network(const Network& net);

// Everything backward_bag needs: inputs and pre-activations per layer, the
// pooled vector, and the argmax instance per coordinate for max pooling.
// pre_acts[0] holds the instance features; pre_acts[l+1] the activations of
// pre layer l. post_acts[0] is the pooled vector.
struct ForwardTrace {
  std::size_t bag_size = 0;
  std::vector<std::vector<std::vector<double>>> pre_acts;
  std::vector<std::vector<std::vector<double>>> pre_zs;
  std::vector<double> pooled;
  std::vector<std::size_t> argmax;
  std::vector<std::vector<double>> post_acts;
  std::vector<std::vector<double>> post_zs;
  double score = 0.0;
};

struct LayerGrads {
  std::vector<double> weights;
  std::vector<double> bias;
};

// Shape-congruent with the Network the gradients were computed from.
struct Gradients {
  std::vector<LayerGrads> pre;
  std::vector<LayerGrads> post;
};

Gradients zero_gradients(const Network& net);

// He-normal weights (variance 2/fan-in), zero biases; deterministic per seed.
// proposed: [relu input_dim -> embed_dim] + post [linear embed_dim -> 1];
// prior-nn: [relu input_dim -> embed_dim, linear embed_dim -> 1], max pool.
Network init_network(const Architecture& arch, PoolKind pool, std::uint64_t seed);

// Coordinate-wise mean / max / (1/n) * ln(sum exp). Mean and smooth-max sum
// addends in sorted order so the result is bit-identical under instance
// permutation.
std::vector<double> pool_forward(const std::vector<std::vector<double>>& values, PoolKind kind);

// Gradient of the pooled vector w.r.t. each instance vector, contracted with
// an upstream gradient. Max routes everything to the lowest-index argmax.
std::vector<std::vector<double>> pool_backward(const std::vector<std::vector<double>>& values,
                                               PoolKind kind,
                                               const std::vector<double>& upstream);

// Score of one bag; fills *trace when given. Pure function of (net, bag).
double forward_bag(const Network& net, const Bag& bag, ForwardTrace* trace = nullptr);

// Gradients of score * dscore w.r.t. every parameter. The trace must come
// from forward_bag on the same network. ReLU subgradient at 0 is 0.
Gradients backward_bag(const Network& net, const ForwardTrace& trace, double dscore);

// Verifies that a prior-nn network and the proposed network with m = 1, max
// pooling and identity post-pool classifier score identically on a
// deterministic probe set, sharing the given per-instance layers. The last
// shared layer must produce a scalar. proposed_pool deliberately breaks the
// correspondence when set to anything but max (the equivalence must then
// fail on some probe bag).
bool equivalence_check(const std::vector<Layer>& shared_layers, std::size_t probe_bags = 64,
                       std::uint64_t probe_seed = 0x70726f6265ULL,
                       PoolKind proposed_pool = PoolKind::kMax);

// Sum of |w| over all weight matrices (biases excluded).
double weight_l1(const Network& net);

// Model file: JSON with architecture, pooling kind, layers (row-major
// weights) and optional standardizer. Doubles carry 17 significant digits so
// save -> load round-trips bit-exactly.
void save_model(const Network& net, const std::string& path);
Network load_model(const std::string& path);

}  // namespace milnet

#endif  // MILNET_NETWORK_HPP_
