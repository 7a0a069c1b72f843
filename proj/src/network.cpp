#include "milnet/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "milnet/rng.hpp"

namespace milnet {

const char* to_string(PoolKind kind) {
  switch (kind) {
    case PoolKind::kMean: return "mean";
    case PoolKind::kMax: return "max";
    case PoolKind::kSmoothMax: return "smoothmax";
  }
  return "?";
}

const char* to_string(ArchKind kind) {
  switch (kind) {
    case ArchKind::kProposed: return "proposed";
    case ArchKind::kPriorNn: return "prior-nn";
  }
  return "?";
}

const char* to_string(Activation act) {
  switch (act) {
    case Activation::kRelu: return "relu";
    case Activation::kLinear: return "linear";
  }
  return "?";
}

PoolKind pool_kind_from_string(const std::string& s) {
  if (s == "mean") return PoolKind::kMean;
  if (s == "max") return PoolKind::kMax;
  if (s == "smoothmax" || s == "smooth-max") return PoolKind::kSmoothMax;
  throw std::invalid_argument("unknown pooling kind '" + s + "'");
}

ArchKind arch_kind_from_string(const std::string& s) {
  if (s == "proposed") return ArchKind::kProposed;
  if (s == "prior-nn" || s == "prior_nn") return ArchKind::kPriorNn;
  throw std::invalid_argument("unknown architecture '" + s + "'");
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "linear") return Activation::kLinear;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

namespace {

void validate_layer(const Layer& layer, const char* where) {
  if (layer.out_dim == 0 || layer.in_dim == 0) {
    throw std::invalid_argument(std::string(where) + ": zero layer dimension");
  }
  if (layer.weights.size() != layer.out_dim * layer.in_dim || layer.bias.size() != layer.out_dim) {
    throw std::invalid_argument(std::string(where) + ": weight/bias shape mismatch");
  }
}

// z = W x + b
void affine(const Layer& layer, const std::vector<double>& x, std::vector<double>& z) {
  z.assign(layer.out_dim, 0.0);
  for (std::size_t r = 0; r < layer.out_dim; ++r) {
    const double* row = layer.weights.data() + r * layer.in_dim;
    double acc = layer.bias[r];
    for (std::size_t c = 0; c < layer.in_dim; ++c) acc += row[c] * x[c];
    z[r] = acc;
  }
}

void activate(Activation act, const std::vector<double>& z, std::vector<double>& h) {
  h = z;
  if (act == Activation::kRelu) {
    for (double& v : h) v = v > 0.0 ? v : 0.0;
  }
}

double activation_grad(Activation act, double z) {
  if (act == Activation::kRelu) return z > 0.0 ? 1.0 : 0.0;
  return 1.0;
}

// Sums in ascending order so the result does not depend on addend order.
double sorted_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += t;
  return acc;
}

}  // namespace

void validate_network(const Network& net) {
  if (net.arch.input_dim == 0) throw std::invalid_argument("network: input_dim must be positive");
  if (net.pre.empty()) throw std::invalid_argument("network: no per-instance layers");
  std::size_t dim = net.arch.input_dim;
  for (const Layer& layer : net.pre) {
    validate_layer(layer, "pre layer");
    if (layer.in_dim != dim) throw std::invalid_argument("pre layer input dimension mismatch");
    dim = layer.out_dim;
  }
  const std::size_t pooled_dim = dim;
  for (const Layer& layer : net.post) {
    validate_layer(layer, "post layer");
    if (layer.in_dim != dim) throw std::invalid_argument("post layer input dimension mismatch");
    dim = layer.out_dim;
  }
  if (dim != 1) throw std::invalid_argument("network must end in exactly one scalar output");
  if (net.arch.kind == ArchKind::kPriorNn) {
    if (net.pool != PoolKind::kMax) {
      throw std::invalid_argument("prior-nn mandates max pooling");
    }
    if (!net.post.empty() || pooled_dim != 1) {
      throw std::invalid_argument("prior-nn pools the scalar output of the last linear unit");
    }
  }
  if (net.standardizer &&
      (net.standardizer->mean.size() != net.arch.input_dim ||
       net.standardizer->scale.size() != net.arch.input_dim)) {
    throw std::invalid_argument("standardizer dimension mismatch");
  }
}

Gradients zero_gradients(const Network& net) {
  Gradients g;
  g.pre.reserve(net.pre.size());
  for (const Layer& layer : net.pre) {
    g.pre.push_back(LayerGrads{std::vector<double>(layer.weights.size(), 0.0),
                               std::vector<double>(layer.bias.size(), 0.0)});
  }
  g.post.reserve(net.post.size());
  for (const Layer& layer : net.post) {
    g.post.push_back(LayerGrads{std::vector<double>(layer.weights.size(), 0.0),
                                std::vector<double>(layer.bias.size(), 0.0)});
  }
  return g;
}

namespace {

Layer random_layer(std::size_t out_dim, std::size_t in_dim, Activation act, Rng& rng) {
  Layer layer;
  layer.out_dim = out_dim;
  layer.in_dim = in_dim;
  layer.activation = act;
  layer.weights.resize(out_dim * in_dim);
  const double stddev = std::sqrt(2.0 / static_cast<double>(in_dim));
  for (double& w : layer.weights) w = rng.normal() * stddev;
  layer.bias.assign(out_dim, 0.0);
  return layer;
}

}  // namespace

Network init_network(const Architecture& arch, PoolKind pool, std::uint64_t seed) {
  if (arch.input_dim < 1) throw std::invalid_argument("init_network: input_dim must be >= 1");
  if (arch.embed_dim < 1) throw std::invalid_argument("init_network: embed_dim must be >= 1");
  if (arch.kind == ArchKind::kPriorNn && pool != PoolKind::kMax) {
    throw std::invalid_argument("init_network: prior-nn mandates max pooling");
  }
  Rng rng(derive_seed(seed, {0x494E4954ULL /* init */}));
  Network net;
  net.arch = arch;
  net.pool = pool;
  net.pre.push_back(random_layer(arch.embed_dim, arch.input_dim, Activation::kRelu, rng));
  if (arch.kind == ArchKind::kProposed) {
    net.post.push_back(random_layer(1, arch.embed_dim, Activation::kLinear, rng));
  } else {
    net.pre.push_back(random_layer(1, arch.embed_dim, Activation::kLinear, rng));
  }
  validate_network(net);
  return net;
}

std::vector<double> pool_forward(const std::vector<std::vector<double>>& values, PoolKind kind) {
  if (values.empty()) throw std::invalid_argument("pool_forward: empty instance list");
  const std::size_t m = values.front().size();
  for (const auto& v : values) {
    if (v.size() != m) throw std::invalid_argument("pool_forward: ragged instance vectors");
  }
  const std::size_t n = values.size();
  std::vector<double> out(m, 0.0);
  std::vector<double> terms(n);
  switch (kind) {
    case PoolKind::kMean:
      for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t i = 0; i < n; ++i) terms[i] = values[i][j];
        out[j] = sorted_sum(terms) / static_cast<double>(n);
      }
      break;
    case PoolKind::kMax:
      for (std::size_t j = 0; j < m; ++j) {
        double best = values[0][j];
        for (std::size_t i = 1; i < n; ++i) best = std::max(best, values[i][j]);
        out[j] = best;
      }
      break;
    case PoolKind::kSmoothMax:
      for (std::size_t j = 0; j < m; ++j) {
        double peak = values[0][j];
        for (std::size_t i = 1; i < n; ++i) peak = std::max(peak, values[i][j]);
        for (std::size_t i = 0; i < n; ++i) terms[i] = std::exp(values[i][j] - peak);
        out[j] = (peak + std::log(sorted_sum(terms))) / static_cast<double>(n);
      }
      break;
  }
  return out;
}

std::vector<std::vector<double>> pool_backward(const std::vector<std::vector<double>>& values,
                                               PoolKind kind,
                                               const std::vector<double>& upstream) {
  if (values.empty()) throw std::invalid_argument("pool_backward: empty instance list");
  const std::size_t m = values.front().size();
  if (upstream.size() != m) throw std::invalid_argument("pool_backward: upstream dimension mismatch");
  const std::size_t n = values.size();
  std::vector<std::vector<double>> grads(n, std::vector<double>(m, 0.0));
  switch (kind) {
    case PoolKind::kMean:
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) grads[i][j] = upstream[j] / static_cast<double>(n);
      }
      break;
    case PoolKind::kMax:
      for (std::size_t j = 0; j < m; ++j) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < n; ++i) {
          if (values[i][j] > values[best][j]) best = i;
        }
        grads[best][j] = upstream[j];
      }
      break;
    case PoolKind::kSmoothMax:
      for (std::size_t j = 0; j < m; ++j) {
        double peak = values[0][j];
        for (std::size_t i = 1; i < n; ++i) peak = std::max(peak, values[i][j]);
        double denom = 0.0;
        for (std::size_t i = 0; i < n; ++i) denom += std::exp(values[i][j] - peak);
        for (std::size_t i = 0; i < n; ++i) {
          grads[i][j] = upstream[j] * std::exp(values[i][j] - peak) / denom / static_cast<double>(n);
        }
      }
      break;
  }
  return grads;
}

double forward_bag(const Network& net, const Bag& bag, ForwardTrace* trace) {
  validate_network(net);
  if (bag.instances.empty()) throw std::invalid_argument("forward_bag: empty bag");
  for (const auto& inst : bag.instances) {
    if (inst.size() != net.arch.input_dim) {
      throw std::invalid_argument("forward_bag: bag dimension " + std::to_string(inst.size()) +
                                  " != network input dimension " + std::to_string(net.arch.input_dim));
    }
  }
  const std::size_t n = bag.instances.size();

  ForwardTrace local;
  ForwardTrace& t = trace ? *trace : local;
  t = ForwardTrace{};
  t.bag_size = n;
  t.pre_acts.resize(net.pre.size() + 1);
  t.pre_zs.resize(net.pre.size());
  t.pre_acts[0] = bag.instances;

  for (std::size_t l = 0; l < net.pre.size(); ++l) {
    t.pre_zs[l].resize(n);
    t.pre_acts[l + 1].resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      affine(net.pre[l], t.pre_acts[l][i], t.pre_zs[l][i]);
      activate(net.pre[l].activation, t.pre_zs[l][i], t.pre_acts[l + 1][i]);
    }
  }

  const auto& embedded = t.pre_acts.back();
  if (net.arch.kind == ArchKind::kPriorNn) {
    // Scalar max over whole per-instance outputs; deliberately a separate
    // route from pool_forward so the special-case equivalence is a real check.
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (embedded[i][0] > embedded[best][0]) best = i;
    }
    t.pooled = {embedded[best][0]};
    t.argmax = {best};
  } else {
    t.pooled = pool_forward(embedded, net.pool);
    if (net.pool == PoolKind::kMax) {
      const std::size_t m = t.pooled.size();
      t.argmax.assign(m, 0);
      for (std::size_t j = 0; j < m; ++j) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < n; ++i) {
          if (embedded[i][j] > embedded[best][j]) best = i;
        }
        t.argmax[j] = best;
      }
    }
  }

  t.post_acts.resize(net.post.size() + 1);
  t.post_zs.resize(net.post.size());
  t.post_acts[0] = t.pooled;
  for (std::size_t l = 0; l < net.post.size(); ++l) {
    affine(net.post[l], t.post_acts[l], t.post_zs[l]);
    activate(net.post[l].activation, t.post_zs[l], t.post_acts[l + 1]);
  }
  t.score = t.post_acts.back()[0];
  return t.score;
}

namespace {

void check_trace_shape(const Network& net, const ForwardTrace& trace) {
  if (trace.bag_size == 0 || trace.pre_acts.size() != net.pre.size() + 1 ||
      trace.pre_zs.size() != net.pre.size() || trace.post_acts.size() != net.post.size() + 1 ||
      trace.post_zs.size() != net.post.size()) {
    throw std::invalid_argument("backward_bag: trace does not match network");
  }
  for (std::size_t l = 0; l < net.pre.size(); ++l) {
    if (trace.pre_zs[l].size() != trace.bag_size || trace.pre_acts[l].size() != trace.bag_size ||
        trace.pre_zs[l].front().size() != net.pre[l].out_dim ||
        trace.pre_acts[l].front().size() != net.pre[l].in_dim) {
      throw std::invalid_argument("backward_bag: trace does not match network");
    }
  }
  const std::size_t pooled_dim = net.pre.back().out_dim;
  const bool scalar_max = net.arch.kind == ArchKind::kPriorNn;
  if (trace.pooled.size() != (scalar_max ? 1 : pooled_dim)) {
    throw std::invalid_argument("backward_bag: trace does not match network");
  }
  for (std::size_t l = 0; l < net.post.size(); ++l) {
    if (trace.post_zs[l].size() != net.post[l].out_dim ||
        trace.post_acts[l].size() != net.post[l].in_dim) {
      throw std::invalid_argument("backward_bag: trace does not match network");
    }
  }
}

// Accumulates dz x input into the layer gradients and returns W^T dz.
void layer_backward(const Layer& layer, const std::vector<double>& input,
                    const std::vector<double>& dz, LayerGrads& grads,
                    std::vector<double>& dinput) {
  for (std::size_t r = 0; r < layer.out_dim; ++r) {
    const double g = dz[r];
    if (g == 0.0) continue;
    double* wrow = grads.weights.data() + r * layer.in_dim;
    for (std::size_t c = 0; c < layer.in_dim; ++c) wrow[c] += g * input[c];
    grads.bias[r] += g;
  }
  dinput.assign(layer.in_dim, 0.0);
  for (std::size_t r = 0; r < layer.out_dim; ++r) {
    const double g = dz[r];
    if (g == 0.0) continue;
    const double* row = layer.weights.data() + r * layer.in_dim;
    for (std::size_t c = 0; c < layer.in_dim; ++c) dinput[c] += row[c] * g;
  }
}

}  // namespace

Gradients backward_bag(const Network& net, const ForwardTrace& trace, double dscore) {
  validate_network(net);
  check_trace_shape(net, trace);
  Gradients grads = zero_gradients(net);
  if (dscore == 0.0) return grads;

  const std::size_t n = trace.bag_size;

  // Post-pool classifier.
  std::vector<double> dact{dscore};
  std::vector<double> dz, dprev;
  for (std::size_t l = net.post.size(); l-- > 0;) {
    const Layer& layer = net.post[l];
    dz.assign(layer.out_dim, 0.0);
    for (std::size_t r = 0; r < layer.out_dim; ++r) {
      dz[r] = dact[r] * activation_grad(layer.activation, trace.post_zs[l][r]);
    }
    layer_backward(layer, trace.post_acts[l], dz, grads.post[l], dprev);
    dact = dprev;
  }
  const std::vector<double> dpooled = dact;

  // Route the pooled gradient to instances.
  const auto& embedded = trace.pre_acts.back();
  const std::size_t m = dpooled.size();
  std::vector<std::vector<double>> dinstance(n, std::vector<double>(m, 0.0));
  switch (net.pool) {
    case PoolKind::kMean:
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) dinstance[i][j] = dpooled[j] / static_cast<double>(n);
      }
      break;
    case PoolKind::kMax:
      for (std::size_t j = 0; j < m; ++j) {
        if (trace.argmax.size() != m) {
          throw std::invalid_argument("backward_bag: trace missing argmax bookkeeping");
        }
        dinstance[trace.argmax[j]][j] = dpooled[j];
      }
      break;
    case PoolKind::kSmoothMax:
      for (std::size_t j = 0; j < m; ++j) {
        double peak = embedded[0][j];
        for (std::size_t i = 1; i < n; ++i) peak = std::max(peak, embedded[i][j]);
        double denom = 0.0;
        for (std::size_t i = 0; i < n; ++i) denom += std::exp(embedded[i][j] - peak);
        for (std::size_t i = 0; i < n; ++i) {
          dinstance[i][j] =
              dpooled[j] * std::exp(embedded[i][j] - peak) / denom / static_cast<double>(n);
        }
      }
      break;
  }

  // Per-instance embedding layers; contributions summed over instances.
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> dh = dinstance[i];
    bool all_zero = true;
    for (double v : dh) {
      if (v != 0.0) { all_zero = false; break; }
    }
    if (all_zero) continue;
    for (std::size_t l = net.pre.size(); l-- > 0;) {
      const Layer& layer = net.pre[l];
      dz.assign(layer.out_dim, 0.0);
      for (std::size_t r = 0; r < layer.out_dim; ++r) {
        dz[r] = dh[r] * activation_grad(layer.activation, trace.pre_zs[l][i][r]);
      }
      layer_backward(layer, trace.pre_acts[l][i], dz, grads.pre[l], dprev);
      dh = dprev;
    }
  }
  return grads;
}

bool equivalence_check(const std::vector<Layer>& shared_layers, std::size_t probe_bags,
                       std::uint64_t probe_seed, PoolKind proposed_pool) {
  if (shared_layers.empty()) throw std::invalid_argument("equivalence_check: no shared layers");
  if (shared_layers.back().out_dim != 1) {
    throw std::invalid_argument("equivalence_check: shared layers must end in a scalar (m = 1)");
  }
  const std::size_t d = shared_layers.front().in_dim;

  Network prior;
  prior.arch = Architecture{ArchKind::kPriorNn, d, shared_layers.front().out_dim};
  prior.pool = PoolKind::kMax;
  prior.pre = shared_layers;

  Network proposed;
  proposed.arch = Architecture{ArchKind::kProposed, d, 1};
  proposed.pool = proposed_pool;
  proposed.pre = shared_layers;  // embeds into dimension one; post-pool f is identity

  validate_network(prior);
  validate_network(proposed);

  Rng rng(derive_seed(probe_seed, {0x50524F42ULL /* probe */}));
  for (std::size_t p = 0; p < probe_bags; ++p) {
    Bag bag;
    bag.id = "probe";
    bag.label = 1;
    const std::size_t size = 1 + rng.below(8);
    for (std::size_t i = 0; i < size; ++i) {
      std::vector<double> x(d);
      for (double& v : x) v = rng.normal();
      bag.instances.push_back(std::move(x));
    }
    if (forward_bag(prior, bag) != forward_bag(proposed, bag)) {
      return false;
    }
  }
  return true;
}

double weight_l1(const Network& net) {
  double acc = 0.0;
  for (const Layer& layer : net.pre) {
    for (double w : layer.weights) acc += std::abs(w);
  }
  for (const Layer& layer : net.post) {
    for (double w : layer.weights) acc += std::abs(w);
  }
  return acc;
}

namespace {

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_double_array(std::ostream& out, const std::vector<double>& values) {
  out << '[';
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out << ',';
    out << fmt_g17(values[i]);
  }
  out << ']';
}

void write_layer(std::ostream& out, const Layer& layer) {
  out << "{\"rows\":" << layer.out_dim << ",\"cols\":" << layer.in_dim << ",\"weights\":";
  write_double_array(out, layer.weights);
  out << ",\"bias\":";
  write_double_array(out, layer.bias);
  out << ",\"activation\":\"" << to_string(layer.activation) << "\"}";
}

std::vector<double> read_double_array(const nlohmann::json& j, const char* what) {
  if (!j.is_array()) throw std::runtime_error(std::string("model file: ") + what + " must be an array");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) throw std::runtime_error(std::string("model file: ") + what + " holds a non-number");
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace

void save_model(const Network& net, const std::string& path) {
  validate_network(net);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model file '" + path + "'");
  out << "{\"format_version\":1,";
  out << "\"architecture\":{\"kind\":\"" << to_string(net.arch.kind) << "\",\"input_dim\":"
      << net.arch.input_dim << ",\"embed_dim\":" << net.arch.embed_dim
      << ",\"pre_layers\":" << net.pre.size() << "},";
  out << "\"pool\":\"" << to_string(net.pool) << "\",";
  out << "\"layers\":[";
  bool first = true;
  for (const Layer& layer : net.pre) {
    if (!first) out << ',';
    first = false;
    write_layer(out, layer);
  }
  for (const Layer& layer : net.post) {
    if (!first) out << ',';
    first = false;
    write_layer(out, layer);
  }
  out << "],";
  if (net.standardizer) {
    out << "\"standardizer\":{\"mean\":";
    write_double_array(out, net.standardizer->mean);
    out << ",\"scale\":";
    write_double_array(out, net.standardizer->scale);
    out << "}";
  } else {
    out << "\"standardizer\":null";
  }
  out << "}\n";
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

Network load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("model file '" + path + "' is not valid JSON: " + e.what());
  }
  try {
    if (j.at("format_version").get<int>() != 1) {
      throw std::runtime_error("unsupported model format version");
    }
    const auto& arch = j.at("architecture");
    Network net;
    net.arch.kind = arch_kind_from_string(arch.at("kind").get<std::string>());
    net.arch.input_dim = arch.at("input_dim").get<std::size_t>();
    net.arch.embed_dim = arch.at("embed_dim").get<std::size_t>();
    const std::size_t pre_layers = arch.at("pre_layers").get<std::size_t>();
    net.pool = pool_kind_from_string(j.at("pool").get<std::string>());
    const auto& layers = j.at("layers");
    if (!layers.is_array() || layers.size() < pre_layers) {
      throw std::runtime_error("model file: bad layers array");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& jl = layers[l];
      Layer layer;
      layer.out_dim = jl.at("rows").get<std::size_t>();
      layer.in_dim = jl.at("cols").get<std::size_t>();
      layer.weights = read_double_array(jl.at("weights"), "weights");
      layer.bias = read_double_array(jl.at("bias"), "bias");
      layer.activation = activation_from_string(jl.at("activation").get<std::string>());
      (l < pre_layers ? net.pre : net.post).push_back(std::move(layer));
    }
    if (!j.at("standardizer").is_null()) {
      Standardizer std_;
      std_.mean = read_double_array(j.at("standardizer").at("mean"), "standardizer.mean");
      std_.scale = read_double_array(j.at("standardizer").at("scale"), "standardizer.scale");
      net.standardizer = std::move(std_);
    }
    validate_network(net);
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("model file '" + path + "' is malformed: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("model file '" + path + "' is inconsistent: " + e.what());
  }
}

}  // namespace milnet
