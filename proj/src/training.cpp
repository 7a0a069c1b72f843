#include "milnet/training.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "milnet/rng.hpp"

namespace milnet {

namespace {

void check_congruent(const Gradients& g, const Network& net, const char* what) {
  if (g.pre.size() != net.pre.size() || g.post.size() != net.post.size()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
  }
  for (std::size_t l = 0; l < net.pre.size(); ++l) {
    if (g.pre[l].weights.size() != net.pre[l].weights.size() ||
        g.pre[l].bias.size() != net.pre[l].bias.size()) {
      throw std::invalid_argument(std::string(what) + ": shape mismatch");
    }
  }
  for (std::size_t l = 0; l < net.post.size(); ++l) {
    if (g.post[l].weights.size() != net.post[l].weights.size() ||
        g.post[l].bias.size() != net.post[l].bias.size()) {
      throw std::invalid_argument(std::string(what) + ": shape mismatch");
    }
  }
}

void accumulate(Gradients& into, const Gradients& from) {
  for (std::size_t l = 0; l < into.pre.size(); ++l) {
    for (std::size_t k = 0; k < into.pre[l].weights.size(); ++k) {
      into.pre[l].weights[k] += from.pre[l].weights[k];
    }
    for (std::size_t k = 0; k < into.pre[l].bias.size(); ++k) {
      into.pre[l].bias[k] += from.pre[l].bias[k];
    }
  }
  for (std::size_t l = 0; l < into.post.size(); ++l) {
    for (std::size_t k = 0; k < into.post[l].weights.size(); ++k) {
      into.post[l].weights[k] += from.post[l].weights[k];
    }
    for (std::size_t k = 0; k < into.post[l].bias.size(); ++k) {
      into.post[l].bias[k] += from.post[l].bias[k];
    }
  }
}

void scale(Gradients& g, double factor) {
  for (auto& layer : g.pre) {
    for (double& v : layer.weights) v *= factor;
    for (double& v : layer.bias) v *= factor;
  }
  for (auto& layer : g.post) {
    for (double& v : layer.weights) v *= factor;
    for (double& v : layer.bias) v *= factor;
  }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Adam recurrences for one parameter array. `penalty` is nonzero only for
// weight matrices.
void adam_update_array(std::vector<double>& params, const std::vector<double>& grads,
                       std::vector<double>& m, std::vector<double>& v, double bias1,
                       double bias2, const AdamParams& adam, double penalty) {
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double g = grads[k] + penalty * sign(params[k]);
    m[k] = adam.beta1 * m[k] + (1.0 - adam.beta1) * g;
    v[k] = adam.beta2 * v[k] + (1.0 - adam.beta2) * g * g;
    const double m_hat = m[k] / bias1;
    const double v_hat = v[k] / bias2;
    params[k] -= adam.alpha * m_hat / (std::sqrt(v_hat) + adam.epsilon);
  }
}

}  // namespace

void validate_train_config(const TrainConfig& config) {
  if (config.batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (!(config.adam.alpha >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
  if (config.adam.beta1 < 0.0 || config.adam.beta1 >= 1.0 || config.adam.beta2 < 0.0 ||
      config.adam.beta2 >= 1.0) {
    throw std::invalid_argument("beta1/beta2 must lie in [0, 1)");
  }
  if (!(config.adam.epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
  if (!(config.lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
}

AdamState init_adam_state(const Network& net) {
  AdamState state;
  state.first_moment = zero_gradients(net);
  state.second_moment = zero_gradients(net);
  state.step = 0;
  return state;
}

HingeResult hinge_loss(double score, int label) {
  if (label != 1 && label != -1) {
    throw std::invalid_argument("hinge_loss: label must be -1 or +1");
  }
  const double margin = static_cast<double>(label) * score;
  if (margin < 1.0) {
    return HingeResult{1.0 - margin, -static_cast<double>(label)};
  }
  return HingeResult{0.0, 0.0};
}

double objective(const Network& net, const std::vector<Bag>& bags, double lambda) {
  if (bags.empty()) throw std::invalid_argument("objective: empty bag list");
  double total = 0.0;
  for (const Bag& bag : bags) {
    total += hinge_loss(forward_bag(net, bag), bag.label).loss;
  }
  return total / static_cast<double>(bags.size()) + lambda * weight_l1(net);
}

Gradients batch_gradient(const Network& net, const std::vector<const Bag*>& batch) {
  if (batch.empty()) throw std::invalid_argument("batch_gradient: empty batch");
  Gradients total = zero_gradients(net);
  ForwardTrace trace;
  for (const Bag* bag : batch) {
    const double score = forward_bag(net, *bag, &trace);
    const HingeResult hinge = hinge_loss(score, bag->label);
    if (hinge.dscore == 0.0) continue;
    accumulate(total, backward_bag(net, trace, hinge.dscore));
  }
  scale(total, 1.0 / static_cast<double>(batch.size()));
  return total;
}

void adam_step(Network& net, const Gradients& grads, AdamState& state, const AdamParams& adam,
               double lambda) {
  check_congruent(grads, net, "adam_step");
  check_congruent(state.first_moment, net, "adam_step state");
  state.step += 1;
  const double bias1 = 1.0 - std::pow(adam.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(adam.beta2, static_cast<double>(state.step));
  for (std::size_t l = 0; l < net.pre.size(); ++l) {
    adam_update_array(net.pre[l].weights, grads.pre[l].weights, state.first_moment.pre[l].weights,
                      state.second_moment.pre[l].weights, bias1, bias2, adam, lambda);
    adam_update_array(net.pre[l].bias, grads.pre[l].bias, state.first_moment.pre[l].bias,
                      state.second_moment.pre[l].bias, bias1, bias2, adam, 0.0);
  }
  for (std::size_t l = 0; l < net.post.size(); ++l) {
    adam_update_array(net.post[l].weights, grads.post[l].weights, state.first_moment.post[l].weights,
                      state.second_moment.post[l].weights, bias1, bias2, adam, lambda);
    adam_update_array(net.post[l].bias, grads.post[l].bias, state.first_moment.post[l].bias,
                      state.second_moment.post[l].bias, bias1, bias2, adam, 0.0);
  }
}

std::pair<Network, TrainReport> train(const Network& net, const MilDataset& dataset,
                                      const TrainConfig& config) {
  validate_train_config(config);
  validate_dataset(dataset);
  if (dataset.bags.empty()) throw std::invalid_argument("train: dataset is empty");
  if (dataset.dim != net.arch.input_dim) {
    throw std::invalid_argument("train: dataset dimension != network input dimension");
  }

  Network current = net;
  AdamState state = init_adam_state(current);
  Rng rng(derive_seed(config.seed, {0x54524E24ULL /* train */}));

  TrainReport report;
  const double initial = objective(current, dataset.bags, config.lambda);
  report.checkpoints.push_back({0, initial, initial});

  std::vector<std::size_t> order(dataset.bags.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();  // forces a shuffle before the first batch

  std::vector<const Bag*> batch;
  for (std::size_t iter = 1; iter <= config.max_iterations; ++iter) {
    if (cursor >= order.size()) {
      shuffle(order, rng);
      cursor = 0;
    }
    const std::size_t take = std::min(config.batch_size, order.size() - cursor);
    batch.clear();
    for (std::size_t j = 0; j < take; ++j) batch.push_back(&dataset.bags[order[cursor + j]]);
    cursor += take;

    double batch_obj = 0.0;
    const bool checkpoint = iter % 500 == 0 || iter == config.max_iterations;
    if (checkpoint) {
      double loss = 0.0;
      for (const Bag* bag : batch) loss += hinge_loss(forward_bag(current, *bag), bag->label).loss;
      batch_obj = loss / static_cast<double>(batch.size()) + config.lambda * weight_l1(current);
    }

    const Gradients grads = batch_gradient(current, batch);
    adam_step(current, grads, state, config.adam, config.lambda);

    if (checkpoint) {
      report.checkpoints.push_back(
          {iter, batch_obj, objective(current, dataset.bags, config.lambda)});
    }
  }

  report.final_weight_l1 = weight_l1(current);
  return {std::move(current), std::move(report)};
}

namespace {

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string train_config_to_kv(const TrainConfig& config) {
  std::ostringstream out;
  out << "batch=" << config.batch_size << "\n";
  out << "iters=" << config.max_iterations << "\n";
  out << "lambda=" << fmt_g17(config.lambda) << "\n";
  out << "alpha=" << fmt_g17(config.adam.alpha) << "\n";
  out << "beta1=" << fmt_g17(config.adam.beta1) << "\n";
  out << "beta2=" << fmt_g17(config.adam.beta2) << "\n";
  out << "epsilon=" << fmt_g17(config.adam.epsilon) << "\n";
  out << "seed=" << config.seed << "\n";
  out << "standardize=" << (config.standardize ? "true" : "false") << "\n";
  return out.str();
}

TrainConfig train_config_from_kv(const std::string& text, const TrainConfig& base) {
  TrainConfig config = base;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    std::size_t e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (key == "batch") config.batch_size = std::stoul(value);
      else if (key == "iters") config.max_iterations = std::stoul(value);
      else if (key == "lambda") config.lambda = std::stod(value);
      else if (key == "alpha") config.adam.alpha = std::stod(value);
      else if (key == "beta1") config.adam.beta1 = std::stod(value);
      else if (key == "beta2") config.adam.beta2 = std::stod(value);
      else if (key == "epsilon") config.adam.epsilon = std::stod(value);
      else if (key == "seed") config.seed = std::stoull(value);
      else if (key == "standardize") {
        if (value == "true" || value == "1") config.standardize = true;
        else if (value == "false" || value == "0") config.standardize = false;
        else throw std::invalid_argument("bad boolean");
      } else {
        throw std::invalid_argument("unknown key '" + key + "'");
      }
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": " + e.what());
    } catch (const std::exception&) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": bad value for '" +
                                  key + "'");
    }
  }
  validate_train_config(config);
  return config;
}

}  // namespace milnet
