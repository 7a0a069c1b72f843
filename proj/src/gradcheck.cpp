#include "milnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "milnet/rng.hpp"

namespace milnet {

namespace {

constexpr std::uint64_t kCaseTag = 0x47434153ULL;

// Entries where both sides are this small carry no signal either way.
constexpr double kNoiseFloor = 1e-10;

// Ulp budget for the roundoff of one central-difference estimate.
constexpr double kFdNoiseUlps = 4.0;

Bag random_bag(std::size_t n, std::size_t dim, Rng& rng) {
  Bag bag;
  bag.id = "probe";
  bag.label = 1;
  bag.instances.assign(n, std::vector<double>(dim));
  for (auto& inst : bag.instances) {
    for (double& v : inst) v = rng.normal();
  }
  return bag;
}

bool near_relu_kink(const Network& net, const ForwardTrace& trace, double margin) {
  for (std::size_t l = 0; l < net.pre.size(); ++l) {
    if (net.pre[l].activation != Activation::kRelu) continue;
    for (const auto& zs : trace.pre_zs[l]) {
      for (double z : zs) {
        if (std::abs(z) < margin) return true;
      }
    }
  }
  for (std::size_t l = 0; l < net.post.size(); ++l) {
    if (net.post[l].activation != Activation::kRelu) continue;
    for (double z : trace.post_zs[l]) {
      if (std::abs(z) < margin) return true;
    }
  }
  return false;
}

// For max pooling: is any coordinate's winner within margin of the runner-up?
// pre_acts.back() holds the per-instance vectors entering the pool for both
// architectures (scalars for prior-nn).
bool near_max_tie(const ForwardTrace& trace, double margin) {
  const auto& values = trace.pre_acts.back();
  if (values.size() < 2) return false;
  for (std::size_t j = 0; j < values.front().size(); ++j) {
    double best = -std::numeric_limits<double>::infinity();
    double second = best;
    for (const auto& v : values) {
      if (v[j] > best) {
        second = best;
        best = v[j];
      } else if (v[j] > second) {
        second = v[j];
      }
    }
    if (best - second < margin) return true;
  }
  return false;
}

std::vector<double*> parameter_pointers(Network& net) {
  std::vector<double*> ptrs;
  for (auto* side : {&net.pre, &net.post}) {
    for (Layer& layer : *side) {
      for (double& w : layer.weights) ptrs.push_back(&w);
      for (double& b : layer.bias) ptrs.push_back(&b);
    }
  }
  return ptrs;
}

std::vector<double> flatten(const Gradients& grads) {
  std::vector<double> flat;
  for (const auto* side : {&grads.pre, &grads.post}) {
    for (const LayerGrads& lg : *side) {
      flat.insert(flat.end(), lg.weights.begin(), lg.weights.end());
      flat.insert(flat.end(), lg.bias.begin(), lg.bias.end());
    }
  }
  return flat;
}

}  // namespace

GradCheckResult run_gradcheck(const GradCheckOptions& options) {
  if (options.trials == 0) throw std::invalid_argument("gradcheck: trials must be positive");
  if (options.pools.empty()) throw std::invalid_argument("gradcheck: no pooling kinds given");
  if (!(options.fd_step > 0.0) || !(options.tolerance > 0.0) || !(options.kink_margin >= 0.0)) {
    throw std::invalid_argument("gradcheck: step, tolerance and margin must be positive");
  }

  GradCheckResult result;
  for (PoolKind pool : options.pools) {
    for (std::size_t c = 0; c < options.trials; ++c) {
      Rng rng(derive_seed(options.seed, {kCaseTag, static_cast<std::uint64_t>(pool), c}));

      Architecture arch;
      // prior-nn only pools maxima, so it joins every other max case.
      arch.kind = (pool == PoolKind::kMax && c % 2 == 1) ? ArchKind::kPriorNn
                                                         : ArchKind::kProposed;
      arch.input_dim = 2 + rng.below(5);
      arch.embed_dim = 1 + rng.below(6);
      const std::size_t bag_size = 1 + rng.below(7);

      Network net = init_network(arch, pool, rng.next_u64());
      const Bag bag = random_bag(bag_size, arch.input_dim, rng);

      ForwardTrace trace;
      forward_bag(net, bag, &trace);
      if (near_relu_kink(net, trace, options.kink_margin)) {
        ++result.kink_exclusions;
        continue;
      }
      if (pool == PoolKind::kMax && near_max_tie(trace, options.kink_margin)) {
        ++result.tie_exclusions;
        continue;
      }

      std::vector<double> analytic = flatten(backward_bag(net, trace, 1.0));
      if (options.sabotage) {
        double& target = analytic[c % analytic.size()];
        target += 1.0 + std::abs(target);
      }

      // Central differences cannot resolve disagreements below the rounding
      // error of the two score evaluations, so the relative error of an entry
      // is measured against a denominator floored at that noise level scaled
      // by the tolerance: a noise-sized difference can never fail.
      const double fd_noise = kFdNoiseUlps * std::numeric_limits<double>::epsilon() *
                              std::max(1.0, std::abs(trace.score)) / (2.0 * options.fd_step);
      const double denom_floor = fd_noise / options.tolerance;

      const std::vector<double*> ptrs = parameter_pointers(net);
      for (std::size_t p = 0; p < ptrs.size(); ++p) {
        const double saved = *ptrs[p];
        *ptrs[p] = saved + options.fd_step;
        const double up = forward_bag(net, bag);
        *ptrs[p] = saved - options.fd_step;
        const double down = forward_bag(net, bag);
        *ptrs[p] = saved;
        const double fd = (up - down) / (2.0 * options.fd_step);

        const double scale = std::max(std::abs(analytic[p]), std::abs(fd));
        if (scale <= kNoiseFloor) continue;
        const double rel = std::abs(analytic[p] - fd) / std::max(scale, denom_floor);
        result.max_rel_error = std::max(result.max_rel_error, rel);
        if (rel > options.tolerance) ++result.failures;
      }
      ++result.cases_run;
    }
  }
  return result;
}

}  // namespace milnet
