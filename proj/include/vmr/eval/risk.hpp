#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "vmr/policy/agent.hpp"
#include "vmr/sim/simulator.hpp"
#include "vmr/util/parallel.hpp"

namespace vmr {

// Masks probabilities below the empirical quantile of the positive
// entries and renormalizes. Zero entries stay zero; masking is strict
// (p < threshold), so the argmax always survives. quantile 0 is identity.
template <typename VecT>
void threshold_probs_inplace(VecT& probs, double quantile) {
  if (quantile <= 0.0) return;
  if (quantile >= 1.0) throw InvalidParameter("quantile must lie in [0, 1)");
  std::vector<double> positive;
  for (Eigen::Index i = 0; i < probs.size(); ++i)
    if (probs(i) > 0) positive.push_back(static_cast<double>(probs(i)));
  if (positive.size() <= 1) return;
  std::sort(positive.begin(), positive.end());
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(quantile * static_cast<double>(positive.size())));
  const double threshold = positive[std::min(rank, positive.size()) - 1];
  double sum = 0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (static_cast<double>(probs(i)) < threshold) probs(i) = 0;
    sum += static_cast<double>(probs(i));
  }
  probs /= static_cast<typename VecT::Scalar>(sum);
}

template <typename T>
typename FastPolicy<T>::Vec threshold_probs(typename FastPolicy<T>::Vec probs,
                                            double quantile) {
  threshold_probs_inplace(probs, quantile);
  return probs;
}

struct BestOfKResult {
  MigrationPlan plan;
  double objective = 0;
  int best_index = -1;
  std::vector<double> trajectory_objectives;
};

// Samples K independent thresholded trajectories under a frozen policy
// and deploys the best. Trajectory i draws from the stream fork(seed, i),
// so extending K keeps earlier trajectories identical (nested sets).
// Every plan is re-scored through a fresh rollout.
template <typename T>
BestOfKResult best_of_k(const ClusterState& mapping,
                        const PolicyParams<T>& params, int k, double vm_q,
                        double pm_q, std::uint64_t seed, int mnl,
                        const ObjectiveSpec& objective, unsigned threads = 1) {
  if (k < 1) throw InvalidParameter("k must be at least 1");
  std::vector<MigrationPlan> plans(k);
  ProbFilter<T> vm_filter, pm_filter;
  if (vm_q > 0)
    vm_filter = [vm_q](typename FastPolicy<T>::Vec& p) {
      threshold_probs_inplace(p, vm_q);
    };
  if (pm_q > 0)
    pm_filter = [pm_q](typename FastPolicy<T>::Vec& p) {
      threshold_probs_inplace(p, pm_q);
    };

  parallel_for(
      static_cast<std::size_t>(k),
      [&](std::size_t i) {
        Rng rng = fork_rng(seed, i);
        FastPolicy<T> policy(params);
        Episode ep = Episode::reset(mapping, mnl, objective);
        run_policy_episode(policy, ep, &rng, vm_filter, pm_filter);
        plans[i] = ep.plan();
      },
      threads);

  BestOfKResult out;
  out.trajectory_objectives.resize(k);
  for (int i = 0; i < k; ++i) {
    auto replay = rollout_plan(mapping, plans[i], objective);
    out.trajectory_objectives[i] = replay.final_objective;
    if (out.best_index < 0 ||
        replay.final_objective < out.objective) {
      out.best_index = i;
      out.objective = replay.final_objective;
      out.plan = plans[i];
    }
  }
  return out;
}

// Grid search over (vm_q, pm_q) pairs minimizing the mean validation
// objective of best-of-K; ties resolve to the lower quantile pair.
template <typename T>
std::pair<double, double> tune_quantiles(
    const PolicyParams<T>& params,
    const std::vector<ClusterState>& validation,
    const std::vector<std::pair<double, double>>& grid, int k,
    std::uint64_t seed, int mnl, const ObjectiveSpec& objective,
    unsigned threads = 1) {
  if (validation.empty()) throw InvalidParameter("empty validation set");
  if (grid.empty()) throw InvalidParameter("empty quantile grid");
  double best_mean = std::numeric_limits<double>::infinity();
  std::pair<double, double> best = grid.front();
  for (const auto& [vm_q, pm_q] : grid) {
    double total = 0;
    for (std::size_t m = 0; m < validation.size(); ++m) {
      total += best_of_k(validation[m], params, k, vm_q, pm_q,
                         fork_rng(seed, m)(), mnl, objective, threads)
                   .objective;
    }
    const double mean = total / static_cast<double>(validation.size());
    const bool better =
        mean < best_mean - 1e-15 ||
        (std::abs(mean - best_mean) <= 1e-15 &&
         std::make_pair(vm_q, pm_q) < best);
    if (better) {
      best_mean = mean;
      best = {vm_q, pm_q};
    }
  }
  return best;
}

// The grid reported for the evaluation sweep.
inline std::vector<std::pair<double, double>> default_quantile_grid() {
  const double qs[] = {0.95, 0.98, 0.99, 0.995};
  std::vector<std::pair<double, double>> grid;
  for (double a : qs)
    for (double b : qs) grid.emplace_back(a, b);
  return grid;
}

}  // namespace vmr
