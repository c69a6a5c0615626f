#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vmr/rl/ppo.hpp"

namespace vmr {

struct TrainConfig {
  PpoConfig ppo;
  ModelDims dims;
  int mnl = 4;
  ObjectiveSpec objective = ObjectiveSpec::xcore(16);
  std::uint64_t seed = 0;
  int total_updates = 200;
  int eval_every = 10;             // greedy validation cadence, in updates
  int divergence_patience = 8;     // consecutive worsening evals before halt
  std::vector<double> dataset_weights;  // defaults to uniform
  unsigned workers = 1;            // deterministic when 1 (and by design >1)
};

struct TrainCurveRow {
  int update = 0;
  long long global_step = 0;
  double mean_episode_reward = 0;
  double mean_frag_drop = 0;
  double val_objective = std::nan("");
  double policy_loss = 0;
  double value_loss = 0;
  double entropy = 0;
  double approx_kl = 0;
};

template <typename T>
struct TrainResult {
  Checkpoint<T> best;        // by greedy validation objective
  Checkpoint<T> last;
  std::vector<TrainCurveRow> curves;
  double best_val_objective = std::numeric_limits<double>::infinity();
  bool halted_by_divergence = false;
  std::string halt_reason;
};

namespace detail {

template <typename T>
double greedy_validation_objective(PolicyParams<T>& params,
                                   const std::vector<ClusterState>& val,
                                   int mnl, const ObjectiveSpec& objective) {
  if (val.empty()) return std::nan("");
  double total = 0;
  FastPolicy<T> policy(params);
  for (const auto& mapping : val) {
    Episode ep = Episode::reset(mapping, mnl, objective);
    total += run_policy_episode(policy, ep, nullptr);
  }
  return total / static_cast<double>(val.size());
}

template <typename T>
Checkpoint<T> snapshot(PolicyParams<T>& params, Adam<T>& opt,
                       long long episode_counter, int update_index,
                       const ObjectiveSpec& objective) {
  Checkpoint<T> ck;
  ck.params = params;
  std::vector<typename PolicyParams<T>::Mat> m, v;
  long long t = 0;
  opt.export_state(m, v, t);
  ck.extra["adam.m"] = std::move(m);
  ck.extra["adam.v"] = std::move(v);
  typename PolicyParams<T>::Mat counters(1, 3);
  counters(0, 0) = static_cast<T>(t);
  counters(0, 1) = static_cast<T>(episode_counter);
  counters(0, 2) = static_cast<T>(update_index);
  ck.extra["counters"] = {counters};
  ck.meta["objective"] = objective.to_string();
  return ck;
}

}  // namespace detail

// PPO training over simulator episodes: alternate rollout collection and
// updates, evaluate the greedy policy on the validation mappings, keep the
// best checkpoint, and halt early if validation keeps worsening. Fully
// deterministic for a fixed seed in single-worker mode; resuming from a
// returned checkpoint reproduces the exact continuation.
template <typename T>
TrainResult<T> train(const std::vector<std::vector<ClusterState>>& datasets,
                     const std::vector<ClusterState>& validation,
                     const TrainConfig& cfg,
                     std::optional<Checkpoint<T>> resume = std::nullopt,
                     const std::function<void(const TrainCurveRow&)>& on_row = {}) {
  std::vector<double> weights = cfg.dataset_weights;
  if (weights.empty()) weights.assign(datasets.size(), 1.0);

  // Fit normalization on the training distribution unless resuming.
  PolicyParams<T> params;
  if (resume) {
    params = resume->params;
  } else {
    std::vector<ClusterState> sample;
    for (const auto& d : datasets)
      for (const auto& s : d) sample.push_back(s);
    NormStats norm =
        NormStats::fit(sample.begin(), sample.end(),
                       cfg.objective.kind == ObjectiveSpec::Kind::XCoreFr
                           ? cfg.objective.x
                           : 16);
    params = init_policy_params<T>(cfg.dims, norm, cfg.seed);
  }

  Adam<T> opt(params);
  long long episode_counter = 0;
  int start_update = 0;
  if (resume) {
    const auto& counters = resume->extra.at("counters")[0];
    opt.import_state(resume->extra.at("adam.m"), resume->extra.at("adam.v"),
                     static_cast<long long>(counters(0, 0)));
    episode_counter = static_cast<long long>(counters(0, 1));
    start_update = static_cast<int>(counters(0, 2));
  }

  TrainResult<T> result;
  long long global_step = 0;
  int worse_streak = 0;
  double last_val = std::numeric_limits<double>::infinity();

  for (int update = start_update; update < cfg.total_updates; ++update) {
    RolloutBuffer buffer = collect_rollouts(
        params, datasets, weights, cfg.mnl, cfg.objective, cfg.ppo, cfg.seed,
        episode_counter, cfg.workers);
    global_step += static_cast<long long>(buffer.steps.size());

    // Reward bookkeeping must telescope against the exact fragment drops
    // under the core objective.
    if (cfg.objective.kind == ObjectiveSpec::Kind::XCoreFr) {
      const double lhs = buffer.reward_sum * cfg.objective.c;
      const double rhs = static_cast<double>(buffer.frag_drop_sum);
      if (std::abs(lhs - rhs) > 1e-4 * std::max(1.0, std::abs(rhs)))
        throw Error("reward accounting violates the fragment telescoping: " +
                    std::to_string(lhs) + " vs " + std::to_string(rhs));
    }

    Rng update_rng = fork_rng(cfg.seed ^ 0x5eedbeefULL,
                              static_cast<std::uint64_t>(update));
    UpdateStats stats =
        ppo_update(buffer, params, opt, cfg.ppo, cfg.objective, update_rng);

    TrainCurveRow row;
    row.update = update + 1;
    row.global_step = global_step;
    row.mean_episode_reward =
        buffer.reward_sum / std::max(1, buffer.episodes);
    row.mean_frag_drop = static_cast<double>(buffer.frag_drop_sum) /
                         std::max(1, buffer.episodes);
    row.policy_loss = stats.policy_loss;
    row.value_loss = stats.value_loss;
    row.entropy = stats.entropy;
    row.approx_kl = stats.approx_kl;

    const bool eval_now = (update + 1) % cfg.eval_every == 0 ||
                          update + 1 == cfg.total_updates;
    if (eval_now && !validation.empty()) {
      row.val_objective = detail::greedy_validation_objective(
          params, validation, cfg.mnl, cfg.objective);
      if (row.val_objective < result.best_val_objective) {
        result.best_val_objective = row.val_objective;
        result.best = detail::snapshot(params, opt, episode_counter,
                                       update + 1, cfg.objective);
      }
      if (row.val_objective > last_val + 1e-12) {
        ++worse_streak;
      } else {
        worse_streak = 0;
      }
      last_val = row.val_objective;
      if (cfg.divergence_patience > 0 &&
          worse_streak >= cfg.divergence_patience) {
        result.halted_by_divergence = true;
        result.halt_reason =
            "validation objective worsened for " +
            std::to_string(worse_streak) + " consecutive evaluations";
        result.curves.push_back(row);
        if (on_row) on_row(row);
        break;
      }
    }
    result.curves.push_back(row);
    if (on_row) on_row(row);
  }

  result.last = detail::snapshot(params, opt, episode_counter,
                                 cfg.total_updates, cfg.objective);
  if (result.best_val_objective == std::numeric_limits<double>::infinity())
    result.best = result.last;
  return result;
}

}  // namespace vmr
