#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vmr/policy/actor_fast.hpp"
#include "vmr/policy/actor_tape.hpp"
#include "vmr/policy/agent.hpp"
#include "vmr/rl/adam.hpp"
#include "vmr/rl/gae.hpp"
#include "vmr/sim/simulator.hpp"
#include "vmr/util/parallel.hpp"

namespace vmr {

struct PpoConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  int update_epochs = 4;
  int minibatch_size = 64;
  double lr = 3e-4;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  bool clip_vloss = true;
  int rollout_steps = 512;  // whole episodes are kept; this is a floor
};

struct Transition {
  ClusterState state;
  int vm_index = -1;
  int pm_index = -1;
  MigrationAction action;
  double log_prob = 0;
  double reward = 0;
  double value = 0;
  std::uint8_t done = 0;
  long long frag_drop = 0;  // exact fragment reduction of this step
};

struct RolloutBuffer {
  std::vector<Transition> steps;
  std::vector<double> advantages;
  std::vector<double> returns;
  int episodes = 0;
  double reward_sum = 0;
  long long frag_drop_sum = 0;

  void finish(double gamma, double lambda) {
    std::vector<double> rewards, values;
    std::vector<std::uint8_t> dones;
    rewards.reserve(steps.size());
    for (const auto& t : steps) {
      rewards.push_back(t.reward);
      values.push_back(t.value);
      dones.push_back(t.done);
    }
    auto gae = compute_gae(rewards, values, dones, gamma, lambda);
    advantages = std::move(gae.advantages);
    returns = std::move(gae.returns);
  }
};

struct UpdateStats {
  double policy_loss = 0;
  double value_loss = 0;
  double entropy = 0;
  double approx_kl = 0;
};

// One PPO update over a finished buffer: clipped surrogate with
// batch-normalized advantages, clipped value loss, entropy bonus, global
// gradient-norm clipping. Throws on non-finite losses with a diagnostic.
template <typename T>
UpdateStats ppo_update(const RolloutBuffer& buffer, PolicyParams<T>& params,
                       Adam<T>& opt, const PpoConfig& cfg,
                       const ObjectiveSpec& objective, Rng& rng) {
  using Mat = typename PolicyParams<T>::Mat;
  const int n = static_cast<int>(buffer.steps.size());
  if (n == 0) throw InvalidParameter("empty rollout buffer");

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  UpdateStats stats;
  int stat_samples = 0;

  for (int epoch = 0; epoch < cfg.update_epochs; ++epoch) {
    shuffle_vec(order, rng);
    for (int start = 0; start < n; start += cfg.minibatch_size) {
      const int count = std::min(cfg.minibatch_size, n - start);

      // Advantage normalization per minibatch.
      double mean = 0, var = 0;
      for (int k = 0; k < count; ++k) mean += buffer.advantages[order[start + k]];
      mean /= count;
      for (int k = 0; k < count; ++k) {
        const double d = buffer.advantages[order[start + k]] - mean;
        var += d * d;
      }
      const double stddev = std::sqrt(var / count) + 1e-8;

      std::map<std::string, Mat> grads;
      const T inv_count = T(1) / static_cast<T>(count);
      for (int k = 0; k < count; ++k) {
        const Transition& tr = buffer.steps[order[start + k]];
        const double adv = (buffer.advantages[order[start + k]] - mean) / stddev;

        Episode ep = Episode::reset(tr.state, 1, objective);
        auto vm_mask = ep.action_mask().vm_mask;
        auto pm_mask = ep.legal_pms(tr.state.vm_at(tr.vm_index).id);

        TapePolicy<T> tp(params);
        auto actor = tp.vm_actor(encode_features<T>(tr.state, params.norm),
                                 vm_mask);
        auto pm_probs = tp.pm_actor(actor, tr.vm_index, tr.pm_index >= 0
                                                            ? pm_mask
                                                            : pm_mask);
        auto& tape = tp.tape();
        auto lp_new = tp.log_prob(actor, pm_probs, tr.vm_index, tr.pm_index);
        auto ratio = tape.exp(tape.sub(
            lp_new, tape.constant(Mat::Constant(1, 1, static_cast<T>(tr.log_prob)))));
        auto surr1 = tape.scale(ratio, static_cast<T>(adv));
        auto surr2 = tape.scale(
            tape.clamp(ratio, static_cast<T>(1.0 - cfg.clip_eps),
                       static_cast<T>(1.0 + cfg.clip_eps)),
            static_cast<T>(adv));
        auto pg_loss = tape.scale(tape.min_elem(surr1, surr2), T(-1));

        auto value = tp.critic(actor);
        const T ret = static_cast<T>(buffer.returns[order[start + k]]);
        auto v_err = tape.sub(value, tape.constant(Mat::Constant(1, 1, ret)));
        typename Tape<T>::Var v_loss;
        if (cfg.clip_vloss) {
          const T v_old = static_cast<T>(tr.value);
          auto v_clipped = tape.add(
              tape.clamp(tape.sub(value, tape.constant(Mat::Constant(1, 1, v_old))),
                         static_cast<T>(-cfg.clip_eps),
                         static_cast<T>(cfg.clip_eps)),
              tape.constant(Mat::Constant(1, 1, v_old)));
          auto v_err_c =
              tape.sub(v_clipped, tape.constant(Mat::Constant(1, 1, ret)));
          auto sq1 = tape.mul_elem(v_err, v_err);
          auto sq2 = tape.mul_elem(v_err_c, v_err_c);
          v_loss = tape.scale(tape.min_elem(tape.scale(sq1, T(-1)),
                                            tape.scale(sq2, T(-1))),
                              T(-0.5));
        } else {
          v_loss = tape.scale(tape.mul_elem(v_err, v_err), T(0.5));
        }

        auto entropy = tp.entropy(actor, pm_probs);
        auto loss = tape.add(
            tape.add(pg_loss, tape.scale(v_loss, static_cast<T>(cfg.value_coef))),
            tape.scale(entropy, static_cast<T>(-cfg.entropy_coef)));
        auto scaled_loss = tape.scale(loss, inv_count);

        const double loss_value = static_cast<double>(tape.value(loss)(0, 0));
        if (!std::isfinite(loss_value)) {
          throw Error("non-finite ppo loss at sample " +
                      std::to_string(order[start + k]) + ": pg=" +
                      std::to_string(tape.value(pg_loss)(0, 0)) + " v=" +
                      std::to_string(tape.value(v_loss)(0, 0)) + " ratio=" +
                      std::to_string(tape.value(ratio)(0, 0)));
        }

        tape.backward(scaled_loss);
        params.visit([&](const std::string& name, Mat& m) {
          const Mat& g = tp.grad_of(name);
          auto it = grads.find(name);
          if (it == grads.end())
            grads.emplace(name, g);
          else
            it->second += g;
          (void)m;
        });

        // Diagnostics (last epoch only, to keep one pass's view).
        if (epoch == cfg.update_epochs - 1) {
          const double r = static_cast<double>(tape.value(ratio)(0, 0));
          stats.policy_loss += static_cast<double>(tape.value(pg_loss)(0, 0));
          stats.value_loss += static_cast<double>(tape.value(v_loss)(0, 0));
          stats.entropy += static_cast<double>(tape.value(entropy)(0, 0));
          stats.approx_kl += (r - 1.0) - std::log(std::max(r, 1e-12));
          ++stat_samples;
        }
      }
      opt.step(grads, cfg.lr, cfg.max_grad_norm);
    }
  }
  if (stat_samples > 0) {
    stats.policy_loss /= stat_samples;
    stats.value_loss /= stat_samples;
    stats.entropy /= stat_samples;
    stats.approx_kl /= stat_samples;
  }
  return stats;
}

// Collects whole episodes with the sampling policy until at least
// `cfg.rollout_steps` transitions are stored. Episode e of the run uses
// the deterministic stream fork(seed, episode_counter + e), so results do
// not depend on the worker count.
template <typename T>
RolloutBuffer collect_rollouts(
    PolicyParams<T>& params,
    const std::vector<std::vector<ClusterState>>& datasets,
    const std::vector<double>& dataset_weights, int mnl,
    const ObjectiveSpec& objective, const PpoConfig& cfg, std::uint64_t seed,
    long long& episode_counter, unsigned workers = 1) {
  if (datasets.empty() || datasets.size() != dataset_weights.size())
    throw InvalidParameter("datasets and weights must align and be non-empty");
  for (const auto& d : datasets)
    if (d.empty()) throw InvalidParameter("empty training dataset");
  RolloutBuffer buffer;
  const int per_round =
      std::max(1, (cfg.rollout_steps + mnl - 1) / std::max(1, mnl));
  while (static_cast<int>(buffer.steps.size()) < cfg.rollout_steps) {
    std::vector<std::vector<Transition>> traces(per_round);
    parallel_for(
        static_cast<std::size_t>(per_round),
        [&](std::size_t e) {
          Rng rng = fork_rng(seed, static_cast<std::uint64_t>(
                                       episode_counter + static_cast<long long>(e)));
          // Weighted dataset choice, uniform mapping within it.
          double total = 0;
          for (double w : dataset_weights) total += w;
          double u = uniform_real(rng) * total;
          std::size_t di = 0;
          for (; di + 1 < dataset_weights.size(); ++di) {
            u -= dataset_weights[di];
            if (u < 0) break;
          }
          const auto& group = datasets[di];
          const ClusterState& mapping = group[uniform_index(rng, group.size())];
          Episode ep = Episode::reset(mapping, mnl, objective);
          FastPolicy<T> policy(params);
          auto& out = traces[e];
          while (!ep.done()) {
            auto step = act(policy, ep, &rng);
            if (!step) break;
            Transition tr;
            tr.state = ep.state();
            tr.vm_index = step->vm_index;
            tr.pm_index = step->pm_index;
            tr.action = step->action;
            tr.log_prob = step->log_prob;
            tr.value = step->value;
            const long long before = total_fragments(ep.state(), 16);
            tr.reward = ep.step(step->action);
            tr.frag_drop = before - total_fragments(ep.state(), 16);
            tr.done = ep.done() ? 1 : 0;
            out.push_back(std::move(tr));
          }
          if (!out.empty()) out.back().done = 1;  // no-action cutoffs too
        },
        workers);
    for (auto& t : traces) {
      buffer.episodes += t.empty() ? 0 : 1;
      for (auto& tr : t) {
        buffer.reward_sum += tr.reward;
        buffer.frag_drop_sum += tr.frag_drop;
        buffer.steps.push_back(std::move(tr));
      }
    }
    episode_counter += per_round;
  }
  buffer.finish(cfg.gamma, cfg.gae_lambda);
  return buffer;
}

}  // namespace vmr
