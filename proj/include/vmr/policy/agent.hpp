#pragma once

#include <functional>
#include <optional>

#include "vmr/policy/actor_fast.hpp"
#include "vmr/policy/features.hpp"
#include "vmr/sim/simulator.hpp"
#include "vmr/util/rng.hpp"

namespace vmr {

struct AgentStep {
  MigrationAction action;
  int vm_index = -1;
  int pm_index = -1;
  double log_prob = 0.0;
  double value = 0.0;
};

template <typename T>
int sample_index(const typename FastPolicy<T>::Vec& probs, Rng& rng) {
  const double u = uniform_real(rng);
  double acc = 0.0;
  int last_positive = -1;
  for (int i = 0; i < probs.size(); ++i) {
    if (probs(i) <= T(0)) continue;
    last_positive = i;
    acc += static_cast<double>(probs(i));
    if (u < acc) return i;
  }
  return last_positive;  // guard against rounding at the tail
}

template <typename T>
int argmax_index(const typename FastPolicy<T>::Vec& probs) {
  int best = -1;
  for (int i = 0; i < probs.size(); ++i)
    if (best < 0 || probs(i) > probs(best)) best = i;
  return best;
}

// Mutates the probability vector in place (thresholding hooks).
template <typename T>
using ProbFilter = std::function<void(typename FastPolicy<T>::Vec&)>;

// Runs both action stages on the episode's current state. Returns nullopt
// when no VM has a legal destination. `rng == nullptr` selects greedily.
template <typename T>
std::optional<AgentStep> act(FastPolicy<T>& policy, const Episode& ep,
                             Rng* rng, const ProbFilter<T>& vm_filter = {},
                             const ProbFilter<T>& pm_filter = {}) {
  const ClusterState& s = ep.state();
  FeatureTensor<T> f = encode_features<T>(s, policy.params().norm);
  ActionMask mask = ep.action_mask();
  const auto& out = policy.eval(f, mask.vm_mask);
  if (!out.any_selectable) return std::nullopt;

  typename FastPolicy<T>::Vec vm_probs = out.vm_probs;
  if (vm_filter) vm_filter(vm_probs);
  const int vm_index =
      rng ? sample_index<T>(vm_probs, *rng) : argmax_index<T>(vm_probs);
  const VmId vm = s.vm_at(vm_index).id;

  auto pm_mask = ep.legal_pms(vm);
  typename FastPolicy<T>::Vec pm_probs = policy.pm_probs_for(vm_index, pm_mask);
  typename FastPolicy<T>::Vec pm_filtered = pm_probs;
  if (pm_filter) pm_filter(pm_filtered);
  const int pm_index =
      rng ? sample_index<T>(pm_filtered, *rng) : argmax_index<T>(pm_filtered);

  AgentStep step;
  step.action = MigrationAction{vm, s.pm_at(pm_index).id};
  step.vm_index = vm_index;
  step.pm_index = pm_index;
  step.log_prob = std::log(static_cast<double>(out.vm_probs(vm_index))) +
                  std::log(static_cast<double>(pm_probs(pm_index)));
  step.value = static_cast<double>(out.value);
  return step;
}

// Rolls one full episode with the policy; fills `plan` and returns the
// final objective value.
template <typename T>
double run_policy_episode(FastPolicy<T>& policy, Episode& ep, Rng* rng,
                          const ProbFilter<T>& vm_filter = {},
                          const ProbFilter<T>& pm_filter = {}) {
  while (!ep.done()) {
    auto step = act(policy, ep, rng, vm_filter, pm_filter);
    if (!step) break;
    ep.step(step->action);
  }
  return ep.objective_value();
}

}  // namespace vmr
