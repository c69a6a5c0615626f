#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vmr/core/cluster.hpp"
#include "vmr/objectives.hpp"
#include "vmr/util/fraction.hpp"

namespace vmr {

namespace detail {

// Fragment score of one NUMA after a hypothetical placement, under the
// objective's grid. Mixed objectives blend the component scores with the
// same weight; the goal objective scores by its base.
inline double numa_fragment_score(int free_cpu_after, int free_mem_after,
                                  const ObjectiveSpec& spec) {
  switch (spec.kind) {
    case ObjectiveSpec::Kind::XCoreFr:
      return static_cast<double>(free_cpu_after % spec.x);
    case ObjectiveSpec::Kind::MemFragFr:
      return static_cast<double>(free_mem_after % spec.block_gb);
    case ObjectiveSpec::Kind::Mixed:
      return mixed_objective(
          numa_fragment_score(free_cpu_after, free_mem_after, *spec.a),
          numa_fragment_score(free_cpu_after, free_mem_after, *spec.b),
          spec.lambda);
    case ObjectiveSpec::Kind::MinMnlToGoal:
      return numa_fragment_score(free_cpu_after, free_mem_after, *spec.base);
  }
  return 0.0;
}

}  // namespace detail

// Picks the destination NUMA arrangement for a (vm, pm) action: the
// feasible arrangement other than the VM's current placement whose
// post-placement fragment is smallest, ties broken by lower NUMA index.
// Returns nullopt when the PM cannot host the VM at all.
inline std::optional<NumaSlot> choose_dest_slot(const ClusterState& state,
                                                VmId vm, PmId dest_pm,
                                                const ObjectiveSpec& spec) {
  const VirtualMachine& v = state.vm(vm);
  const Placement cur = state.placement_of(vm);
  const PhysicalMachine& dest = state.pm(dest_pm);

  if (!v.affinity_conflicts.empty()) {
    for (VmId other : dest.hosted)
      if (other != v.id && v.conflicts_with(other)) return std::nullopt;
  }

  const int need_cpu = v.cpu_per_numa();
  const int need_mem = v.mem_per_numa();
  const bool same_pm = cur.pm == dest_pm;

  if (v.numa_count == 2) {
    if (same_pm) return std::nullopt;  // only its current arrangement exists
    for (int j = 0; j < 2; ++j) {
      if (dest.numas[j].free_cpu < need_cpu ||
          dest.numas[j].free_mem < need_mem)
        return std::nullopt;
    }
    return NumaSlot::Both;
  }

  std::optional<NumaSlot> best;
  double best_score = 0.0;
  for (int j = 0; j < 2; ++j) {
    const NumaSlot slot = j == 0 ? NumaSlot::First : NumaSlot::Second;
    if (same_pm && cur.slot == slot) continue;  // exact current placement
    // Same-PM moves free the source NUMA only, which is never the target
    // here, so no adjustment is needed.
    const int free_cpu = dest.numas[j].free_cpu;
    const int free_mem = dest.numas[j].free_mem;
    if (free_cpu < need_cpu || free_mem < need_mem) continue;
    const double score = detail::numa_fragment_score(free_cpu - need_cpu,
                                                     free_mem - need_mem, spec);
    if (!best || score < best_score) {
      best = slot;
      best_score = score;
    }
  }
  return best;
}

// Whether `dest_pm` is a legal destination for `vm` in the given state.
inline bool pm_is_legal(const ClusterState& state, VmId vm, PmId dest_pm,
                        const ObjectiveSpec& spec) {
  return choose_dest_slot(state, vm, dest_pm, spec).has_value();
}

class Episode;

// Legality view of an episode: one flag per VM, and per-PM flags for a
// chosen VM on demand.
struct ActionMask {
  std::vector<std::uint8_t> vm_mask;  // indexed by VM position
  const Episode* episode = nullptr;

  std::vector<std::uint8_t> pm_mask_for(VmId vm) const;
};

// One rescheduling request: up to `mnl` migrations from an initial
// mapping, deterministic transitions, dense rewards. Each episode owns
// its state snapshot; one logical actor steps it at a time.
class Episode {
 public:
  static Episode reset(const ClusterState& mapping, int mnl,
                       ObjectiveSpec objective) {
    if (mnl < 0) throw InvalidParameter("mnl must be non-negative");
    auto violations = mapping.validate();
    if (!violations.empty()) throw ValidationError(std::move(violations));
    Episode ep;
    ep.state_ = mapping;
    ep.mnl_ = mnl;
    ep.objective_ = std::move(objective);
    ep.update_done();
    return ep;
  }

  const ClusterState& state() const { return state_; }
  const ObjectiveSpec& objective() const { return objective_; }
  int step_index() const { return step_; }
  int mnl() const { return mnl_; }
  bool done() const { return done_; }
  double cumulative_reward() const { return cumulative_reward_; }
  // Exact cumulative reward; meaningful for the fragment objectives.
  const Frac& cumulative_reward_exact() const { return cumulative_exact_; }
  const MigrationPlan& plan() const { return plan_; }

  double objective_value() const {
    return evaluate_objective(state_, objective_);
  }

  // Per-PM legality for one VM.
  std::vector<std::uint8_t> legal_pms(VmId vm) const {
    std::vector<std::uint8_t> mask(state_.pm_count(), 0);
    for (int i = 0; i < state_.pm_count(); ++i)
      mask[i] = pm_is_legal(state_, vm, state_.pm_at(i).id, objective_) ? 1 : 0;
    return mask;
  }

  bool vm_has_legal_destination(VmId vm) const {
    for (const auto& p : state_.pms())
      if (pm_is_legal(state_, vm, p.id, objective_)) return true;
    return false;
  }

  ActionMask action_mask() const {
    ActionMask m;
    m.episode = this;
    m.vm_mask.resize(state_.vm_count());
    for (int i = 0; i < state_.vm_count(); ++i)
      m.vm_mask[i] =
          done_ ? 0 : (vm_has_legal_destination(state_.vm_at(i).id) ? 1 : 0);
    return m;
  }

  // Applies one action. Throws InfeasibleError for illegal actions; the
  // destination NUMA follows the deterministic fragment-minimizing rule.
  double step(const MigrationAction& action) {
    if (done_)
      throw InfeasibleError(Constraint::MigrationLimit,
                            "episode is done; no migrations left");
    auto slot = choose_dest_slot(state_, action.vm, action.dest_pm, objective_);
    if (!slot) {
      // Name the precise violated constraint for the error message.
      auto why = diagnose_illegal(action);
      throw InfeasibleError(why, "illegal action (vm " +
                                     std::to_string(action.vm) + " -> pm " +
                                     std::to_string(action.dest_pm) +
                                     "): " + to_string(why));
    }
    const ClusterState before = state_;
    state_.apply_migration_in_place(action, *slot);
    const double r = step_reward(before, state_, action, objective_);
    switch (objective_.kind) {
      case ObjectiveSpec::Kind::XCoreFr:
      case ObjectiveSpec::Kind::MemFragFr:
        cumulative_exact_ +=
            step_reward_exact(before, state_, action, objective_);
        break;
      default:
        break;
    }
    cumulative_reward_ += r;
    plan_.actions.push_back(action);
    ++step_;
    update_done();
    return r;
  }

 private:
  Constraint diagnose_illegal(const MigrationAction& action) const {
    const VirtualMachine& v = state_.vm(action.vm);
    const Placement cur = state_.placement_of(action.vm);
    if (v.numa_count == 2 && cur.pm == action.dest_pm)
      return Constraint::NoOpMove;
    std::optional<Constraint> last;
    bool only_noop = true;
    for (int j = 0; j < 2; ++j) {
      NumaSlot slot = v.numa_count == 2
                          ? NumaSlot::Both
                          : (j == 0 ? NumaSlot::First : NumaSlot::Second);
      auto c = state_.migration_infeasibility(
          MigrationAction{action.vm, action.dest_pm}, slot);
      if (c && *c != Constraint::NoOpMove) {
        last = c;
        only_noop = false;
      }
      if (v.numa_count == 2) break;
    }
    if (only_noop) return Constraint::NoOpMove;
    return *last;
  }

  void update_done() {
    done_ = step_ >= mnl_;
    if (!done_ && objective_.kind == ObjectiveSpec::Kind::MinMnlToGoal) {
      done_ = goal_rate(state_, objective_) <= objective_.fr_goal;
    }
  }

  ClusterState state_;
  ObjectiveSpec objective_;
  MigrationPlan plan_;
  int step_ = 0;
  int mnl_ = 0;
  bool done_ = false;
  double cumulative_reward_ = 0.0;
  Frac cumulative_exact_{};
};

inline std::vector<std::uint8_t> ActionMask::pm_mask_for(VmId vm) const {
  if (episode == nullptr) return {};
  return episode->legal_pms(vm);
}

struct RolloutResult {
  ClusterState final_state;
  double final_objective = 0.0;
  std::vector<double> rewards;
  Frac exact_reward_sum{};  // fragment objectives only
};

// Deterministic fold of `step` over a recorded plan. The episode budget is
// the plan length; the first illegal action raises an error carrying its
// step index.
inline RolloutResult rollout_plan(const ClusterState& mapping,
                                  const MigrationPlan& plan,
                                  const ObjectiveSpec& objective) {
  Episode ep = Episode::reset(mapping, static_cast<int>(plan.size()), objective);
  RolloutResult out;
  for (std::size_t i = 0; i < plan.actions.size(); ++i) {
    if (ep.done()) break;  // goal objectives may terminate early
    try {
      out.rewards.push_back(ep.step(plan.actions[i]));
    } catch (const InfeasibleError& e) {
      throw InfeasibleError(e.constraint(),
                            "plan step " + std::to_string(i) + ": " + e.what());
    }
  }
  out.final_state = ep.state();
  out.final_objective = ep.objective_value();
  out.exact_reward_sum = ep.cumulative_reward_exact();
  return out;
}

}  // namespace vmr
