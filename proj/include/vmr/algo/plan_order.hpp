#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "vmr/core/cluster.hpp"
#include "vmr/objectives.hpp"
#include "vmr/sim/simulator.hpp"

namespace vmr {

struct OrderedPlan {
  MigrationPlan plan;
  ClusterState final_state;
  bool reaches_targets = true;  // every VM landed on its target arrangement
};

// Orders a final-assignment diff into a stepwise-feasible action sequence.
// Each emitted action is replayed through the simulator's destination rule,
// so the plan means exactly what a replay computes. Moves whose simulator
// arrangement matches the target are preferred; when no pending move is
// directly feasible, one VM is relayed through the PM with the most free
// CPU to break the cycle. Returns nullopt when no progress is possible.
inline std::optional<OrderedPlan> order_migrations(
    const ClusterState& start,
    std::vector<std::pair<VmId, Placement>> targets,
    const ObjectiveSpec& objective) {
  ClusterState work = start;
  MigrationPlan plan;
  // Drop no-op targets.
  std::erase_if(targets, [&](const auto& t) {
    return work.placement_of(t.first) == t.second;
  });

  bool diverged = false;
  auto sim_step = [&](VmId vm, PmId pm) {
    auto slot = choose_dest_slot(work, vm, pm, objective);
    if (!slot) return false;
    work.apply_migration_in_place({vm, pm}, *slot);
    plan.actions.push_back({vm, pm});
    return true;
  };

  std::size_t guard = targets.size() * 4 + 8;
  while (!targets.empty() && guard-- > 0) {
    bool progress = false;
    // Pass 1: moves whose simulator arrangement lands exactly on target.
    for (std::size_t i = 0; i < targets.size(); ++i) {
      auto [vm, target] = targets[i];
      auto slot = choose_dest_slot(work, vm, target.pm, objective);
      if (slot && *slot == target.slot) {
        sim_step(vm, target.pm);
        targets.erase(targets.begin() + i);
        progress = true;
        break;
      }
    }
    if (progress) continue;
    // Pass 2: any move that reaches the target PM, even on another NUMA.
    for (std::size_t i = 0; i < targets.size(); ++i) {
      auto [vm, target] = targets[i];
      if (sim_step(vm, target.pm)) {
        if (work.placement_of(vm) != target) diverged = true;
        targets.erase(targets.begin() + i);
        progress = true;
        break;
      }
    }
    if (progress) continue;
    // Pass 3: relay one blocked VM through the most-free PM.
    int best_pm_index = -1;
    VmId relay_vm = -1;
    for (const auto& [vm, target] : targets) {
      for (int pi = 0; pi < work.pm_count(); ++pi) {
        const PhysicalMachine& p = work.pm_at(pi);
        if (p.id == work.placement_of(vm).pm || p.id == target.pm) continue;
        if (!pm_is_legal(work, vm, p.id, objective)) continue;
        if (best_pm_index < 0 ||
            p.free_cpu_total() > work.pm_at(best_pm_index).free_cpu_total()) {
          best_pm_index = pi;
          relay_vm = vm;
        }
      }
      if (best_pm_index >= 0) break;
    }
    if (best_pm_index < 0) return std::nullopt;
    sim_step(relay_vm, work.pm_at(best_pm_index).id);
  }
  if (!targets.empty()) return std::nullopt;

  OrderedPlan out;
  out.final_state = std::move(work);
  out.plan = std::move(plan);
  out.reaches_targets = !diverged;
  return out;
}

}  // namespace vmr
