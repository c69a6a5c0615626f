#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "vmr/algo/objective_delta.hpp"
#include "vmr/algo/plan_order.hpp"
#include "vmr/core/cluster.hpp"
#include "vmr/objectives.hpp"
#include "vmr/sim/simulator.hpp"
#include "vmr/util/rng.hpp"

namespace vmr {

// Improvements this small are treated as zero; objective deltas are exact
// rationals with bounded denominators, so genuine improvements are far
// larger.
inline constexpr double kImprovementEps = 1e-12;

namespace detail {

// Best (destination PM, resulting objective) for one VM under the
// simulator's destination-NUMA rule. Ties by lowest PM id.
inline std::optional<std::pair<PmId, double>> best_destination(
    const ClusterState& state, const ObjectiveDelta& delta, VmId vm,
    const ObjectiveSpec& objective) {
  std::optional<std::pair<PmId, double>> best;
  for (const auto& pm : state.pms()) {
    auto slot = choose_dest_slot(state, vm, pm.id, objective);
    if (!slot) continue;
    const double after = delta.value_if_migrated(state, vm, pm.id, *slot);
    if (!best || after < best->second - kImprovementEps) best = {pm.id, after};
  }
  return best;
}

}  // namespace detail

// Filtering-then-scoring greedy: rank VMs by the objective drop their
// removal would cause (ties by larger CPU, then lower id), take the
// highest-ranked VM that admits a strictly improving destination, and move
// it to the destination with the largest drop (ties by lower PM id).
// Halts as soon as no single migration lowers the objective.
inline MigrationPlan ha_reschedule(const ClusterState& mapping, int mnl,
                                   const ObjectiveSpec& objective) {
  Episode ep = Episode::reset(mapping, mnl, objective);
  ObjectiveDelta delta(ep.state(), objective);

  while (!ep.done()) {
    const ClusterState& s = ep.state();
    const double current = delta.value();

    // Filtering: removal drop per VM.
    struct Candidate {
      double drop;
      int cpu;
      VmId vm;
    };
    std::vector<Candidate> ranked;
    ranked.reserve(s.vm_count());
    for (const auto& v : s.vms())
      ranked.push_back({current - delta.value_if_removed(s, v.id), v.cpu, v.id});
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.drop != b.drop) return a.drop > b.drop;
      if (a.cpu != b.cpu) return a.cpu > b.cpu;
      return a.vm < b.vm;
    });

    // Scoring, falling through the filtering order until a VM improves.
    bool moved = false;
    for (const Candidate& cand : ranked) {
      auto best = detail::best_destination(s, delta, cand.vm, objective);
      if (!best) continue;
      if (current - best->second <= kImprovementEps) continue;
      ep.step({cand.vm, best->first});
      delta.rebuild(ep.state());
      moved = true;
      break;
    }
    if (!moved) break;  // no single migration lowers the objective
  }
  return ep.plan();
}

// Staged remove-then-repack: each stage pulls out the `alpha` VMs whose
// removal drops the objective most and re-places them as incoming VMs via
// best-fit scoring. A pulled VM with no feasible destination returns to
// its source and does not consume budget.
inline MigrationPlan alpha_vbpp(const ClusterState& mapping, int mnl, int alpha,
                                const ObjectiveSpec& objective) {
  if (alpha <= 0) throw InvalidParameter("alpha must be positive");
  ClusterState work = mapping;
  MigrationPlan plan;
  int remaining = mnl;

  while (remaining > 0) {
    const int stage_budget = std::min(alpha, remaining);
    ObjectiveDelta delta(work, objective);
    const double current = delta.value();

    // Pick the stage's worst offenders by removal drop.
    struct Candidate {
      double drop;
      int cpu;
      VmId vm;
    };
    std::vector<Candidate> ranked;
    for (const auto& v : work.vms())
      ranked.push_back({current - delta.value_if_removed(work, v.id), v.cpu,
                        v.id});
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.drop != b.drop) return a.drop > b.drop;
      if (a.cpu != b.cpu) return a.cpu > b.cpu;
      return a.vm < b.vm;
    });
    const int pulled_count =
        std::min<int>(stage_budget, static_cast<int>(ranked.size()));
    if (pulled_count == 0) break;

    // Remove them from a scratch copy of the cluster.
    std::vector<VmId> pulled;
    for (int i = 0; i < pulled_count; ++i) pulled.push_back(ranked[i].vm);
    std::vector<PhysicalMachine> pms = work.pms();
    std::vector<VirtualMachine> kept_vms;
    std::vector<Placement> kept_placements;
    std::vector<VirtualMachine> incoming;
    for (int i = 0; i < work.vm_count(); ++i) {
      const VirtualMachine& v = work.vm_at(i);
      if (std::find(pulled.begin(), pulled.end(), v.id) != pulled.end()) {
        incoming.push_back(v);
      } else {
        kept_vms.push_back(v);
        kept_placements.push_back(work.placement_at(i));
      }
    }
    ClusterState stage_state(std::move(pms), std::move(kept_vms),
                             std::move(kept_placements));

    // Re-pack in decreasing size, each onto the spot with the largest
    // fragment reduction (the best-fit rule used for initial scheduling).
    std::sort(incoming.begin(), incoming.end(),
              [](const VirtualMachine& a, const VirtualMachine& b) {
                if (a.cpu != b.cpu) return a.cpu > b.cpu;
                return a.id < b.id;
              });
    std::vector<std::pair<VmId, Placement>> targets;
    std::vector<std::array<int, 2>> free_cpu(stage_state.pm_count());
    std::vector<std::array<int, 2>> free_mem(stage_state.pm_count());
    for (int i = 0; i < stage_state.pm_count(); ++i)
      for (int j = 0; j < 2; ++j) {
        free_cpu[i][j] = stage_state.pm_at(i).numas[j].free_cpu;
        free_mem[i][j] = stage_state.pm_at(i).numas[j].free_mem;
      }
    std::vector<std::vector<VmId>> hosted(stage_state.pm_count());
    for (int i = 0; i < stage_state.pm_count(); ++i)
      hosted[i] = stage_state.pm_at(i).hosted;

    bool stage_failed = false;
    for (const VirtualMachine& v : incoming) {
      const int need_cpu = v.cpu_per_numa();
      const int need_mem = v.mem_per_numa();
      int best_pm = -1, best_slot = -1;
      double best_delta = 0.0;
      for (int i = 0; i < stage_state.pm_count(); ++i) {
        bool conflict = false;
        if (!v.affinity_conflicts.empty())
          for (VmId other : hosted[i])
            if (other != v.id && v.conflicts_with(other)) {
              conflict = true;
              break;
            }
        if (conflict) continue;
        auto consider = [&](int slot) {
          double frag_delta = 0.0;
          for (int j = 0; j < 2; ++j) {
            if (slot != 2 && slot != j) continue;
            if (free_cpu[i][j] < need_cpu || free_mem[i][j] < need_mem) return;
            frag_delta += detail::numa_fragment_score(free_cpu[i][j] - need_cpu,
                                                      free_mem[i][j] - need_mem,
                                                      objective) -
                          detail::numa_fragment_score(
                              free_cpu[i][j], free_mem[i][j], objective);
          }
          if (best_pm < 0 || frag_delta < best_delta - kImprovementEps) {
            best_pm = i;
            best_slot = slot;
            best_delta = frag_delta;
          }
        };
        if (v.numa_count == 2) {
          consider(2);
        } else {
          consider(0);
          consider(1);
        }
      }
      if (best_pm < 0) {
        // Nowhere fits, not even its source slot: abandon the stage.
        stage_failed = true;
        break;
      }
      const Placement original = work.placement_of(v.id);
      const Placement chosen{stage_state.pm_at(best_pm).id,
                             best_slot == 2   ? NumaSlot::Both
                             : best_slot == 0 ? NumaSlot::First
                                              : NumaSlot::Second};
      for (int j = 0; j < 2; ++j) {
        if (chosen.slot != NumaSlot::Both && static_cast<int>(chosen.slot) != j)
          continue;
        free_cpu[best_pm][j] -= need_cpu;
        free_mem[best_pm][j] -= need_mem;
      }
      hosted[best_pm].push_back(v.id);
      if (chosen != original) targets.emplace_back(v.id, chosen);
    }

    if (stage_failed || targets.empty()) break;  // stage changed nothing

    auto ordered = order_migrations(work, targets, objective);
    if (!ordered ||
        static_cast<int>(ordered->plan.actions.size()) > remaining)
      break;  // no feasible ordering inside the remaining budget
    for (const auto& a : ordered->plan.actions) plan.actions.push_back(a);
    remaining -= static_cast<int>(ordered->plan.actions.size());
    work = std::move(ordered->final_state);
  }
  return plan;
}

// Uniformly random legal action each step; seed-deterministic. Ends early
// when no legal action remains.
inline MigrationPlan random_policy(const ClusterState& mapping, int mnl,
                                   std::uint64_t seed,
                                   const ObjectiveSpec& objective =
                                       ObjectiveSpec::xcore(16)) {
  Episode ep = Episode::reset(mapping, mnl, objective);
  Rng rng = make_rng(seed);
  while (!ep.done()) {
    std::vector<MigrationAction> legal;
    const ClusterState& s = ep.state();
    for (const auto& v : s.vms())
      for (const auto& p : s.pms())
        if (pm_is_legal(s, v.id, p.id, objective)) legal.push_back({v.id, p.id});
    if (legal.empty()) break;
    ep.step(legal[uniform_index(rng, legal.size())]);
  }
  return ep.plan();
}

}  // namespace vmr
