#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "vmr/algo/baselines.hpp"
#include "vmr/algo/plan_order.hpp"
#include "vmr/core/cluster.hpp"
#include "vmr/objectives.hpp"
#include "vmr/util/parallel.hpp"
#include "vmr/util/rng.hpp"

namespace vmr {

// Decision context for the exact solver, derived from a cluster state.
// The residual-capacity count of x-core slots per NUMA is implied: at an
// optimum it is floor(free / x), which is what the fragment objective
// charges for.
struct MipInstance {
  ClusterState state;
  int x = 16;
  int mnl = 0;

  static MipInstance from(const ClusterState& state, int x, int mnl) {
    if (x <= 0) throw InvalidParameter("x must be positive");
    if (mnl < 0) throw InvalidParameter("mnl must be non-negative");
    return MipInstance{state, x, mnl};
  }
};

struct ExactResult {
  // Final assignment of the displaced VMs (new placements only).
  std::vector<std::pair<VmId, Placement>> assignment;
  long long objective = 0;       // total fragments of the optimal assignment
  bool optimal = false;          // proven optimal (no timeout)
  long long lower_bound = 0;     // valid lower bound on the optimum
  MigrationPlan plan;            // ordered realization of the assignment
  bool ordering_feasible = true; // a stepwise-feasible order exists
  bool plan_matches_assignment = true;  // replay reaches the same objective
  long long nodes_expanded = 0;
};

namespace detail {

// Search state for the displaced-set / placement branch and bound.
class ExactSearch {
 public:
  ExactSearch(const MipInstance& inst, double time_limit_secs)
      : x_(inst.x),
        mnl_(inst.mnl),
        deadline_(std::chrono::steady_clock::now() +
                  std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                      std::chrono::duration<double>(time_limit_secs))),
        state_(inst.state) {
    m_ = state_.vm_count();
    // Cluster-wide floor: total free CPU is migration-invariant and the
    // sum of per-NUMA remainders can never drop below the remainder of
    // the sum.
    lb0_ = state_.total_free_cpu() % x_;
    // Identical VMs sharing a source slot are interchangeable; force the
    // displaced subset to take the lowest indexes first.
    prev_identical_.assign(m_, -1);
    for (int i = 0; i < m_; ++i) {
      for (int k = i - 1; k >= 0; --k) {
        if (same_shape_and_slot(k, i)) {
          prev_identical_[i] = k;
          break;
        }
      }
    }
  }

  void run() {
    // Warm start: greedy plan's final assignment.
    seed_incumbent();
    if (best_objective_ > lb0_) {
      displaced_.clear();
      pulled_cpu_ = 0;
      dfs_subset(0, mnl_);
    }
    timed_out_ = timed_out_ || deadline_passed();
  }

  long long best_objective() const { return best_objective_; }
  const std::vector<std::pair<VmId, Placement>>& best_assignment() const {
    return best_assignment_;
  }
  bool proven_optimal() const { return !timed_out_; }
  long long lower_bound() const {
    return proven_optimal() ? best_objective_ : lb0_;
  }
  long long nodes() const { return nodes_; }

 private:
  bool same_shape_and_slot(int a, int b) const {
    const auto& va = state_.vm_at(a);
    const auto& vb = state_.vm_at(b);
    return va.cpu == vb.cpu && va.mem == vb.mem &&
           va.numa_count == vb.numa_count && va.affinity_conflicts.empty() &&
           vb.affinity_conflicts.empty() &&
           state_.placement_at(a) == state_.placement_at(b);
  }

  bool deadline_passed() {
    if ((++clock_checks_ & 1023) != 0) return timed_out_;
    if (std::chrono::steady_clock::now() > deadline_) timed_out_ = true;
    return timed_out_;
  }

  void seed_incumbent() {
    best_objective_ = total_fragments(state_, x_);
    best_assignment_.clear();
    try {
      MigrationPlan warm = ha_reschedule(state_, mnl_, ObjectiveSpec::xcore(x_));
      ClusterState s = state_;
      for (const auto& a : warm.actions) {
        auto slot = choose_dest_slot(s, a.vm, a.dest_pm, ObjectiveSpec::xcore(x_));
        if (!slot) return;
        s.apply_migration_in_place(a, *slot);
      }
      // Count distinct displaced VMs in the realized assignment.
      std::vector<std::pair<VmId, Placement>> moved;
      for (int i = 0; i < s.vm_count(); ++i)
        if (!(s.placement_at(i) == state_.placement_at(i)))
          moved.emplace_back(s.vm_at(i).id, s.placement_at(i));
      const long long obj = total_fragments(s, x_);
      if (static_cast<int>(moved.size()) <= mnl_ && obj < best_objective_) {
        best_objective_ = obj;
        best_assignment_ = std::move(moved);
      }
    } catch (const Error&) {
      // Warm start is best-effort only.
    }
  }

  // Phase 1: choose which VMs are displaced (removed from the cluster),
  // in increasing index order so each subset is enumerated once.
  void dfs_subset(int vm_index, int budget) {
    if (deadline_passed() || best_objective_ <= lb0_) return;
    ++nodes_;
    if (vm_index == m_ || budget == 0) {
      place_displaced();
      return;
    }
    // Skip this VM.
    dfs_subset(vm_index + 1, budget);
    if (deadline_passed() || best_objective_ <= lb0_) return;
    // Displace this VM (symmetry: identical predecessor must be displaced).
    const int prev = prev_identical_[vm_index];
    if (prev >= 0 && !displaced_flag(prev)) return;
    const VirtualMachine& v = state_.vm_at(vm_index);
    const Placement pl = state_.placement_at(vm_index);
    remove_vm(vm_index);
    displaced_.push_back(vm_index);
    dfs_subset(vm_index + 1, budget - 1);
    displaced_.pop_back();
    restore_vm(vm_index, v, pl);
  }

  bool displaced_flag(int vm_index) const {
    return std::find(displaced_.begin(), displaced_.end(), vm_index) !=
           displaced_.end();
  }

  void remove_vm(int vm_index) {
    const VirtualMachine& v = state_.vm_at(vm_index);
    const Placement pl = state_.placement_at(vm_index);
    // Temporarily park the VM off-cluster by freeing its footprint.
    scratch_free(pl, v, +1);
  }

  void restore_vm(int vm_index, const VirtualMachine& v, const Placement& pl) {
    (void)vm_index;
    scratch_free(pl, v, -1);
  }

  void scratch_free(const Placement& pl, const VirtualMachine& v, int sign) {
    // Adjust the scratch free maps (held inside a mutable copy of state_).
    auto& pm = scratch_pm(pl.pm);
    for (int j = 0; j < 2; ++j) {
      if (pl.slot != NumaSlot::Both && static_cast<int>(pl.slot) != j) continue;
      pm.numas[j].free_cpu += sign * v.cpu_per_numa();
      pm.numas[j].free_mem += sign * v.mem_per_numa();
    }
  }

  PhysicalMachine& scratch_pm(PmId id) {
    if (scratch_.empty()) {
      scratch_ = state_.pms();
    }
    return scratch_[state_.pm_index(id)];
  }

  const PhysicalMachine& scratch_pm_const(PmId id) {
    return scratch_pm(id);
  }

  // Phase 2: place every displaced VM (largest first) onto a new
  // arrangement; feasibility is checked against the scratch maps, which
  // start from the subset-removed cluster so swaps work naturally.
  void place_displaced() {
    if (displaced_.empty()) {
      consider_leaf();
      return;
    }
    order_ = displaced_;
    std::sort(order_.begin(), order_.end(), [&](int a, int b) {
      const auto& va = state_.vm_at(a);
      const auto& vb = state_.vm_at(b);
      if (va.cpu != vb.cpu) return va.cpu > vb.cpu;
      return a < b;
    });
    chosen_.assign(order_.size(), Placement{});
    dfs_place(0);
  }

  void dfs_place(std::size_t k) {
    if (deadline_passed() || best_objective_ <= lb0_) return;
    ++nodes_;
    if (k == order_.size()) {
      consider_leaf();
      return;
    }
    const int vm_index = order_[k];
    const VirtualMachine& v = state_.vm_at(vm_index);
    const Placement original = state_.placement_at(vm_index);

    struct Option {
      Placement pl;
      long long frag_delta;
    };
    std::vector<Option> options;
    for (const auto& pm : scratch_pms()) {
      // Anti-affinity against everyone currently on the PM.
      if (!v.affinity_conflicts.empty() && hosts_conflict(pm.id, v)) continue;
      auto consider = [&](NumaSlot slot) {
        if (Placement{pm.id, slot} == original) return;  // that is "kept"
        long long delta = 0;
        for (int j = 0; j < 2; ++j) {
          if (slot != NumaSlot::Both && static_cast<int>(slot) != j) continue;
          const auto& numa = pm.numas[j];
          if (numa.free_cpu < v.cpu_per_numa() ||
              numa.free_mem < v.mem_per_numa())
            return;
          delta += (numa.free_cpu - v.cpu_per_numa()) % x_ -
                   numa.free_cpu % x_;
        }
        options.push_back({Placement{pm.id, slot}, delta});
      };
      if (v.numa_count == 2) {
        consider(NumaSlot::Both);
      } else {
        consider(NumaSlot::First);
        consider(NumaSlot::Second);
      }
    }
    std::sort(options.begin(), options.end(),
              [](const Option& a, const Option& b) {
                return a.frag_delta < b.frag_delta;
              });
    for (const Option& opt : options) {
      apply_placement(vm_index, opt.pl, +1);
      chosen_[k] = opt.pl;
      dfs_place(k + 1);
      apply_placement(vm_index, opt.pl, -1);
      if (deadline_passed() || best_objective_ <= lb0_) return;
    }
  }

  bool hosts_conflict(PmId pm, const VirtualMachine& v) {
    // The hosted lists in scratch are not maintained; check directly
    // against the placement overlay.
    for (int i = 0; i < m_; ++i) {
      const VmId other = state_.vm_at(i).id;
      if (other == v.id || !v.conflicts_with(other)) continue;
      if (current_pm_of(i) == pm) return true;
    }
    return false;
  }

  PmId current_pm_of(int vm_index) {
    for (std::size_t k = 0; k < placed_overlay_.size(); ++k)
      if (placed_overlay_[k].first == vm_index)
        return placed_overlay_[k].second.pm;
    if (displaced_flag(vm_index)) return -1;  // removed, not yet placed
    return state_.placement_at(vm_index).pm;
  }

  void apply_placement(int vm_index, const Placement& pl, int sign) {
    const VirtualMachine& v = state_.vm_at(vm_index);
    scratch_free(pl, v, -sign);
    if (sign > 0) {
      placed_overlay_.emplace_back(vm_index, pl);
    } else {
      placed_overlay_.pop_back();
    }
  }

  const std::vector<PhysicalMachine>& scratch_pms() {
    scratch_pm(state_.pm_at(0).id);  // force init
    return scratch_;
  }

  void consider_leaf() {
    // All displaced VMs are placed; scratch frees describe the final state.
    long long frags = 0;
    for (const auto& pm : scratch_pms())
      frags += pm.numas[0].free_cpu % x_ + pm.numas[1].free_cpu % x_;
    if (frags < best_objective_) {
      best_objective_ = frags;
      best_assignment_.clear();
      for (std::size_t k = 0; k < placed_overlay_.size(); ++k)
        best_assignment_.emplace_back(
            state_.vm_at(placed_overlay_[k].first).id,
            placed_overlay_[k].second);
    }
  }

  int x_;
  int mnl_;
  std::chrono::steady_clock::time_point deadline_;
  ClusterState state_;
  std::vector<PhysicalMachine> scratch_;
  int m_ = 0;
  long long lb0_ = 0;
  std::vector<int> prev_identical_;
  std::vector<int> displaced_;
  std::vector<int> order_;
  std::vector<Placement> chosen_;
  std::vector<std::pair<int, Placement>> placed_overlay_;
  long long best_objective_ = 0;
  std::vector<std::pair<VmId, Placement>> best_assignment_;
  bool timed_out_ = false;
  long long nodes_ = 0;
  long long pulled_cpu_ = 0;
  std::uint32_t clock_checks_ = 0;
};

}  // namespace detail

// Provably optimal rescheduling at small scale: branch over displaced-VM
// subsets (at most mnl, distinct VMs) and their placements; feasibility is
// judged on the final assignment so swap cycles are found. On timeout the
// incumbent is returned with the optimal flag cleared.
inline ExactResult solve_exact(const MipInstance& inst,
                               double time_limit_secs = 60.0) {
  detail::ExactSearch search(inst, time_limit_secs);
  search.run();

  ExactResult out;
  out.assignment = search.best_assignment();
  out.objective = search.best_objective();
  out.optimal = search.proven_optimal();
  out.lower_bound = search.lower_bound();
  out.nodes_expanded = search.nodes();

  // Realize the assignment as an ordered, stepwise-feasible plan.
  auto ordered = order_migrations(inst.state, out.assignment,
                                  ObjectiveSpec::xcore(inst.x));
  if (!ordered) {
    out.ordering_feasible = false;
    out.plan_matches_assignment = false;
    return out;
  }
  out.plan = ordered->plan;
  out.plan_matches_assignment =
      total_fragments(ordered->final_state, inst.x) == out.objective;
  return out;
}

struct PopResult {
  MigrationPlan plan;
  double objective = 0.0;       // replayed on the full mapping
  long long fragments = 0;      // replayed total fragments
  bool all_parts_optimal = true;
};

// Partitioned optimization: PMs are split uniformly at random into
// `partitions` groups (VMs follow their host PM), the migration budget is
// divided evenly with the remainder spread over the first groups, each
// part is solved exactly, and the plans are concatenated.
inline PopResult pop_solve(const MipInstance& inst, int partitions,
                           std::uint64_t seed, double time_limit_secs = 60.0,
                           unsigned threads = 1) {
  if (partitions < 1) throw InvalidParameter("partitions must be >= 1");
  const int n = inst.state.pm_count();
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng rng = make_rng(seed);
  shuffle_vec(order, rng);

  std::vector<std::vector<int>> groups(partitions);
  for (int i = 0; i < n; ++i) groups[i % partitions].push_back(order[i]);
  for (auto& g : groups) std::sort(g.begin(), g.end());

  std::vector<ExactResult> results(partitions);
  std::vector<int> budgets(partitions, inst.mnl / partitions);
  for (int p = 0; p < inst.mnl % partitions; ++p) ++budgets[p];

  parallel_for(
      static_cast<std::size_t>(partitions),
      [&](std::size_t p) {
        // Build the sub-instance from group p.
        std::vector<PhysicalMachine> pms;
        std::vector<bool> in_group(n, false);
        for (int pi : groups[p]) {
          in_group[pi] = true;
          PhysicalMachine pm = inst.state.pm_at(pi);
          pm.hosted.clear();
          for (int j = 0; j < 2; ++j) {
            pm.numas[j].free_cpu = pm.numas[j].capacity_cpu;
            pm.numas[j].free_mem = pm.numas[j].capacity_mem;
          }
          pms.push_back(std::move(pm));
        }
        std::vector<VirtualMachine> vms;
        std::vector<Placement> placements;
        for (int i = 0; i < inst.state.vm_count(); ++i) {
          const Placement& pl = inst.state.placement_at(i);
          if (!in_group[inst.state.pm_index(pl.pm)]) continue;
          vms.push_back(inst.state.vm_at(i));
          placements.push_back(pl);
        }
        if (pms.empty()) return;
        MipInstance sub{ClusterState(std::move(pms), std::move(vms),
                                     std::move(placements)),
                        inst.x, budgets[p]};
        results[p] = solve_exact(sub, time_limit_secs /
                                          static_cast<double>(partitions));
      },
      threads);

  PopResult out;
  for (const auto& r : results) {
    out.all_parts_optimal = out.all_parts_optimal && r.optimal;
    for (const auto& a : r.plan.actions) out.plan.actions.push_back(a);
  }
  auto replay = rollout_plan(inst.state, out.plan, ObjectiveSpec::xcore(inst.x));
  out.objective = replay.final_objective;
  out.fragments = total_fragments(replay.final_state, inst.x);
  return out;
}

}  // namespace vmr
