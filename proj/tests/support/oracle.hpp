#pragma once

// Brute-force reference for the exact solver: enumerate every displaced
// subset of at most mnl VMs and every placement of those VMs, validate the
// final assignment from scratch, and take the minimum fragment total.
// Independent of the solver's search: feasibility comes from full
// ClusterState reconstruction.

#include <utility>
#include <vector>

#include "vmr/core/cluster.hpp"

namespace vmr::test {

namespace detail {

inline void enumerate_placements(
    const ClusterState& initial, int x,
    const std::vector<int>& subset, std::size_t k,
    std::vector<Placement>& placements, long long& best) {
  if (k == subset.size()) {
    try {
      ClusterState final_state(initial.pms(), initial.vms(), placements);
      long long frags = total_fragments(final_state, x);
      if (frags < best) best = frags;
    } catch (const ValidationError&) {
      // infeasible final assignment
    }
    return;
  }
  const int vi = subset[k];
  const VirtualMachine& v = initial.vm_at(vi);
  const Placement original = initial.placement_at(vi);
  for (const auto& pm : initial.pms()) {
    if (v.numa_count == 2) {
      Placement pl{pm.id, NumaSlot::Both};
      if (pl == original) continue;
      placements[vi] = pl;
      enumerate_placements(initial, x, subset, k + 1, placements, best);
    } else {
      for (NumaSlot slot : {NumaSlot::First, NumaSlot::Second}) {
        Placement pl{pm.id, slot};
        if (pl == original) continue;
        placements[vi] = pl;
        enumerate_placements(initial, x, subset, k + 1, placements, best);
      }
    }
  }
  placements[vi] = original;
}

inline void enumerate_subsets(const ClusterState& initial, int x, int mnl,
                              int from, std::vector<int>& subset,
                              std::vector<Placement>& placements,
                              long long& best) {
  if (!subset.empty())
    enumerate_placements(initial, x, subset, 0, placements, best);
  if (static_cast<int>(subset.size()) == mnl) return;
  for (int i = from; i < initial.vm_count(); ++i) {
    subset.push_back(i);
    enumerate_subsets(initial, x, mnl, i + 1, subset, placements, best);
    subset.pop_back();
  }
}

}  // namespace detail

inline long long brute_force_optimal_fragments(const ClusterState& initial,
                                               int x, int mnl) {
  long long best = total_fragments(initial, x);
  std::vector<int> subset;
  std::vector<Placement> placements = initial.placements();
  detail::enumerate_subsets(initial, x, mnl, 0, subset, placements, best);
  return best;
}

}  // namespace vmr::test
