#pragma once

#include <vector>

#include "vmr/core/cluster.hpp"
#include "vmr/objectives.hpp"
#include "vmr/sim/simulator.hpp"

namespace vmr {

// Incremental what-if evaluation of an objective. Any objective flattens
// into weighted fragment-rate leaves (CPU or memory), so removal and
// migration deltas touch O(1) NUMAs per leaf instead of rescanning the
// cluster.
class ObjectiveDelta {
 public:
  ObjectiveDelta(const ClusterState& state, const ObjectiveSpec& spec) {
    flatten(spec, 1.0);
    rebuild(state);
  }

  void rebuild(const ClusterState& state) {
    for (Leaf& leaf : leaves_) {
      leaf.frag = 0;
      leaf.free = 0;
      for (const auto& p : state.pms())
        for (int j = 0; j < 2; ++j) {
          const int f = leaf.cpu ? p.numas[j].free_cpu : p.numas[j].free_mem;
          leaf.frag += f % leaf.unit;
          leaf.free += f;
        }
    }
  }

  double value() const {
    double v = 0;
    for (const Leaf& leaf : leaves_) v += leaf.weight * leaf.rate(0, 0);
    return v;
  }

  // Objective if `vm` were deleted from the cluster entirely.
  double value_if_removed(const ClusterState& state, VmId vm) const {
    const VirtualMachine& v = state.vm(vm);
    const Placement pl = state.placement_of(vm);
    const PhysicalMachine& host = state.pm(pl.pm);
    double out = 0;
    for (const Leaf& leaf : leaves_) {
      long long dfrag = 0;
      const int need = leaf.cpu ? v.cpu_per_numa() : v.mem_per_numa();
      for (int j = 0; j < 2; ++j) {
        if (pl.slot != NumaSlot::Both && static_cast<int>(pl.slot) != j)
          continue;
        const int f = leaf.cpu ? host.numas[j].free_cpu : host.numas[j].free_mem;
        dfrag += (f + need) % leaf.unit - f % leaf.unit;
      }
      const long long dfree =
          static_cast<long long>(need) * (pl.slot == NumaSlot::Both ? 2 : 1);
      out += leaf.weight * leaf.rate(dfrag, dfree);
    }
    return out;
  }

  // Objective if `vm` migrated to (dest_pm, slot). The move must be
  // capacity-feasible; this only does arithmetic.
  double value_if_migrated(const ClusterState& state, VmId vm, PmId dest_pm,
                           NumaSlot slot) const {
    const VirtualMachine& v = state.vm(vm);
    const Placement pl = state.placement_of(vm);
    const PhysicalMachine& src = state.pm(pl.pm);
    const PhysicalMachine& dst = state.pm(dest_pm);
    const bool same_pm = pl.pm == dest_pm;
    double out = 0;
    for (const Leaf& leaf : leaves_) {
      const int need = leaf.cpu ? v.cpu_per_numa() : v.mem_per_numa();
      long long dfrag = 0;
      for (int j = 0; j < 2; ++j) {
        // Per-NUMA free delta on source and destination.
        int df_src = 0, df_dst = 0;
        if (pl.slot == NumaSlot::Both || static_cast<int>(pl.slot) == j)
          df_src = need;
        if (slot == NumaSlot::Both || static_cast<int>(slot) == j)
          df_dst = -need;
        if (same_pm) {
          const int f = leaf.cpu ? src.numas[j].free_cpu : src.numas[j].free_mem;
          const int delta = df_src + df_dst;
          if (delta != 0) dfrag += (f + delta) % leaf.unit - f % leaf.unit;
        } else {
          if (df_src != 0) {
            const int f =
                leaf.cpu ? src.numas[j].free_cpu : src.numas[j].free_mem;
            dfrag += (f + df_src) % leaf.unit - f % leaf.unit;
          }
          if (df_dst != 0) {
            const int f =
                leaf.cpu ? dst.numas[j].free_cpu : dst.numas[j].free_mem;
            dfrag += (f + df_dst) % leaf.unit - f % leaf.unit;
          }
        }
      }
      out += leaf.weight * leaf.rate(dfrag, 0);  // migrations keep free totals
    }
    return out;
  }

 private:
  struct Leaf {
    bool cpu = true;    // false: memory
    int unit = 16;      // grid (cores or GB)
    double weight = 1.0;
    long long frag = 0;
    long long free = 0;

    double rate(long long dfrag, long long dfree) const {
      const long long fr = frag + dfrag;
      const long long fv = free + dfree;
      return fv == 0 ? 0.0
                     : static_cast<double>(fr) / static_cast<double>(fv);
    }
  };

  void flatten(const ObjectiveSpec& spec, double weight) {
    switch (spec.kind) {
      case ObjectiveSpec::Kind::XCoreFr:
        leaves_.push_back({true, spec.x, weight, 0, 0});
        return;
      case ObjectiveSpec::Kind::MemFragFr:
        leaves_.push_back({false, spec.block_gb, weight, 0, 0});
        return;
      case ObjectiveSpec::Kind::Mixed:
        flatten(*spec.a, weight * (1.0 - spec.lambda));
        flatten(*spec.b, weight * spec.lambda);
        return;
      case ObjectiveSpec::Kind::MinMnlToGoal:
        flatten(*spec.base, weight);
        return;
    }
  }

  std::vector<Leaf> leaves_;
};

}  // namespace vmr
