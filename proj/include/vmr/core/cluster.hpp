#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vmr/util/errors.hpp"

namespace vmr {

using VmId = std::int32_t;
using PmId = std::int32_t;

// Which NUMA(s) of a PM a VM occupies. Double-NUMA VMs always span both
// NUMAs of one PM; single-NUMA VMs occupy exactly one.
enum class NumaSlot : std::int8_t { First = 0, Second = 1, Both = 2 };

inline int slots_of(NumaSlot s) { return s == NumaSlot::Both ? 2 : 1; }

inline std::string to_string(NumaSlot s) {
  switch (s) {
    case NumaSlot::First: return "0";
    case NumaSlot::Second: return "1";
    case NumaSlot::Both: return "both";
  }
  return "?";
}

struct NumaState {
  int capacity_cpu = 0;  // cores
  int capacity_mem = 0;  // GB
  int free_cpu = 0;
  int free_mem = 0;
};

struct VirtualMachine {
  VmId id = -1;
  int cpu = 0;        // total cores across occupied NUMAs
  int mem = 0;        // total GB across occupied NUMAs
  int numa_count = 1; // 1 or 2
  std::string type;   // standard type name, empty for custom shapes
  std::vector<VmId> affinity_conflicts;  // sorted; hard anti-affinity peers

  int cpu_per_numa() const { return cpu / numa_count; }
  int mem_per_numa() const { return mem / numa_count; }
  bool conflicts_with(VmId other) const {
    return std::binary_search(affinity_conflicts.begin(),
                              affinity_conflicts.end(), other);
  }
};

struct PhysicalMachine {
  PmId id = -1;
  std::array<NumaState, 2> numas;
  std::vector<VmId> hosted;  // sorted by id

  int free_cpu_total() const { return numas[0].free_cpu + numas[1].free_cpu; }
  int free_mem_total() const { return numas[0].free_mem + numas[1].free_mem; }
};

struct Placement {
  PmId pm = -1;
  NumaSlot slot = NumaSlot::First;
  bool operator==(const Placement&) const = default;
};

// One rescheduling step: move `vm` to `dest_pm`. The destination NUMA is
// not part of the action; the simulator layer resolves it.
struct MigrationAction {
  VmId vm = -1;
  PmId dest_pm = -1;
  bool operator==(const MigrationAction&) const = default;
};

struct MigrationPlan {
  std::vector<MigrationAction> actions;

  std::size_t size() const { return actions.size(); }
  bool empty() const { return actions.empty(); }
};

// Free CPU on a NUMA that cannot serve an additional x-core unit.
inline int fragment_of_numa(int free_cpu, int x) {
  if (x <= 0) throw InvalidParameter("fragment unit must be positive");
  if (free_cpu < 0) throw InvalidParameter("free cpu must be non-negative");
  return free_cpu % x;
}

// Full assignment of VMs to (PM, NUMA) plus per-NUMA free-resource
// bookkeeping. Value type: copies are independent snapshots, and
// apply_migration returns a new state.
class ClusterState {
 public:
  ClusterState() = default;

  // Builds and validates a state. `placements` is aligned with `vms`.
  // Throws ValidationError listing every violation found.
  ClusterState(std::vector<PhysicalMachine> pms,
               std::vector<VirtualMachine> vms,
               std::vector<Placement> placements)
      : pms_(std::move(pms)),
        vms_(std::move(vms)),
        placements_(std::move(placements)) {
    rebuild_indexes();
    auto violations = recompute_bookkeeping();
    if (!violations.empty()) throw ValidationError(std::move(violations));
  }

  int pm_count() const { return static_cast<int>(pms_.size()); }
  int vm_count() const { return static_cast<int>(vms_.size()); }

  const std::vector<PhysicalMachine>& pms() const { return pms_; }
  const std::vector<VirtualMachine>& vms() const { return vms_; }
  const std::vector<Placement>& placements() const { return placements_; }

  const PhysicalMachine& pm_at(int index) const { return pms_[index]; }
  const VirtualMachine& vm_at(int index) const { return vms_[index]; }
  const Placement& placement_at(int index) const { return placements_[index]; }

  int pm_index(PmId id) const {
    auto it = pm_index_.find(id);
    if (it == pm_index_.end())
      throw InvalidParameter("unknown pm id " + std::to_string(id));
    return it->second;
  }
  int vm_index(VmId id) const {
    auto it = vm_index_.find(id);
    if (it == vm_index_.end())
      throw InvalidParameter("unknown vm id " + std::to_string(id));
    return it->second;
  }
  bool has_pm(PmId id) const { return pm_index_.count(id) != 0; }
  bool has_vm(VmId id) const { return vm_index_.count(id) != 0; }

  const PhysicalMachine& pm(PmId id) const { return pms_[pm_index(id)]; }
  const VirtualMachine& vm(VmId id) const { return vms_[vm_index(id)]; }
  const Placement& placement_of(VmId id) const {
    return placements_[vm_index(id)];
  }

  long long total_free_cpu() const {
    long long s = 0;
    for (const auto& p : pms_) s += p.numas[0].free_cpu + p.numas[1].free_cpu;
    return s;
  }
  long long total_free_mem() const {
    long long s = 0;
    for (const auto& p : pms_) s += p.numas[0].free_mem + p.numas[1].free_mem;
    return s;
  }
  long long total_capacity_cpu() const {
    long long s = 0;
    for (const auto& p : pms_)
      s += p.numas[0].capacity_cpu + p.numas[1].capacity_cpu;
    return s;
  }
  long long total_used_cpu() const {
    return total_capacity_cpu() - total_free_cpu();
  }
  long long total_capacity_mem() const {
    long long s = 0;
    for (const auto& p : pms_)
      s += p.numas[0].capacity_mem + p.numas[1].capacity_mem;
    return s;
  }
  long long total_used_mem() const {
    return total_capacity_mem() - total_free_mem();
  }

  // Checks whether the migration can be applied with the given destination
  // arrangement. Returns the violated constraint, or nullopt when feasible.
  // Moving a VM onto its current exact placement is reported as NoOpMove.
  std::optional<Constraint> migration_infeasibility(
      const MigrationAction& action, NumaSlot dest_slot) const {
    const int vi = vm_index(action.vm);
    const int di = pm_index(action.dest_pm);
    const VirtualMachine& v = vms_[vi];
    const Placement cur = placements_[vi];

    if (v.numa_count == 2) {
      if (dest_slot != NumaSlot::Both) return Constraint::NumaShape;
    } else if (dest_slot == NumaSlot::Both) {
      return Constraint::NumaShape;
    }
    if (cur.pm == action.dest_pm && cur.slot == dest_slot)
      return Constraint::NoOpMove;

    const PhysicalMachine& dest = pms_[di];
    if (!v.affinity_conflicts.empty()) {
      for (VmId other : dest.hosted) {
        if (other != v.id && v.conflicts_with(other))
          return Constraint::Affinity;
      }
    }

    const bool same_pm = cur.pm == action.dest_pm;
    const int need_cpu = v.cpu_per_numa();
    const int need_mem = v.mem_per_numa();
    for (int j = 0; j < 2; ++j) {
      if (!slot_covers(dest_slot, j)) continue;
      int free_cpu = dest.numas[j].free_cpu;
      int free_mem = dest.numas[j].free_mem;
      if (same_pm && slot_covers(cur.slot, j)) {
        free_cpu += need_cpu;  // the VM's own footprint frees up
        free_mem += need_mem;
      }
      if (free_cpu < need_cpu) return Constraint::CpuCapacity;
      if (free_mem < need_mem) return Constraint::MemCapacity;
    }
    return std::nullopt;
  }

  // Applies the migration in place. Throws InfeasibleError and leaves the
  // state untouched when the destination cannot host the VM. Applying a
  // VM's current exact placement is the identity.
  void apply_migration_in_place(const MigrationAction& action,
                                NumaSlot dest_slot) {
    auto violation = migration_infeasibility(action, dest_slot);
    if (violation && *violation != Constraint::NoOpMove) {
      throw InfeasibleError(
          *violation, "cannot move vm " + std::to_string(action.vm) +
                          " to pm " + std::to_string(action.dest_pm) +
                          " slot " + to_string(dest_slot) + ": " +
                          to_string(*violation));
    }
    if (violation) return;  // no-op move: identity at this layer

    const int vi = vm_index(action.vm);
    const VirtualMachine& v = vms_[vi];
    Placement& cur = placements_[vi];
    PhysicalMachine& src = pms_[pm_index(cur.pm)];
    detach(src, v, cur.slot);
    PhysicalMachine& dest = pms_[pm_index(action.dest_pm)];
    attach(dest, v, dest_slot);
    cur = Placement{action.dest_pm, dest_slot};
  }

  ClusterState apply_migration(const MigrationAction& action,
                               NumaSlot dest_slot) const {
    ClusterState next = *this;
    next.apply_migration_in_place(action, dest_slot);
    return next;
  }

  // Full invariant scan; returns one message per violation.
  std::vector<std::string> validate() const {
    ClusterState check;
    check.pms_ = pms_;
    check.vms_ = vms_;
    check.placements_ = placements_;
    check.rebuild_indexes();
    auto violations = check.recompute_bookkeeping();
    // Bookkeeping drift between stored and recomputed free resources.
    for (std::size_t i = 0; i < pms_.size() && violations.empty(); ++i) {
      for (int j = 0; j < 2; ++j) {
        if (pms_[i].numas[j].free_cpu != check.pms_[i].numas[j].free_cpu ||
            pms_[i].numas[j].free_mem != check.pms_[i].numas[j].free_mem) {
          violations.push_back("pm " + std::to_string(pms_[i].id) + " numa " +
                               std::to_string(j) +
                               ": stored free resources disagree with hosted "
                               "VM footprints");
        }
      }
    }
    return violations;
  }

 private:
  static bool slot_covers(NumaSlot s, int numa) {
    return s == NumaSlot::Both || static_cast<int>(s) == numa;
  }

  static void detach(PhysicalMachine& pm, const VirtualMachine& v,
                     NumaSlot slot) {
    for (int j = 0; j < 2; ++j) {
      if (!slot_covers(slot, j)) continue;
      pm.numas[j].free_cpu += v.cpu_per_numa();
      pm.numas[j].free_mem += v.mem_per_numa();
    }
    auto it = std::lower_bound(pm.hosted.begin(), pm.hosted.end(), v.id);
    pm.hosted.erase(it);
  }

  static void attach(PhysicalMachine& pm, const VirtualMachine& v,
                     NumaSlot slot) {
    for (int j = 0; j < 2; ++j) {
      if (!slot_covers(slot, j)) continue;
      pm.numas[j].free_cpu -= v.cpu_per_numa();
      pm.numas[j].free_mem -= v.mem_per_numa();
    }
    pm.hosted.insert(
        std::lower_bound(pm.hosted.begin(), pm.hosted.end(), v.id), v.id);
  }

  void rebuild_indexes() {
    pm_index_.clear();
    vm_index_.clear();
    for (std::size_t i = 0; i < pms_.size(); ++i)
      pm_index_[pms_[i].id] = static_cast<int>(i);
    for (std::size_t i = 0; i < vms_.size(); ++i)
      vm_index_[vms_[i].id] = static_cast<int>(i);
  }

  // Recomputes hosted lists and free resources from placements. Returns
  // every structural violation found.
  std::vector<std::string> recompute_bookkeeping() {
    std::vector<std::string> violations;
    if (pm_index_.size() != pms_.size())
      violations.push_back("duplicate pm ids");
    if (vm_index_.size() != vms_.size())
      violations.push_back("duplicate vm ids");
    if (placements_.size() != vms_.size())
      violations.push_back("placements must cover every vm exactly once");

    for (auto& p : pms_) {
      p.hosted.clear();
      for (int j = 0; j < 2; ++j) {
        if (p.numas[j].capacity_cpu < 0 || p.numas[j].capacity_mem < 0)
          violations.push_back("pm " + std::to_string(p.id) +
                               ": negative capacity");
        p.numas[j].free_cpu = p.numas[j].capacity_cpu;
        p.numas[j].free_mem = p.numas[j].capacity_mem;
      }
    }

    for (std::size_t i = 0; i < vms_.size() && i < placements_.size(); ++i) {
      const VirtualMachine& v = vms_[i];
      const Placement& pl = placements_[i];
      const std::string tag = "vm " + std::to_string(v.id);
      if (v.numa_count != 1 && v.numa_count != 2) {
        violations.push_back(tag + ": numa count must be 1 or 2");
        continue;
      }
      if (v.cpu <= 0 || v.mem < 0 || v.cpu % v.numa_count != 0 ||
          v.mem % v.numa_count != 0) {
        violations.push_back(tag +
                             ": cpu/mem must be positive and divisible by the "
                             "numa count");
        continue;
      }
      if (!std::is_sorted(v.affinity_conflicts.begin(),
                          v.affinity_conflicts.end()))
        violations.push_back(tag + ": affinity conflicts must be sorted");
      auto it = pm_index_.find(pl.pm);
      if (it == pm_index_.end()) {
        violations.push_back(tag + ": placed on unknown pm " +
                             std::to_string(pl.pm));
        continue;
      }
      if (v.numa_count == 2 && pl.slot != NumaSlot::Both) {
        violations.push_back(tag + ": double-numa vm must occupy both numas (" +
                             std::string(to_string(Constraint::NumaShape)) +
                             ")");
        continue;
      }
      if (v.numa_count == 1 && pl.slot == NumaSlot::Both) {
        violations.push_back(tag + ": single-numa vm cannot span both numas (" +
                             std::string(to_string(Constraint::NumaShape)) +
                             ")");
        continue;
      }
      PhysicalMachine& host = pms_[it->second];
      for (int j = 0; j < 2; ++j) {
        if (!slot_covers(pl.slot, j)) continue;
        host.numas[j].free_cpu -= v.cpu_per_numa();
        host.numas[j].free_mem -= v.mem_per_numa();
      }
      host.hosted.push_back(v.id);
    }

    for (auto& p : pms_) {
      std::sort(p.hosted.begin(), p.hosted.end());
      for (int j = 0; j < 2; ++j) {
        if (p.numas[j].free_cpu < 0)
          violations.push_back(
              "pm " + std::to_string(p.id) + " numa " + std::to_string(j) +
              ": hosted cpu demand exceeds capacity (" +
              std::string(to_string(Constraint::CpuCapacity)) + ")");
        if (p.numas[j].free_mem < 0)
          violations.push_back(
              "pm " + std::to_string(p.id) + " numa " + std::to_string(j) +
              ": hosted memory demand exceeds capacity (" +
              std::string(to_string(Constraint::MemCapacity)) + ")");
      }
      // Anti-affinity between co-hosted VMs.
      for (std::size_t a = 0; a < p.hosted.size(); ++a) {
        const VirtualMachine& va = vms_[vm_index_.at(p.hosted[a])];
        if (va.affinity_conflicts.empty()) continue;
        for (std::size_t b = a + 1; b < p.hosted.size(); ++b) {
          if (va.conflicts_with(p.hosted[b]))
            violations.push_back(
                "pm " + std::to_string(p.id) + ": vms " +
                std::to_string(va.id) + " and " + std::to_string(p.hosted[b]) +
                " violate anti-affinity (" +
                std::string(to_string(Constraint::Affinity)) + ")");
        }
      }
    }
    return violations;
  }

  std::vector<PhysicalMachine> pms_;
  std::vector<VirtualMachine> vms_;
  std::vector<Placement> placements_;
  std::unordered_map<PmId, int> pm_index_;
  std::unordered_map<VmId, int> vm_index_;
};

// Total x-core fragments across all PMs and NUMAs.
inline long long total_fragments(const ClusterState& state, int x) {
  long long sum = 0;
  for (const auto& p : state.pms()) {
    sum += fragment_of_numa(p.numas[0].free_cpu, x);
    sum += fragment_of_numa(p.numas[1].free_cpu, x);
  }
  return sum;
}

// Total block-sized memory fragments (GB) across all PMs and NUMAs.
inline long long total_mem_fragments(const ClusterState& state, int block_gb) {
  long long sum = 0;
  for (const auto& p : state.pms()) {
    sum += fragment_of_numa(p.numas[0].free_mem, block_gb);
    sum += fragment_of_numa(p.numas[1].free_mem, block_gb);
  }
  return sum;
}

// Fraction of free CPU that is fragmented. A fully packed cluster has no
// free CPU and therefore no waste: the rate is defined as 0.
inline double fragment_rate(const ClusterState& state, int x) {
  const long long free_cpu = state.total_free_cpu();
  if (free_cpu == 0) return 0.0;
  return static_cast<double>(total_fragments(state, x)) /
         static_cast<double>(free_cpu);
}

inline double memory_fragment_rate(const ClusterState& state, int block_gb) {
  const long long free_mem = state.total_free_mem();
  if (free_mem == 0) return 0.0;
  return static_cast<double>(total_mem_fragments(state, block_gb)) /
         static_cast<double>(free_mem);
}

}  // namespace vmr
