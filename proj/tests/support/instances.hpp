#pragma once

// Shared instance builders for tests: the two-PM worked example and small
// random-but-valid clusters for property checks.

#include <string>
#include <vector>

#include "vmr/core/cluster.hpp"
#include "vmr/util/rng.hpp"

namespace vmr::test {

// Two PMs, one usable NUMA each (the second NUMA has zero capacity).
// PM 0 hosts a 4-core and a 16-core VM on a 32-core NUMA (12 free);
// PM 1 hosts a 16-core VM on a 36-core NUMA (20 free). Moving the 4-core
// VM to PM 1 leaves 16 free on both, i.e. zero 16-core fragments.
inline ClusterState worked_example() {
  std::vector<PhysicalMachine> pms(2);
  pms[0].id = 0;
  pms[0].numas[0] = {32, 256, 0, 0};
  pms[0].numas[1] = {0, 0, 0, 0};
  pms[1].id = 1;
  pms[1].numas[0] = {36, 256, 0, 0};
  pms[1].numas[1] = {0, 0, 0, 0};

  std::vector<VirtualMachine> vms(3);
  vms[0] = {0, 4, 8, 1, "xlarge", {}};
  vms[1] = {1, 16, 32, 1, "4xlarge", {}};
  vms[2] = {2, 16, 32, 1, "4xlarge", {}};

  std::vector<Placement> pl = {
      {0, NumaSlot::First}, {0, NumaSlot::First}, {1, NumaSlot::First}};
  return ClusterState(std::move(pms), std::move(vms), std::move(pl));
}

// The documented one-step fix for the worked example.
inline MigrationAction worked_example_fix() { return MigrationAction{0, 1}; }

struct RandomClusterOptions {
  int pm_count = 4;
  int vm_count = 8;
  int numa_cpu_min = 16;
  int numa_cpu_max = 48;
  int mem_per_cpu = 4;
  bool allow_double_numa = true;
  double affinity_pair_prob = 0.0;
};

// Small random cluster with a feasible random placement. VM sizes are
// drawn from the standard shapes that fit the sampled capacities.
inline ClusterState random_cluster(Rng& rng, const RandomClusterOptions& opt = {}) {
  std::vector<PhysicalMachine> pms(opt.pm_count);
  for (int i = 0; i < opt.pm_count; ++i) {
    pms[i].id = i;
    for (int j = 0; j < 2; ++j) {
      int cpu = uniform_int(rng, opt.numa_cpu_min, opt.numa_cpu_max);
      pms[i].numas[j] = {cpu, cpu * opt.mem_per_cpu, 0, 0};
    }
  }

  std::vector<VirtualMachine> vms;
  std::vector<Placement> placements;
  // Track remaining room while placing.
  std::vector<std::array<int, 2>> free_cpu(opt.pm_count);
  std::vector<std::array<int, 2>> free_mem(opt.pm_count);
  for (int i = 0; i < opt.pm_count; ++i)
    for (int j = 0; j < 2; ++j) {
      free_cpu[i][j] = pms[i].numas[j].capacity_cpu;
      free_mem[i][j] = pms[i].numas[j].capacity_mem;
    }

  const int sizes[] = {2, 4, 8, 16, 32};
  int next_id = 0;
  int attempts = 0;
  while (static_cast<int>(vms.size()) < opt.vm_count && attempts < 1000) {
    ++attempts;
    int cpu = sizes[uniform_index(rng, opt.allow_double_numa ? 5 : 4)];
    int numa_count = (cpu >= 32 && opt.allow_double_numa) ? 2 : 1;
    int mem = cpu * 2;
    int pm = uniform_int(rng, 0, opt.pm_count - 1);
    if (numa_count == 2) {
      if (free_cpu[pm][0] < cpu / 2 || free_cpu[pm][1] < cpu / 2 ||
          free_mem[pm][0] < mem / 2 || free_mem[pm][1] < mem / 2)
        continue;
      free_cpu[pm][0] -= cpu / 2;
      free_cpu[pm][1] -= cpu / 2;
      free_mem[pm][0] -= mem / 2;
      free_mem[pm][1] -= mem / 2;
      vms.push_back({next_id, cpu, mem, 2, "", {}});
      placements.push_back({pm, NumaSlot::Both});
    } else {
      int numa = uniform_int(rng, 0, 1);
      if (free_cpu[pm][numa] < cpu || free_mem[pm][numa] < mem) continue;
      free_cpu[pm][numa] -= cpu;
      free_mem[pm][numa] -= mem;
      vms.push_back({next_id, cpu, mem, 1, "", {}});
      placements.push_back(
          {pm, numa == 0 ? NumaSlot::First : NumaSlot::Second});
    }
    ++next_id;
  }

  if (opt.affinity_pair_prob > 0.0) {
    for (std::size_t a = 0; a < vms.size(); ++a) {
      for (std::size_t b = a + 1; b < vms.size(); ++b) {
        if (placements[a].pm == placements[b].pm) continue;  // keep feasible
        if (uniform_real(rng) < opt.affinity_pair_prob) {
          vms[a].affinity_conflicts.push_back(vms[b].id);
          vms[b].affinity_conflicts.push_back(vms[a].id);
        }
      }
    }
    for (auto& v : vms)
      std::sort(v.affinity_conflicts.begin(), v.affinity_conflicts.end());
  }

  return ClusterState(std::move(pms), std::move(vms), std::move(placements));
}

}  // namespace vmr::test
