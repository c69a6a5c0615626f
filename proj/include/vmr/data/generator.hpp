#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vmr/core/cluster.hpp"
#include "vmr/core/vm_types.hpp"
#include "vmr/util/errors.hpp"
#include "vmr/util/rng.hpp"

namespace vmr {

// Incremental best-fit placement over fresh PMs: each arriving VM goes to
// the feasible (PM, NUMA) that minimizes the resulting fragment rate,
// ties broken by lowest PM id then lowest NUMA index.
class BestFitScheduler {
 public:
  explicit BestFitScheduler(std::vector<PhysicalMachine> pms, int x = 16)
      : pms_(std::move(pms)), x_(x) {
    const int n = static_cast<int>(pms_.size());
    free_cpu_.resize(n);
    free_mem_.resize(n);
    hosted_.resize(n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 2; ++j) {
        free_cpu_[i][j] = pms_[i].numas[j].capacity_cpu;
        free_mem_[i][j] = pms_[i].numas[j].capacity_mem;
        total_free_ += free_cpu_[i][j];
        total_frag_ += free_cpu_[i][j] % x_;
      }
  }

  // Places the VM if any (PM, NUMA) can host it; returns success.
  bool try_place(const VirtualMachine& v) {
    const int n = static_cast<int>(pms_.size());
    const int need_cpu = v.cpu_per_numa();
    const int need_mem = v.mem_per_numa();
    int best_pm = -1;
    int best_slot = -1;  // 0, 1, or 2 for both
    double best_fr_after = 0.0;

    for (int i = 0; i < n; ++i) {
      bool conflict = false;
      if (!v.affinity_conflicts.empty()) {
        for (VmId other : hosted_[i])
          if (v.conflicts_with(other)) {
            conflict = true;
            break;
          }
      }
      if (conflict) continue;

      auto consider = [&](int slot) {
        long long frag_after = total_frag_;
        for (int j = 0; j < 2; ++j) {
          if (slot != 2 && slot != j) continue;
          if (free_cpu_[i][j] < need_cpu || free_mem_[i][j] < need_mem) return;
          frag_after -= free_cpu_[i][j] % x_;
          frag_after += (free_cpu_[i][j] - need_cpu) % x_;
        }
        const long long free_after = total_free_ - v.cpu;
        const double fr_after =
            free_after == 0 ? 0.0
                            : static_cast<double>(frag_after) /
                                  static_cast<double>(free_after);
        if (best_pm < 0 || fr_after < best_fr_after) {
          best_pm = i;
          best_slot = slot;
          best_fr_after = fr_after;
        }
      };
      if (v.numa_count == 2) {
        consider(2);
      } else {
        consider(0);
        consider(1);
      }
    }

    if (best_pm < 0) return false;

    for (int j = 0; j < 2; ++j) {
      if (best_slot != 2 && best_slot != j) continue;
      total_frag_ -= free_cpu_[best_pm][j] % x_;
      free_cpu_[best_pm][j] -= need_cpu;
      free_mem_[best_pm][j] -= need_mem;
      total_frag_ += free_cpu_[best_pm][j] % x_;
    }
    total_free_ -= v.cpu;
    hosted_[best_pm].push_back(v.id);
    placed_.push_back(v);
    placements_.push_back(
        {pms_[best_pm].id, best_slot == 2 ? NumaSlot::Both
                           : best_slot == 0 ? NumaSlot::First
                                            : NumaSlot::Second});
    return true;
  }

  ClusterState finish() && {
    return ClusterState(std::move(pms_), std::move(placed_),
                        std::move(placements_));
  }

 private:
  std::vector<PhysicalMachine> pms_;
  std::vector<std::array<int, 2>> free_cpu_, free_mem_;
  std::vector<std::vector<VmId>> hosted_;
  std::vector<VirtualMachine> placed_;
  std::vector<Placement> placements_;
  long long total_free_ = 0;
  long long total_frag_ = 0;
  int x_;
};

// Places the whole stream in arrival order; an unplaceable VM is an error
// identifying the VM.
inline ClusterState best_fit_initial(std::vector<PhysicalMachine> pms,
                                     const std::vector<VirtualMachine>& stream,
                                     int x = 16) {
  BestFitScheduler sched(std::move(pms), x);
  for (const VirtualMachine& v : stream) {
    if (!sched.try_place(v))
      throw SchedulingError("vm " + std::to_string(v.id) +
                            " cannot be placed on any pm");
  }
  return std::move(sched).finish();
}

struct PmProfile {
  int cpu = 88;    // whole-PM cores, split evenly across the two NUMAs
  int mem = 256;   // whole-PM GB
  double weight = 1.0;
};

struct VmMixEntry {
  std::string type;
  double weight = 1.0;
};

// Uniform over the standard shapes with extra weight on the small ones.
inline std::vector<VmMixEntry> default_vm_mix() {
  return {{"large", 8.0},   {"xlarge", 6.0},   {"2xlarge", 3.0},
          {"4xlarge", 2.0}, {"8xlarge", 1.0},  {"16xlarge", 0.4},
          {"22xlarge", 0.1}};
}

struct GeneratorConfig {
  int pm_count = 8;
  std::vector<PmProfile> pm_profiles = {{88, 256, 1.0}};
  std::vector<VmMixEntry> vm_mix = default_vm_mix();
  double workload_level = 0.6;      // target used-CPU fraction
  double workload_tolerance = 0.05; // realized level stays within +- this
  double affinity_ratio = 0.0;      // expected fraction of conflicting pairs
  bool multi_resource = false;      // widen cpu:mem of some VMs up to 1:8
  std::uint64_t seed = 0;
};

// Synthesizes a cluster: PMs drawn from the profiles, VM arrivals drawn
// from the mix until the target CPU workload is reached, anti-affinity
// pairs sampled at the requested ratio, and everything placed through
// best-fit initial scheduling. Deterministic under the seed.
inline ClusterState generate_cluster(const GeneratorConfig& cfg) {
  if (cfg.pm_count <= 0) throw InvalidParameter("pm_count must be positive");
  if (cfg.workload_level <= 0.0 || cfg.workload_level >= 1.0)
    throw InvalidParameter("workload_level must lie in (0, 1)");
  if (cfg.affinity_ratio < 0.0 || cfg.affinity_ratio >= 1.0)
    throw InvalidParameter("affinity_ratio must lie in [0, 1)");
  if (cfg.pm_profiles.empty() || cfg.vm_mix.empty())
    throw InvalidParameter("profiles and vm mix must be non-empty");

  Rng rng = make_rng(cfg.seed);

  auto weighted_pick = [&rng](const std::vector<double>& weights) {
    double total = 0;
    for (double w : weights) total += w;
    double u = uniform_real(rng) * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      u -= weights[i];
      if (u < 0) return i;
    }
    return weights.size() - 1;
  };

  std::vector<PhysicalMachine> pms(cfg.pm_count);
  std::vector<double> profile_weights;
  for (const auto& p : cfg.pm_profiles) profile_weights.push_back(p.weight);
  long long capacity_cpu = 0;
  for (int i = 0; i < cfg.pm_count; ++i) {
    const PmProfile& prof = cfg.pm_profiles[weighted_pick(profile_weights)];
    pms[i].id = i;
    for (int j = 0; j < 2; ++j)
      pms[i].numas[j] = {prof.cpu / 2, prof.mem / 2, 0, 0};
    capacity_cpu += (prof.cpu / 2) * 2;
  }

  const double target_used = cfg.workload_level * static_cast<double>(capacity_cpu);
  const double max_used =
      (cfg.workload_level + cfg.workload_tolerance) * static_cast<double>(capacity_cpu);

  std::vector<double> mix_weights;
  for (const auto& m : cfg.vm_mix) mix_weights.push_back(m.weight);

  // VM arrivals are placed as they are drawn, mirroring production initial
  // scheduling; a draw that cannot be placed is resampled.
  BestFitScheduler sched(std::move(pms));
  std::vector<VirtualMachine> accepted;  // for pairing new conflicts
  long long used = 0;
  int next_id = 0;
  int dry_draws = 0;
  while (static_cast<double>(used) < target_used && dry_draws <= 256) {
    const VmMixEntry& entry = cfg.vm_mix[weighted_pick(mix_weights)];
    VirtualMachine v = make_typed_vm(next_id, entry.type);
    if (cfg.multi_resource && v.numa_count == 1 && uniform_real(rng) < 0.25) {
      // Memory-hungry request: stretch the ratio to 1:4 or 1:8.
      v.mem = v.cpu * (uniform_index(rng, 2) == 0 ? 4 : 8);
      v.type.clear();
    }
    if (static_cast<double>(used + v.cpu) > max_used) {
      ++dry_draws;
      continue;
    }
    if (cfg.affinity_ratio > 0.0) {
      for (auto& other : accepted)
        if (uniform_real(rng) < cfg.affinity_ratio)
          v.affinity_conflicts.push_back(other.id);
      std::sort(v.affinity_conflicts.begin(), v.affinity_conflicts.end());
    }
    if (!sched.try_place(v)) {
      ++dry_draws;
      continue;
    }
    dry_draws = 0;
    used += v.cpu;
    accepted.push_back(std::move(v));
    ++next_id;
  }

  if (static_cast<double>(used) <
      (cfg.workload_level - cfg.workload_tolerance) *
          static_cast<double>(capacity_cpu))
    throw GenerationError(
        "cannot reach workload level " + std::to_string(cfg.workload_level) +
        ": demand exceeds what the numa capacities can host");

  ClusterState state = std::move(sched).finish();
  // Mirror conflicts onto both members of each pair.
  std::vector<VirtualMachine> vms = state.vms();
  std::vector<Placement> placements = state.placements();
  std::vector<PhysicalMachine> fresh(state.pms());
  for (auto& p : fresh) {
    p.hosted.clear();
    for (int j = 0; j < 2; ++j) {
      p.numas[j].free_cpu = p.numas[j].capacity_cpu;
      p.numas[j].free_mem = p.numas[j].capacity_mem;
    }
  }
  std::unordered_map<VmId, std::size_t> index;
  for (std::size_t i = 0; i < vms.size(); ++i) index[vms[i].id] = i;
  for (const auto& v : vms)
    for (VmId other : v.affinity_conflicts) {
      auto& peer = vms[index.at(other)];
      if (!peer.conflicts_with(v.id)) {
        peer.affinity_conflicts.insert(
            std::lower_bound(peer.affinity_conflicts.begin(),
                             peer.affinity_conflicts.end(), v.id),
            v.id);
      }
    }
  return ClusterState(std::move(fresh), std::move(vms), std::move(placements));
}

// Seed-deterministic disjoint split by the largest-remainder method, so
// ratios that describe exact sizes are honored exactly.
inline std::array<std::vector<std::size_t>, 3> split_indices(
    std::size_t count, const std::array<double, 3>& ratios,
    std::uint64_t seed) {
  if (count == 0) throw InvalidParameter("cannot split an empty dataset");
  double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9)
    throw InvalidParameter("split ratios must sum to 1");

  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> remainders{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    double exact = ratios[i] * static_cast<double>(count);
    sizes[i] = static_cast<std::size_t>(exact);
    remainders[i] = exact - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  while (assigned < count) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (remainders[i] > remainders[best]) best = i;
    ++sizes[best];
    remainders[best] = -1.0;
    ++assigned;
  }

  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  Rng rng = make_rng(seed);
  shuffle_vec(order, rng);

  std::array<std::vector<std::size_t>, 3> out;
  std::size_t at = 0;
  for (int i = 0; i < 3; ++i) {
    out[i].assign(order.begin() + at, order.begin() + at + sizes[i]);
    at += sizes[i];
  }
  return out;
}

template <typename T>
std::array<std::vector<T>, 3> split_dataset(const std::vector<T>& items,
                                            const std::array<double, 3>& ratios,
                                            std::uint64_t seed) {
  auto idx = split_indices(items.size(), ratios, seed);
  std::array<std::vector<T>, 3> out;
  for (int i = 0; i < 3; ++i)
    for (std::size_t k : idx[i]) out[i].push_back(items[k]);
  return out;
}

}  // namespace vmr
