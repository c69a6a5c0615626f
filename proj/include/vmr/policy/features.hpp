#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <vector>

#include "vmr/core/cluster.hpp"

namespace vmr {

inline constexpr int kPmFeatureDim = 8;   // 4 per NUMA x 2
inline constexpr int kVmFeatureDim = 14;  // 6 own + the 8 source-PM features

// Min-max ranges fitted on the training distribution, plus the fragment
// grid the features are computed against. Stored inside checkpoints.
struct NormStats {
  int x = 16;
  std::array<double, kPmFeatureDim> pm_min{}, pm_max{};
  std::array<double, kVmFeatureDim> vm_min{}, vm_max{};

  template <typename It>
  static NormStats fit(It first, It last, int x);
};

namespace detail {

// Raw (un-normalized) per-NUMA PM features: remaining CPU, remaining
// memory, local fragment ratio, fragment size.
inline void raw_pm_features(const PhysicalMachine& pm, int x, double* out) {
  for (int j = 0; j < 2; ++j) {
    const int free_cpu = pm.numas[j].free_cpu;
    const int frag = free_cpu % x;
    out[4 * j + 0] = static_cast<double>(free_cpu);
    out[4 * j + 1] = static_cast<double>(pm.numas[j].free_mem);
    out[4 * j + 2] = free_cpu > 0 ? static_cast<double>(frag) /
                                        static_cast<double>(free_cpu)
                                  : 0.0;
    out[4 * j + 3] = static_cast<double>(frag);
  }
}

// Raw VM features: requested CPU and memory per NUMA slot (zeros pad the
// unoccupied slot of single-NUMA VMs), the fragment its own footprint
// leaves on the grid, then the hosting PM's 8 features.
inline void raw_vm_features(const VirtualMachine& vm, const Placement& pl,
                            const PhysicalMachine& host, int x, double* out) {
  std::fill(out, out + 6, 0.0);
  const double cpu = vm.cpu_per_numa();
  const double mem = vm.mem_per_numa();
  const double frag = static_cast<double>(vm.cpu_per_numa() % x);
  if (pl.slot == NumaSlot::Both) {
    out[0] = out[1] = cpu;
    out[2] = out[3] = mem;
    out[4] = out[5] = frag;
  } else {
    const int s = static_cast<int>(pl.slot);
    out[0 + s] = cpu;
    out[2 + s] = mem;
    out[4 + s] = frag;
  }
  raw_pm_features(host, x, out + 6);
}

}  // namespace detail

template <typename It>
NormStats NormStats::fit(It first, It last, int x) {
  NormStats st;
  st.x = x;
  st.pm_min.fill(1e300);
  st.pm_max.fill(-1e300);
  st.vm_min.fill(1e300);
  st.vm_max.fill(-1e300);
  double raw_pm[kPmFeatureDim];
  double raw_vm[kVmFeatureDim];
  for (It it = first; it != last; ++it) {
    const ClusterState& s = *it;
    for (const auto& pm : s.pms()) {
      detail::raw_pm_features(pm, x, raw_pm);
      for (int k = 0; k < kPmFeatureDim; ++k) {
        st.pm_min[k] = std::min(st.pm_min[k], raw_pm[k]);
        st.pm_max[k] = std::max(st.pm_max[k], raw_pm[k]);
      }
    }
    for (int i = 0; i < s.vm_count(); ++i) {
      const Placement& pl = s.placement_at(i);
      detail::raw_vm_features(s.vm_at(i), pl, s.pm(pl.pm), x, raw_vm);
      for (int k = 0; k < kVmFeatureDim; ++k) {
        st.vm_min[k] = std::min(st.vm_min[k], raw_vm[k]);
        st.vm_max[k] = std::max(st.vm_max[k], raw_vm[k]);
      }
    }
  }
  for (int k = 0; k < kPmFeatureDim; ++k)
    if (st.pm_min[k] > st.pm_max[k]) st.pm_min[k] = st.pm_max[k] = 0.0;
  for (int k = 0; k < kVmFeatureDim; ++k)
    if (st.vm_min[k] > st.vm_max[k]) st.vm_min[k] = st.vm_max[k] = 0.0;
  return st;
}

// Normalized state encoding: one row per PM, one row per VM, plus the
// VM -> PM tree association used by the local-attention stage.
template <typename T>
struct FeatureTensor {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  Mat pm;                  // N x 8, entries in [0, 1]
  Mat vm;                  // M x 14, entries in [0, 1]
  std::vector<int> tree;   // VM row -> PM row of its host
};

template <typename T>
FeatureTensor<T> encode_features(const ClusterState& state,
                                 const NormStats& norm) {
  FeatureTensor<T> f;
  const int n = state.pm_count();
  const int m = state.vm_count();
  f.pm.resize(n, kPmFeatureDim);
  f.vm.resize(m, kVmFeatureDim);
  f.tree.resize(m);

  auto squash = [](double v, double lo, double hi) {
    if (hi <= lo) return 0.0;
    return std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
  };

  double raw[kVmFeatureDim];
  for (int i = 0; i < n; ++i) {
    detail::raw_pm_features(state.pm_at(i), norm.x, raw);
    for (int k = 0; k < kPmFeatureDim; ++k)
      f.pm(i, k) = static_cast<T>(squash(raw[k], norm.pm_min[k], norm.pm_max[k]));
  }
  for (int i = 0; i < m; ++i) {
    const Placement& pl = state.placement_at(i);
    const int host = state.pm_index(pl.pm);
    detail::raw_vm_features(state.vm_at(i), pl, state.pm_at(host), norm.x, raw);
    for (int k = 0; k < kVmFeatureDim; ++k)
      f.vm(i, k) = static_cast<T>(squash(raw[k], norm.vm_min[k], norm.vm_max[k]));
    f.tree[i] = host;
  }
  return f;
}

}  // namespace vmr
