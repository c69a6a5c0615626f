#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "vmr/core/cluster.hpp"

namespace vmr {

// Standard VM shapes. CPU:memory ratio is 1:2; sizes at or above 8xlarge
// span both NUMAs.
struct VmTypeSpec {
  std::string_view name;
  int cpu;
  int mem;
  int numa_count;
};

inline constexpr std::array<VmTypeSpec, 7> kVmTypes = {{
    {"large", 2, 4, 1},
    {"xlarge", 4, 8, 1},
    {"2xlarge", 8, 16, 1},
    {"4xlarge", 16, 32, 1},
    {"8xlarge", 32, 64, 2},
    {"16xlarge", 64, 128, 2},
    {"22xlarge", 88, 176, 2},
}};

inline std::optional<VmTypeSpec> find_vm_type(std::string_view name) {
  for (const auto& t : kVmTypes)
    if (t.name == name) return t;
  return std::nullopt;
}

// A VM of a standard type with empty affinity.
inline VirtualMachine make_typed_vm(VmId id, std::string_view type) {
  auto spec = find_vm_type(type);
  if (!spec) throw InvalidParameter("unknown vm type: " + std::string(type));
  VirtualMachine v;
  v.id = id;
  v.cpu = spec->cpu;
  v.mem = spec->mem;
  v.numa_count = spec->numa_count;
  v.type = std::string(type);
  return v;
}

}  // namespace vmr
