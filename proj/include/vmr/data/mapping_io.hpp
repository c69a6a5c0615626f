#pragma once

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vmr/core/cluster.hpp"
#include "vmr/core/vm_types.hpp"

namespace vmr {

inline constexpr int kMappingSchemaVersion = 1;

// Mapping file schema (JSON):
//   {
//     "schema_version": 1,
//     "pms": [{"id": 0, "numas": [{"cpu": 44, "mem": 128}, ...]}, ...],
//     "vms": [{"id": 0, "type": "4xlarge",
//              "placement": {"pm": 0, "numa": 0 | 1 | "both"},
//              "affinity_conflicts": [3, 7]},
//             {"id": 1, "cpu": 12, "mem": 48, "numa_count": 1, ...}]
//   }
// Typed VMs take their shape from the standard table; custom VMs spell
// out cpu/mem/numa_count explicitly.

inline nlohmann::json mapping_to_json(const ClusterState& state) {
  nlohmann::json j;
  j["schema_version"] = kMappingSchemaVersion;
  j["pms"] = nlohmann::json::array();
  for (const auto& p : state.pms()) {
    nlohmann::json numas = nlohmann::json::array();
    for (int n = 0; n < 2; ++n)
      numas.push_back({{"cpu", p.numas[n].capacity_cpu},
                       {"mem", p.numas[n].capacity_mem}});
    j["pms"].push_back({{"id", p.id}, {"numas", numas}});
  }
  j["vms"] = nlohmann::json::array();
  for (int i = 0; i < state.vm_count(); ++i) {
    const VirtualMachine& v = state.vm_at(i);
    const Placement& pl = state.placement_at(i);
    nlohmann::json jv;
    jv["id"] = v.id;
    if (!v.type.empty() && find_vm_type(v.type)) {
      jv["type"] = v.type;
    } else {
      jv["cpu"] = v.cpu;
      jv["mem"] = v.mem;
      jv["numa_count"] = v.numa_count;
    }
    jv["placement"]["pm"] = pl.pm;
    if (pl.slot == NumaSlot::Both)
      jv["placement"]["numa"] = "both";
    else
      jv["placement"]["numa"] = static_cast<int>(pl.slot);
    if (!v.affinity_conflicts.empty())
      jv["affinity_conflicts"] = v.affinity_conflicts;
    j["vms"].push_back(std::move(jv));
  }
  return j;
}

inline ClusterState mapping_from_json(const nlohmann::json& j) {
  auto context = [](const std::string& where, const std::string& why) {
    return ParseError("mapping " + where + ": " + why);
  };
  if (!j.is_object()) throw context("root", "expected an object");
  if (!j.contains("schema_version") || !j["schema_version"].is_number_integer())
    throw context("schema_version", "missing or not an integer");
  const int version = j["schema_version"].get<int>();
  if (version != kMappingSchemaVersion)
    throw context("schema_version",
                  "unsupported version " + std::to_string(version));
  if (!j.contains("pms") || !j["pms"].is_array())
    throw context("pms", "missing or not an array");
  if (!j.contains("vms") || !j["vms"].is_array())
    throw context("vms", "missing or not an array");

  std::vector<PhysicalMachine> pms;
  for (std::size_t i = 0; i < j["pms"].size(); ++i) {
    const auto& jp = j["pms"][i];
    const std::string where = "pms[" + std::to_string(i) + "]";
    if (!jp.is_object() || !jp.contains("id") || !jp.contains("numas"))
      throw context(where, "expected {id, numas}");
    if (!jp["numas"].is_array() || jp["numas"].size() != 2)
      throw context(where, "a pm has exactly two numas");
    PhysicalMachine p;
    p.id = jp["id"].get<PmId>();
    for (int n = 0; n < 2; ++n) {
      const auto& jn = jp["numas"][n];
      if (!jn.contains("cpu") || !jn.contains("mem"))
        throw context(where + ".numas", "expected {cpu, mem}");
      p.numas[n].capacity_cpu = jn["cpu"].get<int>();
      p.numas[n].capacity_mem = jn["mem"].get<int>();
    }
    pms.push_back(std::move(p));
  }

  std::vector<VirtualMachine> vms;
  std::vector<Placement> placements;
  for (std::size_t i = 0; i < j["vms"].size(); ++i) {
    const auto& jv = j["vms"][i];
    const std::string where = "vms[" + std::to_string(i) + "]";
    if (!jv.is_object() || !jv.contains("id") || !jv.contains("placement"))
      throw context(where, "expected {id, placement, type|cpu/mem/numa_count}");
    VirtualMachine v;
    v.id = jv["id"].get<VmId>();
    if (jv.contains("type")) {
      auto spec = find_vm_type(jv["type"].get<std::string>());
      if (!spec)
        throw context(where + ".type",
                      "unknown type '" + jv["type"].get<std::string>() + "'");
      v.cpu = spec->cpu;
      v.mem = spec->mem;
      v.numa_count = spec->numa_count;
      v.type = jv["type"].get<std::string>();
      // Explicit fields may widen memory (multi-resource shapes).
      if (jv.contains("mem")) v.mem = jv["mem"].get<int>();
    } else {
      if (!jv.contains("cpu") || !jv.contains("mem") ||
          !jv.contains("numa_count"))
        throw context(where, "custom vm needs cpu, mem and numa_count");
      v.cpu = jv["cpu"].get<int>();
      v.mem = jv["mem"].get<int>();
      v.numa_count = jv["numa_count"].get<int>();
    }
    if (jv.contains("affinity_conflicts")) {
      v.affinity_conflicts =
          jv["affinity_conflicts"].get<std::vector<VmId>>();
      std::sort(v.affinity_conflicts.begin(), v.affinity_conflicts.end());
    }
    const auto& jpl = jv["placement"];
    if (!jpl.contains("pm") || !jpl.contains("numa"))
      throw context(where + ".placement", "expected {pm, numa}");
    Placement pl;
    pl.pm = jpl["pm"].get<PmId>();
    if (jpl["numa"].is_string()) {
      if (jpl["numa"].get<std::string>() != "both")
        throw context(where + ".placement.numa", "expected 0, 1 or \"both\"");
      pl.slot = NumaSlot::Both;
    } else {
      const int n = jpl["numa"].get<int>();
      if (n != 0 && n != 1)
        throw context(where + ".placement.numa", "expected 0, 1 or \"both\"");
      pl.slot = n == 0 ? NumaSlot::First : NumaSlot::Second;
    }
    vms.push_back(std::move(v));
    placements.push_back(pl);
  }

  // Construction runs full semantic validation and reports every violation.
  return ClusterState(std::move(pms), std::move(vms), std::move(placements));
}

inline void save_mapping(const ClusterState& state, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << mapping_to_json(state).dump(2) << "\n";
}

inline ClusterState load_mapping(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  return mapping_from_json(j);
}

}  // namespace vmr
