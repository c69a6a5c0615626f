#pragma once

#include <cstdio>
#include <memory>
#include <string>

#include "vmr/core/cluster.hpp"
#include "vmr/util/fraction.hpp"

namespace vmr {

// What a rescheduling run minimizes. XCoreFr counts CPU fragments against
// an x-core grid, MemFragFr counts memory fragments against a block size,
// Mixed blends two sub-objectives, and MinMnlToGoal wraps a base objective
// with a target rate that ends the episode early when reached.
struct ObjectiveSpec {
  enum class Kind { XCoreFr, MemFragFr, Mixed, MinMnlToGoal };

  Kind kind = Kind::XCoreFr;
  int x = 16;        // XCoreFr grid size (cores)
  int block_gb = 64; // MemFragFr block size (GB)
  int c = 64;        // reward scaling constant
  double lambda = 0.0;
  double fr_goal = 0.0;
  std::shared_ptr<const ObjectiveSpec> a;     // Mixed: weight (1 - lambda)
  std::shared_ptr<const ObjectiveSpec> b;     // Mixed: weight lambda
  std::shared_ptr<const ObjectiveSpec> base;  // MinMnlToGoal wrapped objective

  static ObjectiveSpec xcore(int x, int c = 64) {
    if (x <= 0) throw InvalidParameter("x must be positive");
    if (c <= 0) throw InvalidParameter("scaling constant must be positive");
    ObjectiveSpec s;
    s.kind = Kind::XCoreFr;
    s.x = x;
    s.c = c;
    return s;
  }

  static ObjectiveSpec mem_frag(int block_gb, int c = 64) {
    if (block_gb <= 0) throw InvalidParameter("block size must be positive");
    ObjectiveSpec s;
    s.kind = Kind::MemFragFr;
    s.block_gb = block_gb;
    s.c = c;
    return s;
  }

  static ObjectiveSpec mixed(double lambda, ObjectiveSpec low,
                             ObjectiveSpec high) {
    if (lambda < 0.0 || lambda > 1.0)
      throw InvalidParameter("lambda must lie in [0, 1]");
    ObjectiveSpec s;
    s.kind = Kind::Mixed;
    s.lambda = lambda;
    s.c = low.c;
    s.a = std::make_shared<ObjectiveSpec>(std::move(low));
    s.b = std::make_shared<ObjectiveSpec>(std::move(high));
    return s;
  }

  static ObjectiveSpec min_mnl_to_goal(double fr_goal, ObjectiveSpec wrapped) {
    if (fr_goal < 0.0 || fr_goal > 1.0)
      throw InvalidParameter("goal rate must lie in [0, 1]");
    ObjectiveSpec s;
    s.kind = Kind::MinMnlToGoal;
    s.fr_goal = fr_goal;
    s.c = wrapped.c;
    s.base = std::make_shared<ObjectiveSpec>(std::move(wrapped));
    return s;
  }

  std::string to_string() const {
    switch (kind) {
      case Kind::XCoreFr: return "xcore:" + std::to_string(x);
      case Kind::MemFragFr: return "mem:" + std::to_string(block_gb);
      case Kind::Mixed: {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%g", lambda);
        return "mixed:" + std::string(buf) + "," + a->to_string() + "," +
               b->to_string();
      }
      case Kind::MinMnlToGoal: {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%g", fr_goal);
        return "goal:" + std::string(buf) + "," + base->to_string();
      }
    }
    return "?";
  }

  // Shorthand grammar: "xcore:16", "mem:64",
  // "mixed:0.4,xcore:16,xcore:64", "goal:0.3,xcore:16".
  static ObjectiveSpec parse(const std::string& text);
};

// Convex combination per the mixed objective: lambda weighs fr_b.
inline double mixed_objective(double fr_a, double fr_b, double lambda) {
  if (lambda < 0.0 || lambda > 1.0)
    throw InvalidParameter("lambda must lie in [0, 1]");
  return lambda * fr_b + (1.0 - lambda) * fr_a;
}

// Final objective value of a state (lower is better).
inline double evaluate_objective(const ClusterState& state,
                                 const ObjectiveSpec& spec) {
  switch (spec.kind) {
    case ObjectiveSpec::Kind::XCoreFr:
      return fragment_rate(state, spec.x);
    case ObjectiveSpec::Kind::MemFragFr:
      return memory_fragment_rate(state, spec.block_gb);
    case ObjectiveSpec::Kind::Mixed:
      return mixed_objective(evaluate_objective(state, *spec.a),
                             evaluate_objective(state, *spec.b), spec.lambda);
    case ObjectiveSpec::Kind::MinMnlToGoal:
      return evaluate_objective(state, *spec.base);
  }
  throw InvalidParameter("bad objective kind");
}

// The rate the MinMnlToGoal goal is compared against (the base objective's
// value; for other kinds, the objective itself).
inline double goal_rate(const ClusterState& state, const ObjectiveSpec& spec) {
  if (spec.kind == ObjectiveSpec::Kind::MinMnlToGoal)
    return evaluate_objective(state, *spec.base);
  return evaluate_objective(state, spec);
}

// Fragments of one PM summed over both NUMAs, rescaled by c.
inline double rescaled_fragment_size(const PhysicalMachine& pm, int x, int c) {
  if (c <= 0) throw InvalidParameter("scaling constant must be positive");
  return static_cast<double>(fragment_of_numa(pm.numas[0].free_cpu, x) +
                             fragment_of_numa(pm.numas[1].free_cpu, x)) /
         static_cast<double>(c);
}

namespace detail {

inline long long pm_fragments(const PhysicalMachine& pm, int x) {
  return fragment_of_numa(pm.numas[0].free_cpu, x) +
         fragment_of_numa(pm.numas[1].free_cpu, x);
}

inline long long pm_mem_fragments(const PhysicalMachine& pm, int block) {
  return fragment_of_numa(pm.numas[0].free_mem, block) +
         fragment_of_numa(pm.numas[1].free_mem, block);
}

// Exact fragment drop on the PMs touched by the action (the source and
// destination are deduplicated so same-PM moves are not double counted).
template <typename PerPm>
long long touched_fragment_drop(const ClusterState& before,
                                const ClusterState& after,
                                const MigrationAction& action, PerPm&& frag) {
  const PmId src = before.placement_of(action.vm).pm;
  const PmId dst = action.dest_pm;
  long long drop =
      frag(before.pm(src)) - frag(after.pm(src));
  if (dst != src) drop += frag(before.pm(dst)) - frag(after.pm(dst));
  return drop;
}

inline void check_step_consistency(const ClusterState& before,
                                   const ClusterState& after,
                                   const MigrationAction& action) {
  if (before.vm_count() != after.vm_count() ||
      before.pm_count() != after.pm_count())
    throw ContractError("before/after states have different shapes");
  if (!after.has_vm(action.vm) || !after.has_pm(action.dest_pm))
    throw ContractError("action references ids missing from the states");
  if (after.placement_of(action.vm).pm != action.dest_pm)
    throw ContractError("after-state does not place the vm on the action's "
                        "destination pm");
  const auto& vb = before.vm(action.vm);
  const auto& va = after.vm(action.vm);
  if (vb.cpu != va.cpu || vb.mem != va.mem)
    throw ContractError("vm shape changed between states");
}

}  // namespace detail

// Exact per-step reward for the fragment objectives: the fragment drop on
// the touched PMs over the scaling constant. Mixed and goal variants are
// composed from these exact parts at the call sites below.
inline Frac step_reward_exact(const ClusterState& before,
                              const ClusterState& after,
                              const MigrationAction& action,
                              const ObjectiveSpec& spec) {
  switch (spec.kind) {
    case ObjectiveSpec::Kind::XCoreFr:
      return Frac(detail::touched_fragment_drop(
                      before, after, action,
                      [&](const PhysicalMachine& p) {
                        return detail::pm_fragments(p, spec.x);
                      }),
                  spec.c);
    case ObjectiveSpec::Kind::MemFragFr:
      return Frac(detail::touched_fragment_drop(
                      before, after, action,
                      [&](const PhysicalMachine& p) {
                        return detail::pm_mem_fragments(p, spec.block_gb);
                      }),
                  spec.c);
    default:
      throw InvalidParameter("exact rewards exist only for the fragment "
                             "objectives");
  }
}

// Reward shaping for the goal objective: a -1 penalty while the rate is
// above goal, a +10 bonus once it reaches the goal (boundary included).
inline double goal_reward(double step_r, double current_fr, double fr_goal) {
  return (current_fr > fr_goal) ? -1.0 + step_r : 10.0 + step_r;
}

// Per-step reward under any objective. `after` must be the result of
// applying `action` to `before` (verified structurally).
inline double step_reward(const ClusterState& before, const ClusterState& after,
                          const MigrationAction& action,
                          const ObjectiveSpec& spec) {
  detail::check_step_consistency(before, after, action);
  switch (spec.kind) {
    case ObjectiveSpec::Kind::XCoreFr:
    case ObjectiveSpec::Kind::MemFragFr:
      return step_reward_exact(before, after, action, spec).value();
    case ObjectiveSpec::Kind::Mixed:
      // Per-component rewards mixed with the same weight as the objective.
      return mixed_objective(step_reward(before, after, action, *spec.a),
                             step_reward(before, after, action, *spec.b),
                             spec.lambda);
    case ObjectiveSpec::Kind::MinMnlToGoal:
      return goal_reward(step_reward(before, after, action, *spec.base),
                         goal_rate(after, spec), spec.fr_goal);
  }
  throw InvalidParameter("bad objective kind");
}

inline ObjectiveSpec ObjectiveSpec::parse(const std::string& text) {
  auto fail = [&](const std::string& why) -> ObjectiveSpec {
    throw ParseError("bad objective '" + text + "': " + why);
  };
  auto colon = text.find(':');
  const std::string head = text.substr(0, colon);
  const std::string rest =
      colon == std::string::npos ? "" : text.substr(colon + 1);
  try {
    if (head == "xcore" || head == "fr") {
      return ObjectiveSpec::xcore(std::stoi(rest.empty() ? "16" : rest));
    }
    if (head == "mem") {
      return ObjectiveSpec::mem_frag(std::stoi(rest.empty() ? "64" : rest));
    }
    if (head == "mixed") {
      auto c1 = rest.find(',');
      auto c2 = rest.find(',', c1 + 1);
      if (c1 == std::string::npos || c2 == std::string::npos)
        return fail("expected mixed:lambda,<a>,<b>");
      return ObjectiveSpec::mixed(std::stod(rest.substr(0, c1)),
                                  parse(rest.substr(c1 + 1, c2 - c1 - 1)),
                                  parse(rest.substr(c2 + 1)));
    }
    if (head == "goal") {
      auto c1 = rest.find(',');
      if (c1 == std::string::npos) return fail("expected goal:rate,<base>");
      return ObjectiveSpec::min_mnl_to_goal(std::stod(rest.substr(0, c1)),
                                            parse(rest.substr(c1 + 1)));
    }
  } catch (const std::invalid_argument&) {
    return fail("malformed number");
  } catch (const std::out_of_range&) {
    return fail("number out of range");
  }
  return fail("unknown objective kind");
}

}  // namespace vmr
