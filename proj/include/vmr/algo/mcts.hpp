#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "vmr/algo/baselines.hpp"
#include "vmr/core/cluster.hpp"
#include "vmr/objectives.hpp"
#include "vmr/sim/simulator.hpp"
#include "vmr/util/rng.hpp"

namespace vmr {

struct MctsConfig {
  int budget = 1000;                 // simulations per committed step
  double exploration_c = 1.4142135623730951;
  std::uint64_t seed = 0;
};

namespace detail {

struct MctsNode {
  ClusterState state;
  int depth = 0;  // migrations already committed on this path
  std::vector<MigrationAction> untried;  // shuffled once at creation
  std::vector<std::unique_ptr<MctsNode>> children;
  std::vector<MigrationAction> child_actions;
  double total_value = 0.0;
  long long visits = 0;

  bool terminal(int mnl) const {
    return depth >= mnl || (untried.empty() && children.empty());
  }
};

inline std::vector<MigrationAction> legal_actions(const ClusterState& s,
                                                  const ObjectiveSpec& obj) {
  std::vector<MigrationAction> out;
  for (const auto& v : s.vms())
    for (const auto& p : s.pms())
      if (pm_is_legal(s, v.id, p.id, obj)) out.push_back({v.id, p.id});
  return out;
}

// Completes the remaining steps greedily (best single improvement per
// step) and returns the resulting objective value.
inline double greedy_completion(ClusterState state, int steps,
                                const ObjectiveSpec& obj) {
  ObjectiveDelta delta(state, obj);
  for (int t = 0; t < steps; ++t) {
    double current = delta.value();
    double best_after = current;
    MigrationAction best{-1, -1};
    NumaSlot best_slot = NumaSlot::First;
    for (const auto& v : state.vms()) {
      for (const auto& p : state.pms()) {
        auto slot = choose_dest_slot(state, v.id, p.id, obj);
        if (!slot) continue;
        const double after = delta.value_if_migrated(state, v.id, p.id, *slot);
        if (after < best_after - kImprovementEps) {
          best_after = after;
          best = {v.id, p.id};
          best_slot = *slot;
        }
      }
    }
    if (best.vm < 0) break;
    state.apply_migration_in_place(best, best_slot);
    delta.rebuild(state);
  }
  return evaluate_objective(state, obj);
}

}  // namespace detail

// Plain UCT over (vm, pm) actions: at each committed step, run `budget`
// simulations from the current state, roll unexplored leaves out with the
// greedy completion, and commit the most-visited child. Rollout value is
// the objective reduction relative to the episode's initial state.
inline MigrationPlan mcts_reschedule(const ClusterState& mapping, int mnl,
                                     const MctsConfig& cfg,
                                     const ObjectiveSpec& objective =
                                         ObjectiveSpec::xcore(16)) {
  if (cfg.budget <= 0) throw InvalidParameter("budget must be positive");
  Episode ep = Episode::reset(mapping, mnl, objective);
  Rng rng = make_rng(cfg.seed);
  const double initial_value = evaluate_objective(mapping, objective);

  while (!ep.done()) {
    auto root = std::make_unique<detail::MctsNode>();
    root->state = ep.state();
    root->depth = ep.step_index();
    root->untried = detail::legal_actions(root->state, objective);
    if (root->untried.empty()) break;
    shuffle_vec(root->untried, rng);

    for (int sim = 0; sim < cfg.budget; ++sim) {
      // Selection.
      detail::MctsNode* node = root.get();
      std::vector<detail::MctsNode*> path{node};
      while (node->untried.empty() && !node->children.empty()) {
        double best_score = -1e300;
        detail::MctsNode* best_child = nullptr;
        for (const auto& child : node->children) {
          const double mean = child->total_value / child->visits;
          const double score =
              mean + cfg.exploration_c *
                         std::sqrt(std::log(static_cast<double>(node->visits)) /
                                   static_cast<double>(child->visits));
          if (score > best_score) {
            best_score = score;
            best_child = child.get();
          }
        }
        node = best_child;
        path.push_back(node);
      }

      // Expansion.
      if (!node->untried.empty() && node->depth < mnl) {
        MigrationAction a = node->untried.back();
        node->untried.pop_back();
        auto child = std::make_unique<detail::MctsNode>();
        auto slot = choose_dest_slot(node->state, a.vm, a.dest_pm, objective);
        child->state = node->state.apply_migration(a, *slot);
        child->depth = node->depth + 1;
        if (child->depth < mnl) {
          child->untried = detail::legal_actions(child->state, objective);
          shuffle_vec(child->untried, rng);
        }
        node->child_actions.push_back(a);
        node->children.push_back(std::move(child));
        node = node->children.back().get();
        path.push_back(node);
      }

      // Rollout and backpropagation.
      const double final_value = detail::greedy_completion(
          node->state, mnl - node->depth, objective);
      const double value = initial_value - final_value;
      for (detail::MctsNode* n : path) {
        n->total_value += value;
        n->visits += 1;
      }
    }

    // Commit the most-visited child; ties by mean value then action order.
    int best = -1;
    for (std::size_t i = 0; i < root->children.size(); ++i) {
      if (best < 0) {
        best = static_cast<int>(i);
        continue;
      }
      const auto& c = *root->children[i];
      const auto& b = *root->children[best];
      const double cm = c.total_value / c.visits;
      const double bm = b.total_value / b.visits;
      if (c.visits > b.visits || (c.visits == b.visits && cm > bm))
        best = static_cast<int>(i);
    }
    if (best < 0) break;
    ep.step(root->child_actions[best]);
  }
  return ep.plan();
}

}  // namespace vmr
