#include "vmr/objectives.hpp"

#include <gtest/gtest.h>

#include "vmr/sim/simulator.hpp"
#include "vmr/util/rng.hpp"
#include "support/instances.hpp"

namespace vmr {
namespace {

PhysicalMachine pm_with_free(int free0, int free1) {
  PhysicalMachine p;
  p.id = 0;
  p.numas[0] = {64, 256, free0, 256};
  p.numas[1] = {64, 256, free1, 256};
  return p;
}

TEST(RescaledFragmentSize, DirectEvaluation) {
  EXPECT_DOUBLE_EQ(rescaled_fragment_size(pm_with_free(12, 0), 16, 64),
                   12.0 / 64.0);
  EXPECT_DOUBLE_EQ(rescaled_fragment_size(pm_with_free(16, 32), 16, 64), 0.0);
  EXPECT_DOUBLE_EQ(rescaled_fragment_size(pm_with_free(15, 15), 16, 64),
                   30.0 / 64.0);
}

TEST(StepReward, WorkedExampleIsExactlyQuarter) {
  ClusterState before = test::worked_example();
  MigrationAction a = test::worked_example_fix();
  ClusterState after = before.apply_migration(a, NumaSlot::First);
  ObjectiveSpec spec = ObjectiveSpec::xcore(16);
  EXPECT_DOUBLE_EQ(step_reward(before, after, a, spec), 0.25);
  Frac exact = step_reward_exact(before, after, a, spec);
  EXPECT_EQ(exact, Frac(16, 64));
}

TEST(StepReward, AntisymmetricUnderUndo) {
  Rng rng = make_rng(101);
  ObjectiveSpec spec = ObjectiveSpec::xcore(16);
  int checked = 0;
  while (checked < 200) {
    ClusterState s = test::random_cluster(rng, {.pm_count = 4, .vm_count = 8});
    int vi = static_cast<int>(uniform_index(rng, s.vm_count()));
    int pi = static_cast<int>(uniform_index(rng, s.pm_count()));
    const VirtualMachine& v = s.vm_at(vi);
    const Placement cur = s.placement_of(v.id);
    NumaSlot slot = v.numa_count == 2 ? NumaSlot::Both : NumaSlot::First;
    MigrationAction fwd{v.id, s.pm_at(pi).id};
    if (s.migration_infeasibility(fwd, slot)) continue;
    ClusterState mid = s.apply_migration(fwd, slot);
    MigrationAction bwd{v.id, cur.pm};
    ClusterState back = mid.apply_migration(bwd, cur.slot);
    double r_fwd = step_reward(s, mid, fwd, spec);
    double r_bwd = step_reward(mid, back, bwd, spec);
    EXPECT_DOUBLE_EQ(r_fwd, -r_bwd);
    ++checked;
  }
}

TEST(StepReward, BoundedRangeForDefaultObjective) {
  Rng rng = make_rng(103);
  ObjectiveSpec spec = ObjectiveSpec::xcore(16);
  int checked = 0;
  while (checked < 500) {
    ClusterState s = test::random_cluster(rng, {.pm_count = 4, .vm_count = 8});
    int vi = static_cast<int>(uniform_index(rng, s.vm_count()));
    int pi = static_cast<int>(uniform_index(rng, s.pm_count()));
    const VirtualMachine& v = s.vm_at(vi);
    NumaSlot slot = v.numa_count == 2 ? NumaSlot::Both : NumaSlot::Second;
    MigrationAction a{v.id, s.pm_at(pi).id};
    if (s.migration_infeasibility(a, slot)) continue;
    ClusterState after = s.apply_migration(a, slot);
    double r = step_reward(s, after, a, spec);
    EXPECT_GE(r, -0.9375);
    EXPECT_LE(r, 0.9375);
    ++checked;
  }
}

TEST(StepReward, InconsistentStatesAreRejected) {
  ClusterState before = test::worked_example();
  MigrationAction a = test::worked_example_fix();
  // "after" state that does not reflect the action.
  EXPECT_THROW(step_reward(before, before, a, ObjectiveSpec::xcore(16)),
               ContractError);
}

TEST(GoalReward, PenaltyAndBonusBranches) {
  EXPECT_DOUBLE_EQ(goal_reward(0.25, 0.40, 0.30), -0.75);
  EXPECT_DOUBLE_EQ(goal_reward(0.25, 0.30, 0.30), 10.25);  // boundary: bonus
  EXPECT_DOUBLE_EQ(goal_reward(0.0, 0.0, 0.5), 10.0);
}

TEST(MixedObjective, ReportedOperatingPoint) {
  // At lambda = 0.4 with component rates 0.3413 and 0.6960 the blend is
  // 0.4832 (to report precision).
  EXPECT_NEAR(mixed_objective(0.3413, 0.6960, 0.4), 0.4832, 5e-5);
}

TEST(MixedObjective, EndpointsAndAffinity) {
  EXPECT_DOUBLE_EQ(mixed_objective(0.3, 0.7, 0.0), 0.3);
  EXPECT_DOUBLE_EQ(mixed_objective(0.3, 0.7, 1.0), 0.7);
  EXPECT_THROW(mixed_objective(0.3, 0.7, 1.5), InvalidParameter);
  // Affine in lambda, monotone in each argument.
  Rng rng = make_rng(107);
  for (int i = 0; i < 100; ++i) {
    double a = uniform_real(rng), b = uniform_real(rng);
    double l1 = uniform_real(rng), l2 = uniform_real(rng);
    double mid = mixed_objective(a, b, 0.5 * (l1 + l2));
    double avg = 0.5 * (mixed_objective(a, b, l1) + mixed_objective(a, b, l2));
    EXPECT_NEAR(mid, avg, 1e-12);
    EXPECT_LE(mixed_objective(a, b, l1),
              mixed_objective(a + 0.1, b, l1) + 1e-12);
    EXPECT_LE(mixed_objective(a, b, l1),
              mixed_objective(a, b + 0.1, l1) + 1e-12);
  }
}

TEST(MemoryFragmentRate, DirectModuloArithmetic) {
  std::vector<PhysicalMachine> pms(1);
  pms[0].id = 0;
  pms[0].numas[0] = {64, 96, 0, 0};
  pms[0].numas[1] = {0, 0, 0, 0};
  ClusterState s(std::move(pms), {}, {});
  EXPECT_NEAR(memory_fragment_rate(s, 64), 32.0 / 96.0, 1e-12);
}

TEST(MemoryFragmentRate, ZeroWhenAllMultiples) {
  std::vector<PhysicalMachine> pms(1);
  pms[0].id = 0;
  pms[0].numas[0] = {64, 128, 0, 0};
  pms[0].numas[1] = {64, 64, 0, 0};
  ClusterState s(std::move(pms), {}, {});
  EXPECT_DOUBLE_EQ(memory_fragment_rate(s, 64), 0.0);
}

TEST(MixedObjective, LambdaOneReducesToMemoryRate) {
  ClusterState s = test::worked_example();
  ObjectiveSpec mix = ObjectiveSpec::mixed(1.0, ObjectiveSpec::xcore(16),
                                           ObjectiveSpec::mem_frag(64));
  EXPECT_DOUBLE_EQ(evaluate_objective(s, mix), memory_fragment_rate(s, 64));
}

// Telescoping: the sum of exact step rewards over an episode equals the
// total fragment drop over the scaling constant, in exact arithmetic.
TEST(StepReward, TelescopesOverEpisodes) {
  Rng rng = make_rng(109);
  ObjectiveSpec spec = ObjectiveSpec::xcore(16);
  for (int episode = 0; episode < 100; ++episode) {
    ClusterState s = test::random_cluster(rng, {.pm_count = 5, .vm_count = 10});
    const long long initial = total_fragments(s, 16);
    Frac sum;
    for (int steps = 0; steps < 6; ++steps) {
      // Random legal migration, if any.
      bool moved = false;
      for (int t = 0; t < 30 && !moved; ++t) {
        int vi = static_cast<int>(uniform_index(rng, s.vm_count()));
        int pi = static_cast<int>(uniform_index(rng, s.pm_count()));
        const VirtualMachine& v = s.vm_at(vi);
        NumaSlot slot = v.numa_count == 2
                            ? NumaSlot::Both
                            : (uniform_index(rng, 2) == 0 ? NumaSlot::First
                                                          : NumaSlot::Second);
        MigrationAction a{v.id, s.pm_at(pi).id};
        if (s.migration_infeasibility(a, slot)) continue;
        ClusterState after = s.apply_migration(a, slot);
        sum += step_reward_exact(s, after, a, spec);
        s = std::move(after);
        moved = true;
      }
    }
    EXPECT_EQ(sum, Frac(initial - total_fragments(s, 16), 64));
  }
}

TEST(ObjectiveSpec, ParseRoundTrips) {
  auto x = ObjectiveSpec::parse("xcore:16");
  EXPECT_EQ(x.kind, ObjectiveSpec::Kind::XCoreFr);
  EXPECT_EQ(x.x, 16);
  auto m = ObjectiveSpec::parse("mem:64");
  EXPECT_EQ(m.kind, ObjectiveSpec::Kind::MemFragFr);
  auto mix = ObjectiveSpec::parse("mixed:0.4,xcore:16,xcore:64");
  EXPECT_EQ(mix.kind, ObjectiveSpec::Kind::Mixed);
  EXPECT_DOUBLE_EQ(mix.lambda, 0.4);
  EXPECT_EQ(mix.b->x, 64);
  auto goal = ObjectiveSpec::parse("goal:0.3,xcore:16");
  EXPECT_EQ(goal.kind, ObjectiveSpec::Kind::MinMnlToGoal);
  EXPECT_DOUBLE_EQ(goal.fr_goal, 0.3);
  EXPECT_THROW(ObjectiveSpec::parse("nonsense"), ParseError);
  EXPECT_THROW(ObjectiveSpec::parse("mixed:0.4"), ParseError);
}

}  // namespace
}  // namespace vmr
