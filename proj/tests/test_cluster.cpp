#include "vmr/core/cluster.hpp"

#include <gtest/gtest.h>

#include "vmr/core/vm_types.hpp"
#include "vmr/util/rng.hpp"
#include "support/instances.hpp"

namespace vmr {
namespace {

TEST(FragmentOfNuma, MatchesModuloArithmetic) {
  EXPECT_EQ(fragment_of_numa(12, 16), 12);
  EXPECT_EQ(fragment_of_numa(16, 16), 0);
  EXPECT_EQ(fragment_of_numa(20, 16), 4);
  EXPECT_EQ(fragment_of_numa(0, 16), 0);
}

TEST(FragmentOfNuma, RejectsBadParameters) {
  EXPECT_THROW(fragment_of_numa(4, 0), InvalidParameter);
  EXPECT_THROW(fragment_of_numa(-1, 16), InvalidParameter);
}

TEST(FragmentOfNuma, AlwaysBelowGrid) {
  Rng rng = make_rng(7);
  for (int i = 0; i < 1000; ++i) {
    int x = uniform_int(rng, 1, 64);
    int f = uniform_int(rng, 0, 512);
    EXPECT_LT(fragment_of_numa(f, x), x);
  }
}

TEST(TotalFragments, WorkedExample) {
  ClusterState s = test::worked_example();
  EXPECT_EQ(total_fragments(s, 16), 16);
  EXPECT_DOUBLE_EQ(fragment_rate(s, 16), 0.5);
}

TEST(TotalFragments, ZeroWhenAllFreeAreMultiples) {
  std::vector<PhysicalMachine> pms(1);
  pms[0].id = 0;
  pms[0].numas[0] = {32, 64, 0, 0};
  pms[0].numas[1] = {16, 32, 0, 0};
  ClusterState s(std::move(pms), {}, {});
  EXPECT_EQ(total_fragments(s, 16), 0);
  EXPECT_DOUBLE_EQ(fragment_rate(s, 16), 0.0);
}

TEST(TotalFragments, EqualsPerNumaSum) {
  Rng rng = make_rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    ClusterState s = test::random_cluster(rng, {.pm_count = 3, .vm_count = 6});
    long long expected = 0;
    for (const auto& p : s.pms())
      for (int j = 0; j < 2; ++j) expected += p.numas[j].free_cpu % 16;
    EXPECT_EQ(total_fragments(s, 16), expected);
  }
}

TEST(FragmentRate, FullyFragmentedSingleNuma) {
  std::vector<PhysicalMachine> pms(1);
  pms[0].id = 0;
  pms[0].numas[0] = {15, 64, 0, 0};
  pms[0].numas[1] = {0, 0, 0, 0};
  ClusterState s(std::move(pms), {}, {});
  EXPECT_DOUBLE_EQ(fragment_rate(s, 16), 1.0);
}

TEST(FragmentRate, ZeroOnFullyPackedCluster) {
  std::vector<PhysicalMachine> pms(1);
  pms[0].id = 0;
  pms[0].numas[0] = {16, 32, 0, 0};
  pms[0].numas[1] = {0, 0, 0, 0};
  std::vector<VirtualMachine> vms = {{0, 16, 32, 1, "4xlarge", {}}};
  ClusterState s(std::move(pms), std::move(vms), {{0, NumaSlot::First}});
  EXPECT_EQ(s.total_free_cpu(), 0);
  EXPECT_DOUBLE_EQ(fragment_rate(s, 16), 0.0);
}

TEST(ClusterState, ConstructorValidatesCapacity) {
  std::vector<PhysicalMachine> pms(1);
  pms[0].id = 0;
  pms[0].numas[0] = {8, 16, 0, 0};
  pms[0].numas[1] = {8, 16, 0, 0};
  std::vector<VirtualMachine> vms = {{0, 16, 32, 1, "4xlarge", {}}};
  try {
    ClusterState s(std::move(pms), std::move(vms), {{0, NumaSlot::First}});
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    ASSERT_FALSE(e.violations().empty());
    EXPECT_NE(e.violations()[0].find("cpu-capacity"), std::string::npos);
  }
}

TEST(ClusterState, ConstructorValidatesNumaShape) {
  std::vector<PhysicalMachine> pms(1);
  pms[0].id = 0;
  pms[0].numas[0] = {64, 128, 0, 0};
  pms[0].numas[1] = {64, 128, 0, 0};
  std::vector<VirtualMachine> vms = {{0, 32, 64, 2, "8xlarge", {}}};
  EXPECT_THROW(
      ClusterState(std::move(pms), std::move(vms), {{0, NumaSlot::First}}),
      ValidationError);
}

TEST(ApplyMigration, WorkedExampleTransition) {
  ClusterState s = test::worked_example();
  ClusterState after = s.apply_migration(test::worked_example_fix(),
                                         NumaSlot::First);
  EXPECT_EQ(after.pm(0).numas[0].free_cpu, 16);
  EXPECT_EQ(after.pm(1).numas[0].free_cpu, 16);
  EXPECT_EQ(total_fragments(after, 16), 0);
  EXPECT_DOUBLE_EQ(fragment_rate(after, 16), 0.0);
  // Source state is untouched (value semantics).
  EXPECT_EQ(s.pm(0).numas[0].free_cpu, 12);
}

TEST(ApplyMigration, MoveThenMoveBackIsIdentity) {
  ClusterState s = test::worked_example();
  ClusterState moved = s.apply_migration({0, 1}, NumaSlot::First);
  ClusterState back = moved.apply_migration({0, 0}, NumaSlot::First);
  ASSERT_EQ(back.vm_count(), s.vm_count());
  for (int i = 0; i < back.vm_count(); ++i)
    EXPECT_EQ(back.placement_at(i), s.placement_at(i));
  for (int i = 0; i < back.pm_count(); ++i)
    for (int j = 0; j < 2; ++j) {
      EXPECT_EQ(back.pm_at(i).numas[j].free_cpu, s.pm_at(i).numas[j].free_cpu);
      EXPECT_EQ(back.pm_at(i).numas[j].free_mem, s.pm_at(i).numas[j].free_mem);
    }
}

TEST(ApplyMigration, InfeasibleDestinationNamesConstraint) {
  ClusterState s = test::worked_example();
  // The 16-core VM on PM 1 does not fit the 12 free cores on PM 0.
  try {
    s.apply_migration({2, 0}, NumaSlot::First);
    FAIL() << "expected InfeasibleError";
  } catch (const InfeasibleError& e) {
    EXPECT_EQ(e.constraint(), Constraint::CpuCapacity);
  }
}

TEST(ApplyMigration, AffinityBlocksDestination) {
  std::vector<PhysicalMachine> pms(2);
  for (int i = 0; i < 2; ++i) {
    pms[i].id = i;
    pms[i].numas[0] = {32, 64, 0, 0};
    pms[i].numas[1] = {32, 64, 0, 0};
  }
  std::vector<VirtualMachine> vms = {{0, 4, 8, 1, "", {1}},
                                     {1, 4, 8, 1, "", {0}}};
  ClusterState s(std::move(pms), std::move(vms),
                 {{0, NumaSlot::First}, {1, NumaSlot::First}});
  try {
    s.apply_migration({0, 1}, NumaSlot::First);
    FAIL() << "expected InfeasibleError";
  } catch (const InfeasibleError& e) {
    EXPECT_EQ(e.constraint(), Constraint::Affinity);
  }
}

TEST(ApplyMigration, ConservesUsedResources) {
  Rng rng = make_rng(23);
  int applied = 0;
  while (applied < 1000) {
    ClusterState s = test::random_cluster(rng, {.pm_count = 4, .vm_count = 8});
    const long long used_cpu = s.total_used_cpu();
    const long long used_mem = s.total_used_mem();
    // Try a handful of random migrations on this instance.
    for (int t = 0; t < 20; ++t) {
      int vi = static_cast<int>(uniform_index(rng, s.vm_count()));
      int pi = static_cast<int>(uniform_index(rng, s.pm_count()));
      const VirtualMachine& v = s.vm_at(vi);
      NumaSlot slot = v.numa_count == 2
                          ? NumaSlot::Both
                          : (uniform_index(rng, 2) == 0 ? NumaSlot::First
                                                        : NumaSlot::Second);
      MigrationAction a{v.id, s.pm_at(pi).id};
      if (s.migration_infeasibility(a, slot)) continue;
      s.apply_migration_in_place(a, slot);
      ++applied;
      ASSERT_EQ(s.total_used_cpu(), used_cpu);
      ASSERT_EQ(s.total_used_mem(), used_mem);
      ASSERT_TRUE(s.validate().empty());
    }
  }
}

TEST(ApplyMigration, TouchesOnlySourceAndDestination) {
  Rng rng = make_rng(29);
  for (int trial = 0; trial < 200; ++trial) {
    ClusterState s = test::random_cluster(rng, {.pm_count = 5, .vm_count = 10});
    int vi = static_cast<int>(uniform_index(rng, s.vm_count()));
    const VirtualMachine& v = s.vm_at(vi);
    const PmId src = s.placement_of(v.id).pm;
    for (const auto& pm : s.pms()) {
      NumaSlot slot = v.numa_count == 2 ? NumaSlot::Both : NumaSlot::Second;
      MigrationAction a{v.id, pm.id};
      if (s.migration_infeasibility(a, slot)) continue;
      ClusterState after = s.apply_migration(a, slot);
      for (int i = 0; i < s.pm_count(); ++i) {
        const auto& before_pm = s.pm_at(i);
        const auto& after_pm = after.pm_at(i);
        if (before_pm.id == src || before_pm.id == pm.id) continue;
        for (int j = 0; j < 2; ++j) {
          ASSERT_EQ(before_pm.numas[j].free_cpu, after_pm.numas[j].free_cpu);
          ASSERT_EQ(before_pm.numas[j].free_mem, after_pm.numas[j].free_mem);
        }
        ASSERT_EQ(before_pm.hosted, after_pm.hosted);
      }
      break;
    }
  }
}

TEST(ApplyMigration, EveryVmPlacedExactlyOnceAfterLegalSequences) {
  Rng rng = make_rng(31);
  ClusterState s = test::random_cluster(rng, {.pm_count = 4, .vm_count = 9});
  for (int t = 0; t < 200; ++t) {
    int vi = static_cast<int>(uniform_index(rng, s.vm_count()));
    int pi = static_cast<int>(uniform_index(rng, s.pm_count()));
    const VirtualMachine& v = s.vm_at(vi);
    NumaSlot slot = v.numa_count == 2
                        ? NumaSlot::Both
                        : (uniform_index(rng, 2) == 0 ? NumaSlot::First
                                                      : NumaSlot::Second);
    MigrationAction a{v.id, s.pm_at(pi).id};
    if (s.migration_infeasibility(a, slot)) continue;
    s.apply_migration_in_place(a, slot);
    // Each VM appears in exactly one hosted list.
    std::size_t hosted_total = 0;
    for (const auto& pm : s.pms()) hosted_total += pm.hosted.size();
    ASSERT_EQ(hosted_total, static_cast<std::size_t>(s.vm_count()));
    ASSERT_TRUE(s.validate().empty());
  }
}

TEST(VmTypes, TableShapes) {
  auto t = find_vm_type("4xlarge");
  ASSERT_TRUE(t.has_value());
  EXPECT_EQ(t->cpu, 16);
  EXPECT_EQ(t->mem, 32);
  EXPECT_EQ(t->numa_count, 1);
  auto big = find_vm_type("22xlarge");
  ASSERT_TRUE(big.has_value());
  EXPECT_EQ(big->cpu, 88);
  EXPECT_EQ(big->numa_count, 2);
  for (const auto& spec : kVmTypes) EXPECT_EQ(spec.mem, spec.cpu * 2);
}

}  // namespace
}  // namespace vmr
