#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fixtures.hpp"
#include "metamesh/markov.hpp"
#include "metamesh/meshing.hpp"
#include "oracles.hpp"

using namespace metamesh;

namespace {

DisturbanceProfile null_only() {
  return DisturbanceProfile{"null-only", {Disturbance::null()}, {1.0}};
}

void expect_invariants(const MeshBuildResult& r, std::span<const PolicySpec> controllers,
                       const DisturbanceProfile& profile, const Model& model,
                       const MeshBuildConfig& cfg) {
  for (const auto& v : fixture::mesh_violations(r, controllers, profile, model, cfg))
    ADD_FAILURE() << v;
}

}  // namespace

TEST(BuildMesh, QuickstartFixedPointGivesTwoStates) {
  RimlessWheel rw;
  MeshBuildConfig cfg;
  cfg.d_tr = 0.01;
  const auto r = build_mesh(PoincareState{rw.limit_cycle_state()}, fixture::passive(),
                            null_only(), rw, cfg);
  EXPECT_EQ(r.mesh.size(), 2u);
  EXPECT_EQ(r.table.at(1, 0, 0), 1u);
  EXPECT_FALSE(r.truncated);
  EXPECT_EQ(r.simulations, 1u);
}

TEST(BuildMesh, TransientChainMatchesClosedFormIterates) {
  RimlessWheel rw;
  const auto& p = rw.params();
  const double g_l = p.gravity / p.leg_length;
  const double d_tr = 1e-6;
  const double w0 = rw.limit_cycle_speed() + 0.05;

  // Oracle: iterate the closed-form cycle map until a new speed lands within
  // d_tr of one already recorded.
  std::vector<double> speeds{w0};
  for (;;) {
    const double one = oracle::rimless_step(speeds.back(), g_l, p.half_angle, p.slope);
    const double next = oracle::rimless_step(one, g_l, p.half_angle, p.slope);
    bool close = false;
    for (double s : speeds) close |= std::abs(s - next) <= d_tr;
    if (close) break;
    speeds.push_back(next);
  }

  MeshBuildConfig cfg;
  cfg.d_tr = d_tr;
  const auto r = build_mesh(PoincareState{{rw.post_impact_angle(), w0}}, fixture::passive(),
                            null_only(), rw, cfg);
  ASSERT_EQ(r.mesh.size(), 1 + speeds.size());
  for (std::size_t i = 0; i < speeds.size(); ++i)
    EXPECT_NEAR(r.mesh.state(i + 1)[1], speeds[i], 1e-8);
  // A chain: each state leads to the next and the last one to itself.
  for (std::size_t s = 1; s + 1 < r.mesh.size(); ++s) EXPECT_EQ(r.table.at(s, 0, 0), s + 1);
  EXPECT_EQ(r.table.at(r.mesh.size() - 1, 0, 0), r.mesh.size() - 1);
}

TEST(BuildMesh, RimlessFivePushInvariants) {
  RimlessWheel rw;
  const auto profile = fixture::rimless_five_push();
  MeshBuildConfig cfg;
  cfg.d_tr = 0.001;
  const auto policy = fixture::passive();
  const auto r = build_mesh(PoincareState{rw.limit_cycle_state()}, policy, profile, rw, cfg);
  EXPECT_EQ(r.mesh.size(), 33u);
  EXPECT_GT(r.failures.fell, 0u);
  expect_invariants(r, std::span<const PolicySpec>(&policy, 1), profile, rw, cfg);
}

TEST(BuildMesh, CompassGaitTwoControllers) {
  CompassGait cg;
  const std::vector<PolicySpec> policies{fixture::passive(), fixture::hip_pd()};
  const auto profile = fixture::compass_pushes();
  MeshBuildConfig cfg;
  cfg.d_tr = 0.05;
  cfg.sim.min_cycle_time = 0.3;
  const auto r =
      build_mesh(PoincareState{fixture::compass_fixed_point()}, policies, profile, cg, cfg);
  EXPECT_GT(r.mesh.size(), 10u);
  expect_invariants(r, policies, profile, cg, cfg);
}

TEST(BuildMesh, ScatterInvariants) {
  auto s = fixture::scatter(3, 12.0);
  MeshBuildConfig cfg;
  cfg.d_tr = 0.8;
  const auto policy = fixture::passive();
  const auto r = build_mesh(s.initial, policy, s.profile, s.model, cfg);
  EXPECT_GT(r.mesh.size(), 1000u);
  expect_invariants(r, std::span<const PolicySpec>(&policy, 1), s.profile, s.model, cfg);
}

TEST(BuildMesh, IndependentOfThreadCountAndIndex) {
  RimlessWheel rw;
  const auto profile = fixture::rimless_five_push();
  MeshBuildConfig cfg;
  cfg.d_tr = 0.0005;
  cfg.threads = 1;
  const PoincareState x0{rw.limit_cycle_state()};
  const auto one = build_mesh(x0, fixture::passive(), profile, rw, cfg);
  cfg.threads = 8;
  const auto eight = build_mesh(x0, fixture::passive(), profile, rw, cfg);
  cfg.batch = 1;
  const auto serial_batches = build_mesh(x0, fixture::passive(), profile, rw, cfg);
  cfg.use_index = false;
  const auto scan = build_mesh(x0, fixture::passive(), profile, rw, cfg);
  EXPECT_TRUE(fixture::identical(one, eight));
  EXPECT_TRUE(fixture::identical(one, serial_batches));
  EXPECT_TRUE(fixture::identical(one, scan));

  auto s = fixture::scatter(2, 20.0);
  MeshBuildConfig sc;
  sc.d_tr = 0.6;
  sc.threads = 1;
  const auto a = build_mesh(s.initial, fixture::passive(), s.profile, s.model, sc);
  sc.threads = 8;
  const auto b = build_mesh(s.initial, fixture::passive(), s.profile, s.model, sc);
  EXPECT_TRUE(fixture::identical(a, b));
}

TEST(BuildMesh, TruncationIsReported) {
  RimlessWheel rw;
  const auto profile = fixture::rimless_five_push();
  MeshBuildConfig cfg;
  cfg.d_tr = 0.001;
  cfg.state_cap = 10;
  const auto r = build_mesh(PoincareState{rw.limit_cycle_state()}, fixture::passive(), profile,
                            rw, cfg);
  EXPECT_TRUE(r.truncated);
  EXPECT_EQ(r.mesh.size(), 10u);
  EXPECT_LT(r.explored, r.mesh.size());
  for (std::size_t s = r.explored; s < r.mesh.size(); ++s)
    for (std::size_t d = 0; d < profile.size(); ++d)
      EXPECT_EQ(r.table.at(s, 0, d), TransitionTable::kUnexplored);
  for (std::size_t s = 1; s < r.explored; ++s)
    for (std::size_t d = 0; d < profile.size(); ++d) EXPECT_LT(r.table.at(s, 0, d), 10u);
  EXPECT_THROW(assemble_stochastic(r.table, 0, profile), InvalidArgument);
}

TEST(BuildMesh, RejectsBadInput) {
  RimlessWheel rw;
  MeshBuildConfig cfg;
  const PoincareState x0{rw.limit_cycle_state()};
  cfg.d_tr = 0.0;
  EXPECT_THROW(build_mesh(x0, fixture::passive(), null_only(), rw, cfg), InvalidArgument);
  cfg.d_tr = 0.01;
  EXPECT_THROW(build_mesh(PoincareState{{0.1}}, fixture::passive(), null_only(), rw, cfg),
               InvalidArgument);
  DisturbanceProfile empty;
  EXPECT_THROW(build_mesh(x0, fixture::passive(), empty, rw, cfg), InvalidArgument);
  EXPECT_THROW(build_mesh(x0, std::span<const PolicySpec>(), null_only(), rw, cfg),
               InvalidArgument);
}

TEST(GrowthSweep, MonotoneInThreshold) {
  RimlessWheel rw;
  const auto policy = fixture::passive();
  const std::vector<double> th{0.0005, 0.001, 0.002, 0.004, 0.008};
  const auto pts = mesh_growth_sweep(PoincareState{rw.limit_cycle_state()},
                                     std::span<const PolicySpec>(&policy, 1),
                                     fixture::rimless_five_push(), th, rw, MeshBuildConfig{});
  ASSERT_EQ(pts.size(), th.size());
  for (std::size_t i = 1; i < pts.size(); ++i) EXPECT_LE(pts[i].n_states, pts[i - 1].n_states);

  auto s = fixture::scatter(2, 20.0);
  const std::vector<double> th2{0.5, 0.6, 0.7, 0.8};
  const auto pts2 = mesh_growth_sweep(s.initial, std::span<const PolicySpec>(&policy, 1),
                                      s.profile, th2, s.model, MeshBuildConfig{});
  for (std::size_t i = 1; i < pts2.size(); ++i) EXPECT_LE(pts2[i].n_states, pts2[i - 1].n_states);
}

TEST(GrowthSweep, RecoversCubeDimension) {
  auto s = fixture::scatter(3, 12.0);
  const auto policy = fixture::passive();
  const std::vector<double> th{0.6, 0.7, 0.8};
  const auto pts = mesh_growth_sweep(s.initial, std::span<const PolicySpec>(&policy, 1),
                                     s.profile, th, s.model, MeshBuildConfig{});
  const auto fit = estimate_dimension(dimension_samples(pts));
  EXPECT_NEAR(fit.n_hat, 3.0, 0.3);
  // Every explored state draws one successor per disturbance.
  EXPECT_GE((pts.front().n_states - 1) * s.profile.size(), 10000u);
}

TEST(GrowthSweep, ErrorsAndSingleThreshold) {
  RimlessWheel rw;
  const auto policy = fixture::passive();
  const std::vector<double> one{0.01};
  const auto pts = mesh_growth_sweep(PoincareState{rw.limit_cycle_state()},
                                     std::span<const PolicySpec>(&policy, 1), null_only(), one,
                                     rw, MeshBuildConfig{});
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_THROW(estimate_dimension(dimension_samples(pts)), InvalidArgument);

  const std::vector<double> dup{0.1, 0.1};
  EXPECT_THROW(mesh_growth_sweep(PoincareState{rw.limit_cycle_state()},
                                 std::span<const PolicySpec>(&policy, 1), null_only(), dup, rw,
                                 MeshBuildConfig{}),
               InvalidArgument);
  // A failing build is recorded per threshold and the sweep carries on.
  const std::vector<double> two{0.01, 0.02};
  const auto bad = mesh_growth_sweep(PoincareState{{0.1, 0.2, 0.3}},
                                     std::span<const PolicySpec>(&policy, 1), null_only(), two,
                                     rw, MeshBuildConfig{});
  ASSERT_EQ(bad.size(), 2u);
  EXPECT_FALSE(bad[0].ok());
  EXPECT_FALSE(bad[1].ok());
}

TEST(LumpTrajectory, MatchesInsertionRule) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<PoincareState> seq;
  for (int i = 0; i < 400; ++i) seq.push_back(PoincareState{{g(rng), g(rng), g(rng)}});
  const double d_tr = 0.4;
  const auto lumped = lump_trajectory(seq, d_tr);

  // Oracle: linear scan with the same insertion rule.
  Mesh mesh(3, d_tr);
  std::vector<std::size_t> expect;
  for (const auto& s : seq) {
    if (mesh.size() < 2) {
      expect.push_back(mesh.append(s.coords));
      continue;
    }
    const auto [d, idx] = oracle::nearest_scan(s.coords, mesh);
    expect.push_back(d > d_tr ? mesh.append(s.coords) : idx);
  }
  EXPECT_EQ(lumped.assignment, expect);
  EXPECT_EQ(lumped.mesh.size(), mesh.size());
  std::uint64_t visits = 0, edges = 0;
  for (auto v : lumped.visits) visits += v;
  for (const auto& e : lumped.transitions) edges += e.count;
  EXPECT_EQ(visits, seq.size());
  EXPECT_EQ(edges, seq.size() - 1);
}

TEST(SimulateTrajectory, ConvergesAndStopsAtFailure) {
  RimlessWheel rw;
  const auto traj = simulate_trajectory(PoincareState{{rw.post_impact_angle(), 1.5}},
                                        fixture::passive(), rw, SimConfig{}, 40);
  ASSERT_EQ(traj.size(), 41u);
  EXPECT_NEAR(traj.back().coords[1], rw.limit_cycle_speed(), 1e-8);
  const auto lumped = lump_trajectory(traj, 1e-6);
  EXPECT_LT(lumped.mesh.size(), traj.size() + 1);

  // Too slow to get over the first spoke: falls on cycle one.
  const auto stalled = simulate_trajectory(PoincareState{{rw.post_impact_angle(), 0.5}},
                                           fixture::passive(), rw, SimConfig{}, 10);
  EXPECT_EQ(stalled.size(), 1u);
}
