#pragma once

// Worklist exploration of the reachable section states (Algorithm 1 style):
// every mesh state is simulated under every (controller, disturbance) pair;
// successors farther than d_tr from the mesh become new states, the rest are
// lumped onto their nearest mesh state.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

#include "metamesh/common.hpp"
#include "metamesh/dynamics.hpp"
#include "metamesh/geometry.hpp"

namespace metamesh {

/// Dense (state, controller, disturbance) -> successor table. Successor 0 is
/// the failure state. Row 0 is unused and stays zero.
struct TransitionTable {
  static constexpr std::uint32_t kUnexplored = 0xFFFFFFFFu;

  std::size_t n_states = 0;
  std::size_t n_controllers = 0;
  std::size_t n_disturbances = 0;
  std::vector<std::uint32_t> entries;

  TransitionTable() = default;
  TransitionTable(std::size_t states, std::size_t controllers, std::size_t disturbances)
      : n_controllers(controllers), n_disturbances(disturbances) {
    if (controllers == 0 || disturbances == 0)
      throw InvalidArgument("transition table needs controllers and disturbances");
    resize_states(states);
  }

  std::size_t offset(std::size_t s, std::size_t c, std::size_t d) const noexcept {
    return (s * n_controllers + c) * n_disturbances + d;
  }
  std::uint32_t at(std::size_t s, std::size_t c, std::size_t d) const {
    return entries[offset(s, c, d)];
  }
  std::uint32_t& at(std::size_t s, std::size_t c, std::size_t d) {
    return entries[offset(s, c, d)];
  }

  void resize_states(std::size_t states) {
    const std::size_t row = n_controllers * n_disturbances;
    const std::size_t old = n_states;
    entries.resize(states * row, kUnexplored);
    if (old == 0 && states > 0) std::fill(entries.begin(), entries.begin() + row, 0u);
    n_states = states;
  }

  /// True when every explored row is filled and points at a valid state.
  bool complete() const {
    for (std::size_t s = 1; s < n_states; ++s)
      for (std::size_t c = 0; c < n_controllers; ++c)
        for (std::size_t d = 0; d < n_disturbances; ++d)
          if (at(s, c, d) >= n_states) return false;
    return true;
  }
};

struct FailureTally {
  std::uint64_t fell = 0;
  std::uint64_t timeout = 0;
  std::uint64_t integration_error = 0;

  void add(FailureCause cause) {
    switch (cause) {
      case FailureCause::fell: ++fell; break;
      case FailureCause::timeout: ++timeout; break;
      case FailureCause::integration_error: ++integration_error; break;
    }
  }
  std::uint64_t total() const noexcept { return fell + timeout + integration_error; }
};

struct MeshBuildConfig {
  double d_tr = 0.1;
  std::vector<double> weights;  // metric weights; empty = unweighted
  std::size_t state_cap = 1'000'000;
  unsigned threads = 1;
  std::size_t batch = 64;  // worklist states simulated per parallel round
  bool use_index = true;   // k-d index instead of the reference linear scan
  SimConfig sim;
};

struct MeshBuildResult {
  Mesh mesh;
  TransitionTable table;
  bool truncated = false;
  std::size_t explored = 0;  // states whose rows are filled (prefix 1..explored-1)
  FailureTally failures;
  std::uint64_t simulations = 0;
};

/// Builds the mesh and deterministic transition table. States are explored
/// in FIFO order, controllers and disturbances in declared order. Simulations
/// of a batch of already-committed states may run concurrently; results are
/// committed strictly in loop-nest order, so indices never depend on the
/// thread count.
inline MeshBuildResult build_mesh(const PoincareState& initial,
                                  std::span<const PolicySpec> controllers,
                                  const DisturbanceProfile& profile, const Model& model,
                                  const MeshBuildConfig& config,
                                  PolicyConnections* connections = nullptr) {
  if (!(config.d_tr > 0.0)) throw InvalidArgument("d_tr must be positive");
  if (controllers.empty()) throw InvalidArgument("at least one controller is required");
  if (profile.disturbances.empty()) throw InvalidArgument("disturbance list is empty");
  for (const auto& d : profile.disturbances) d.validate();
  for (const auto& c : controllers) c.validate();
  config.sim.validate();
  if (initial.dim() != model.section_dim())
    throw InvalidArgument("initial state has dimension " + std::to_string(initial.dim()) +
                          ", model " + model.id() + " expects " +
                          std::to_string(model.section_dim()));
  if (config.state_cap < 2) throw InvalidArgument("state cap must allow at least 2 states");

  const std::size_t nc = controllers.size();
  const std::size_t nd = profile.disturbances.size();

  MeshBuildResult result;
  result.mesh = Mesh(initial.dim(), config.d_tr, config.weights);
  result.mesh.append(initial.coords);
  result.table = TransitionTable(2, nc, nd);
  Mesh& mesh = result.mesh;
  TransitionTable& table = result.table;

  std::optional<MeshIndex> index;
  if (config.use_index) index.emplace(mesh);
  auto nearest = [&](std::span<const double> q) {
    return index ? index->nearest(q) : distance_to_mesh(q, mesh);
  };

  tbb::task_arena arena(static_cast<int>(std::max(1u, config.threads)));
  const std::size_t per_state = nc * nd;
  std::vector<SimulationOutcome> outcomes;
  std::vector<std::vector<double>> starts;

  std::size_t cur = 1;
  while (cur < mesh.size()) {
    const std::size_t end = std::min(mesh.size(), cur + std::max<std::size_t>(1, config.batch));
    const std::size_t jobs = (end - cur) * per_state;
    starts.clear();
    for (std::size_t s = cur; s < end; ++s) {
      const auto st = mesh.state(s);
      starts.emplace_back(st.begin(), st.end());
    }
    outcomes.assign(jobs, SimulationOutcome{});
    arena.execute([&] {
      tbb::parallel_for(std::size_t{0}, jobs, [&](std::size_t j) {
        const std::size_t s = j / per_state;
        const std::size_t c = (j % per_state) / nd;
        const std::size_t d = j % nd;
        outcomes[j] = simulate_gait_cycle(std::span<const double>(starts[s]), controllers[c],
                                          profile.disturbances[d], model, config.sim,
                                          connections);
      });
    });
    result.simulations += jobs;

    for (std::size_t s = cur; s < end; ++s) {
      for (std::size_t c = 0; c < nc; ++c) {
        for (std::size_t d = 0; d < nd; ++d) {
          const SimulationOutcome& o = outcomes[(s - cur) * per_state + c * nd + d];
          if (!o.is_step()) {
            table.at(s, c, d) = static_cast<std::uint32_t>(Mesh::kFailure);
            result.failures.add(*o.failure);
            continue;
          }
          const NearestResult nn = nearest(o.next.coords);
          if (nn.distance > config.d_tr) {
            if (mesh.size() >= config.state_cap) {
              // Out of room: state s and everything after it stay unexplored.
              for (std::size_t r = s; r < table.n_states; ++r)
                for (std::size_t k = 0; k < per_state; ++k)
                  table.entries[r * per_state + k] = TransitionTable::kUnexplored;
              result.truncated = true;
              result.explored = s;
              return result;
            }
            const std::size_t added = mesh.append(o.next.coords);
            table.resize_states(mesh.size());
            if (index) index->sync();
            table.at(s, c, d) = static_cast<std::uint32_t>(added);
          } else {
            table.at(s, c, d) = static_cast<std::uint32_t>(nn.index);
          }
        }
      }
    }
    cur = end;
  }
  result.explored = mesh.size();
  return result;
}

inline MeshBuildResult build_mesh(const PoincareState& initial, const PolicySpec& controller,
                                  const DisturbanceProfile& profile, const Model& model,
                                  const MeshBuildConfig& config,
                                  PolicyConnections* connections = nullptr) {
  return build_mesh(initial, std::span<const PolicySpec>(&controller, 1), profile, model, config,
                    connections);
}

struct GrowthPoint {
  double d_tr = 0.0;
  std::size_t n_states = 0;
  bool truncated = false;
  std::string error;

  bool ok() const noexcept { return error.empty(); }
};

/// One mesh build per threshold. A failed build records its error and the
/// sweep moves on.
inline std::vector<GrowthPoint> mesh_growth_sweep(const PoincareState& initial,
                                                  std::span<const PolicySpec> controllers,
                                                  const DisturbanceProfile& profile,
                                                  std::span<const double> thresholds,
                                                  const Model& model,
                                                  const MeshBuildConfig& config,
                                                  PolicyConnections* connections = nullptr) {
  if (thresholds.empty()) throw InvalidArgument("growth sweep needs at least one threshold");
  std::set<double> seen;
  for (double d : thresholds) {
    if (!(d > 0.0)) throw InvalidArgument("growth sweep thresholds must be positive");
    if (!seen.insert(d).second) throw InvalidArgument("growth sweep thresholds must be distinct");
  }
  std::vector<GrowthPoint> out;
  for (double d : thresholds) {
    GrowthPoint point;
    point.d_tr = d;
    try {
      MeshBuildConfig cfg = config;
      cfg.d_tr = d;
      const auto built = build_mesh(initial, controllers, profile, model, cfg, connections);
      point.n_states = built.mesh.size();
      point.truncated = built.truncated;
    } catch (const Error& e) {
      point.error = e.what();
    }
    out.push_back(std::move(point));
  }
  return out;
}

/// (d_tr, N) pairs of the successful, complete sweep points, ready for
/// estimate_dimension. Truncated builds undercount N and are left out.
inline std::vector<DimensionSample> dimension_samples(std::span<const GrowthPoint> points) {
  std::vector<DimensionSample> out;
  for (const auto& p : points)
    if (p.ok() && !p.truncated) out.push_back({p.d_tr, static_cast<double>(p.n_states)});
  return out;
}

// ---------------------------------------------------------------------------
// Trajectory lumping

struct LumpedTrajectory {
  Mesh mesh;                            // row 0 is the unused failure slot
  std::vector<std::size_t> assignment;  // mesh index per input state
  std::vector<std::uint64_t> visits;    // per mesh index
  struct Edge {
    std::size_t from;
    std::size_t to;
    std::uint64_t count;
  };
  std::vector<Edge> transitions;  // consecutive pairs, sorted by (from, to)
};

/// Applies the mesh insertion rule to a fixed state sequence without
/// exploring: each state joins its nearest mesh point when within d_tr and
/// otherwise becomes a new one.
inline LumpedTrajectory lump_trajectory(std::span<const PoincareState> sequence, double d_tr,
                                        std::vector<double> weights = {}) {
  if (sequence.empty()) throw InvalidArgument("lump_trajectory: empty sequence");
  LumpedTrajectory out;
  out.mesh = Mesh(sequence.front().dim(), d_tr, std::move(weights));
  out.visits.assign(1, 0);
  MeshIndex index(out.mesh);
  for (const auto& s : sequence) {
    std::size_t id;
    if (out.mesh.size() < 2) {
      id = out.mesh.append(s.coords);
      out.visits.push_back(0);
    } else {
      const auto nn = index.nearest(s.coords);
      if (nn.distance > d_tr) {
        id = out.mesh.append(s.coords);
        out.visits.push_back(0);
      } else {
        id = nn.index;
      }
    }
    index.sync();
    ++out.visits[id];
    out.assignment.push_back(id);
  }
  std::map<std::pair<std::size_t, std::size_t>, std::uint64_t> edges;
  for (std::size_t i = 1; i < out.assignment.size(); ++i)
    ++edges[{out.assignment[i - 1], out.assignment[i]}];
  for (const auto& [key, count] : edges) out.transitions.push_back({key.first, key.second, count});
  return out;
}

/// Successive section states under one policy and the null push, stopping
/// at the first failure.
inline std::vector<PoincareState> simulate_trajectory(const PoincareState& initial,
                                                      const PolicySpec& policy,
                                                      const Model& model, const SimConfig& config,
                                                      std::size_t cycles,
                                                      PolicyConnections* connections = nullptr) {
  std::vector<PoincareState> out;
  out.push_back(initial);
  const Disturbance none = Disturbance::null();
  for (std::size_t i = 0; i < cycles; ++i) {
    const auto o = simulate_gait_cycle(out.back(), policy, none, model, config, connections);
    if (!o.is_step()) break;
    out.push_back(o.next);
  }
  return out;
}

}  // namespace metamesh
