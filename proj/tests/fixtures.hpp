#pragma once

// Shared end-to-end fixtures: the rimless five-push profile, the synthetic
// scatter systems and a checker for the mesh invariants.

#include <cmath>
#include <string>
#include <vector>

#include "metamesh/dynamics.hpp"
#include "metamesh/geometry.hpp"
#include "metamesh/meshing.hpp"

namespace fixture {

using namespace metamesh;

/// Null push plus four short pushes at the start of the cycle.
inline DisturbanceProfile rimless_five_push(std::vector<double> probabilities = {0.4, 0.15, 0.15,
                                                                                 0.15, 0.15}) {
  DisturbanceProfile p;
  p.id = "rimless-five-push";
  p.disturbances = {Disturbance::null(), Disturbance::push(1000.0, 0.0, 0.008),
                    Disturbance::push(-600.0, 0.0, 0.008), Disturbance::push(-1000.0, 0.0, 0.008),
                    Disturbance::push(-1300.0, 0.0, 0.008)};
  p.probabilities = std::move(probabilities);
  return p;
}

inline DisturbanceProfile pushes(const std::vector<double>& magnitudes, double duration = 0.008) {
  DisturbanceProfile p;
  p.id = "pushes";
  p.disturbances.push_back(Disturbance::null());
  for (double m : magnitudes) p.disturbances.push_back(Disturbance::push(m, 0.0, duration));
  p.probabilities.assign(p.disturbances.size(), 1.0 / static_cast<double>(p.disturbances.size()));
  return p;
}

struct ScatterSetup {
  ScatterModel model;
  DisturbanceProfile profile;
  PoincareState initial;
};

/// k-dimensional cube of side `side` in 13-d, four disturbances, seed 1,
/// started from the cube centre.
inline ScatterSetup scatter(std::size_t k, double side) {
  ScatterModel::Params p;
  p.ambient_dim = 13;
  p.intrinsic_dim = k;
  p.side = side;
  p.seed = 1;
  ScatterSetup s{ScatterModel(p), {}, {}};
  s.profile.id = "four-way";
  s.profile.disturbances = {Disturbance::null(), Disturbance::push(1.0, 0.0, 0.01),
                            Disturbance::push(2.0, 0.0, 0.01), Disturbance::push(3.0, 0.0, 0.01)};
  s.profile.probabilities = {0.25, 0.25, 0.25, 0.25};
  s.initial.coords.assign(13, 0.0);
  for (std::size_t i = 0; i < k; ++i) s.initial.coords[i] = side / 2.0;
  return s;
}

inline PolicySpec passive() { return PolicySpec{}; }

inline PolicySpec hip_pd() {
  PolicySpec p;
  p.kind = PolicyKind::pd_tracking;
  p.id = "pd-hip";
  p.kp = 20.0;
  p.kd = 2.0;
  p.target = -0.4;
  p.torque_limit = 20.0;
  return p;
}

inline const std::vector<double>& compass_fixed_point() {
  static const std::vector<double> x{-0.218774618017, 0.323774618185, 1.092866810792,
                                     0.376134592770};
  return x;
}

inline DisturbanceProfile compass_pushes() {
  DisturbanceProfile p;
  p.id = "hip-pushes";
  p.disturbances = {Disturbance::null(), Disturbance::push(40.0, 0.1, 0.1),
                    Disturbance::push(-40.0, 0.1, 0.1), Disturbance::push(40.0, 0.3, 0.1),
                    Disturbance::push(-40.0, 0.3, 0.1)};
  p.probabilities = {0.4, 0.15, 0.15, 0.15, 0.15};
  return p;
}

/// Checks separation, lumping soundness (by re-simulating every recorded
/// transition), completeness and reachability closure. Returns one message
/// per violated property; empty means all hold.
inline std::vector<std::string> mesh_violations(const MeshBuildResult& r,
                                                std::span<const PolicySpec> controllers,
                                                const DisturbanceProfile& profile,
                                                const Model& model, const MeshBuildConfig& cfg) {
  std::vector<std::string> out;
  const Mesh& mesh = r.mesh;
  const auto& t = r.table;
  const double d_tr = mesh.threshold();
  const std::size_t n = mesh.size();

  if (n <= 10001) {
    for (std::size_t i = 1; i < n && out.empty(); ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double d =
            std::sqrt(squared_distance(mesh.state(i), mesh.state(j), mesh.weights()));
        if (!(d > d_tr)) {
          out.push_back("separation: states " + std::to_string(i) + " and " +
                        std::to_string(j) + " are " + format_double(d) + " apart");
          break;
        }
      }
  }

  if (r.truncated || !t.complete() || t.n_states != n)
    out.push_back("completeness: table has holes or a state-count mismatch");

  std::vector<char> reached(n, 0);
  std::size_t unsound = 0;
  for (std::size_t s = 1; s < n; ++s)
    for (std::size_t c = 0; c < controllers.size(); ++c)
      for (std::size_t d = 0; d < profile.size(); ++d) {
        const auto succ = t.at(s, c, d);
        if (succ < n) reached[succ] = 1;
        const auto o = simulate_gait_cycle(mesh.state(s), controllers[c],
                                           profile.disturbances[d], model, cfg.sim);
        if (!o.is_step()) {
          if (succ != 0) ++unsound;
        } else if (succ == 0 || succ >= n ||
                   !(std::sqrt(squared_distance(o.next.coords, mesh.state(succ),
                                                mesh.weights())) <= d_tr)) {
          ++unsound;
        }
      }
  if (unsound > 0)
    out.push_back("soundness: " + std::to_string(unsound) + " transitions land outside d_tr");
  for (std::size_t s = 2; s < n; ++s)
    if (!reached[s]) {
      out.push_back("reachability: state " + std::to_string(s) + " is nobody's successor");
      break;
    }
  return out;
}

inline bool identical(const MeshBuildResult& a, const MeshBuildResult& b) {
  return a.mesh.size() == b.mesh.size() &&
         std::equal(a.mesh.data().begin(), a.mesh.data().end(), b.mesh.data().begin(),
                    b.mesh.data().end()) &&
         a.table.entries == b.table.entries && a.truncated == b.truncated &&
         a.failures.total() == b.failures.total();
}

}  // namespace fixture
