#pragma once

// Hybrid walker simulation: one call integrates a full gait cycle (two
// impacts) under a feedback policy and an optional timed push, and returns
// the post-impact state on the Poincare section or a failure.

#include <array>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metamesh/common.hpp"
#include "metamesh/external_policy.hpp"
#include "metamesh/geometry.hpp"

namespace metamesh {

enum class FailureCause { fell, timeout, integration_error };

inline std::string_view to_string(FailureCause cause) {
  switch (cause) {
    case FailureCause::fell: return "fell";
    case FailureCause::timeout: return "timeout";
    case FailureCause::integration_error: return "integration_error";
  }
  return "unknown";
}

/// A horizontal push on the target body during [start_time, start_time + duration).
struct Disturbance {
  double magnitude = 0.0;  // N, positive pushes forward
  double start_time = 0.0;
  double duration = 0.0;
  std::string target = "torso";
  bool is_null = true;

  static Disturbance null() { return {}; }
  static Disturbance push(double magnitude, double start_time, double duration,
                          std::string target = "torso") {
    return {magnitude, start_time, duration, std::move(target), false};
  }

  /// True when the push changes the dynamics at all.
  bool active() const noexcept { return !is_null && magnitude != 0.0 && duration > 0.0; }

  void validate() const {
    if (!std::isfinite(magnitude) || !std::isfinite(start_time) || !std::isfinite(duration))
      throw InvalidArgument("disturbance fields must be finite");
    if (duration < 0.0) throw InvalidArgument("disturbance duration must be >= 0");
    if (start_time < 0.0) throw InvalidArgument("disturbance start_time must be >= 0");
    if (is_null && magnitude != 0.0)
      throw InvalidArgument("a null disturbance must have magnitude 0");
    if (target != "torso")
      throw InvalidArgument("unsupported push target '" + target + "' (only torso)");
  }
};

inline constexpr double kProbabilityTolerance = 1e-12;

/// Finite push set with a distribution over it. Index 0 is the null push by
/// convention.
struct DisturbanceProfile {
  std::string id;
  std::vector<Disturbance> disturbances;
  std::vector<double> probabilities;

  std::size_t size() const noexcept { return disturbances.size(); }

  void validate() const {
    if (disturbances.empty()) throw InvalidArgument("disturbance profile is empty");
    if (probabilities.size() != disturbances.size())
      throw InvalidArgument("profile has " + std::to_string(disturbances.size()) +
                            " disturbances but " + std::to_string(probabilities.size()) +
                            " probabilities");
    for (const auto& d : disturbances) d.validate();
    check_distribution(probabilities);
  }

  static void check_distribution(std::span<const double> p) {
    double sum = 0.0;
    for (double v : p) {
      if (!(v >= 0.0) || !std::isfinite(v))
        throw InvalidArgument("disturbance probabilities must be finite and >= 0");
      sum += v;
    }
    if (std::abs(sum - 1.0) > kProbabilityTolerance)
      throw InvalidArgument("disturbance probabilities sum to " + format_double(sum) +
                            ", expected 1");
  }
};

enum class PolicyKind { passive, pd_tracking, external };

inline std::string_view to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::passive: return "passive";
    case PolicyKind::pd_tracking: return "pd_tracking";
    case PolicyKind::external: return "external";
  }
  return "unknown";
}

inline constexpr double kDefaultTorqueLimit = 100.0;  // N*m

struct PolicySpec {
  PolicyKind kind = PolicyKind::passive;
  std::string id = "passive";
  // pd_tracking: torque = kp * (target - y) - kd * y_dot on the model's
  // tracked output y (the hip angle for the compass gait).
  double kp = 0.0;
  double kd = 0.0;
  double target = 0.0;
  double torque_limit = kDefaultTorqueLimit;
  // external
  std::string endpoint;
  double deadline_ms = 100.0;

  void validate() const {
    if (kind == PolicyKind::pd_tracking && (!(kp >= 0.0) || !(kd >= 0.0)))
      throw InvalidArgument("pd_tracking gains must be >= 0");
    if (!(torque_limit > 0.0)) throw InvalidArgument("torque_limit must be positive");
    if (kind == PolicyKind::external) {
      if (endpoint.empty()) throw InvalidArgument("external policy needs an endpoint");
      if (!(deadline_ms > 0.0)) throw InvalidArgument("external policy deadline must be positive");
    }
  }
};

struct SimConfig {
  double dt = 0.002;            // RK4 step, s
  int control_hold = 4;         // integrator steps per control update
  double min_cycle_time = 0.0;  // s before a section impact is accepted
  double timeout = 8.0;         // s of model time per cycle
  double event_tolerance = 1e-10;
  double height_fraction = 0.5;
  bool record_trajectory = false;

  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidArgument("dt must be positive");
    if (control_hold < 1) throw InvalidArgument("control_hold must be >= 1");
    if (!(min_cycle_time >= 0.0)) throw InvalidArgument("min_cycle_time must be >= 0");
    if (!(timeout > 0.0)) throw InvalidArgument("timeout must be positive");
    if (!(event_tolerance > 0.0)) throw InvalidArgument("event_tolerance must be positive");
    if (!(height_fraction >= 0.0 && height_fraction < 1.0))
      throw InvalidArgument("height_fraction must be in [0, 1)");
  }
};

struct TrajectorySample {
  double t = 0.0;
  std::vector<double> x;
};

/// Either a step (post-impact section state) or a failure with its cause.
struct SimulationOutcome {
  std::optional<FailureCause> failure;
  PoincareState next;
  double cycle_time = 0.0;
  int impacts = 0;
  std::vector<TrajectorySample> trajectory;

  bool is_step() const noexcept { return !failure.has_value(); }
};

/// Feedback law evaluated at control-hold boundaries.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual void act(std::span<const double> x, std::span<double> torque) = 0;
};

namespace detail {
inline std::atomic<std::uint64_t>& simulation_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}
}  // namespace detail

/// Number of gait-cycle simulations run by this process.
inline std::uint64_t simulation_call_count() { return detail::simulation_counter().load(); }

class Model {
 public:
  virtual ~Model() = default;
  virtual std::string id() const = 0;
  virtual std::size_t section_dim() const = 0;
  virtual std::size_t action_dim() const { return 0; }
  /// Tracked output (y, y_dot) for pd_tracking policies.
  virtual std::array<double, 2> tracked_output(std::span<const double> /*x*/) const {
    return {0.0, 0.0};
  }
  virtual SimulationOutcome simulate(std::span<const double> x0, Controller& controller,
                                     const Disturbance& gamma,
                                     const SimConfig& config) const = 0;
};

// ---------------------------------------------------------------------------
// Generic hybrid integrator

enum class ContactKind { heel_strike, ignore, fell };

/// Continuous dynamics with impacts. Subclasses supply the vector field, the
/// contact surface and the impact map; simulate() is shared.
class HybridModel : public Model {
 public:
  static constexpr std::size_t kMaxState = 8;
  static constexpr std::size_t kMaxAction = 4;
  using Vec = std::array<double, kMaxState>;

  virtual std::size_t state_dim() const = 0;
  virtual Vec enter_section(std::span<const double> section) const = 0;
  virtual std::vector<double> section_of(const Vec& x) const = 0;
  virtual void derivative(const Vec& x, std::span<const double> torque, double push,
                          Vec& dx) const = 0;
  /// Positive while the next foot is above ground.
  virtual double contact_surface(const Vec& x) const = 0;
  virtual ContactKind classify_contact(const Vec& x) const = 0;
  virtual void apply_impact(Vec& x) const = 0;
  /// Torso (or hub) height over its standing height.
  virtual double height_ratio(const Vec& x) const = 0;
  /// Stance point slipping, lifting or rolling back.
  virtual bool contact_lost(const Vec& /*x*/, double /*push*/) const { return false; }
  virtual double energy(const Vec& x) const = 0;

  std::optional<FailureCause> detect_failure(const Vec& x, double t, double push,
                                             const SimConfig& config) const {
    if (t > config.timeout) return FailureCause::timeout;
    if (height_ratio(x) < config.height_fraction) return FailureCause::fell;
    if (contact_lost(x, push)) return FailureCause::fell;
    return std::nullopt;
  }

  Vec rk4(const Vec& x, double h, std::span<const double> torque, double push) const {
    const std::size_t n = state_dim();
    Vec k1{}, k2{}, k3{}, k4{}, tmp{};
    derivative(x, torque, push, k1);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * h * k1[i];
    derivative(tmp, torque, push, k2);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * h * k2[i];
    derivative(tmp, torque, push, k3);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + h * k3[i];
    derivative(tmp, torque, push, k4);
    Vec out{};
    for (std::size_t i = 0; i < n; ++i)
      out[i] = x[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    return out;
  }

  SimulationOutcome simulate(std::span<const double> x0, Controller& controller,
                             const Disturbance& gamma,
                             const SimConfig& config) const final {
    config.validate();
    gamma.validate();
    const std::size_t n = state_dim();
    const std::size_t na = action_dim();
    SimulationOutcome out;

    Vec x = enter_section(x0);
    std::array<double, kMaxAction> torque{};
    const std::span<double> u(torque.data(), na);
    auto refresh_control = [&] {
      controller.act(std::span<const double>(x.data(), n), u);
    };

    const bool pushing = gamma.active();
    const double push_begin = gamma.start_time;
    const double push_end = gamma.start_time + gamma.duration;
    const double dt = config.dt;

    double t = 0.0;
    long grid = 0;
    int since_control = 0;
    int impacts = 0;
    // A foot touching down behind the hip only counts as a fall once the
    // swing foot has cleared the ground.
    bool armed = contact_surface(x) > kArmEpsilon;
    auto strike = [this](const Vec& v) {
      return contact_surface(v) <= 0.0 && classify_contact(v) == ContactKind::heel_strike;
    };
    bool striking = strike(x);

    auto record = [&] {
      if (config.record_trajectory)
        out.trajectory.push_back({t, std::vector<double>(x.begin(), x.begin() + n)});
    };
    auto fail = [&](FailureCause cause) {
      out.failure = cause;
      out.cycle_time = t;
      out.impacts = impacts;
      return out;
    };
    auto finite = [n](const Vec& v) {
      for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(v[i])) return false;
      return true;
    };

    refresh_control();
    record();
    for (;;) {
      if (t >= config.timeout) return fail(FailureCause::timeout);
      const double next_grid = static_cast<double>(grid + 1) * dt;
      double t_end = next_grid;
      if (pushing) {
        if (push_begin > t && push_begin < t_end) t_end = push_begin;
        if (push_end > t && push_end < t_end) t_end = push_end;
      }
      const double h = t_end - t;
      const double force = (pushing && t >= push_begin && t < push_end) ? gamma.magnitude : 0.0;
      const std::span<const double> uc(torque.data(), na);

      Vec xn = rk4(x, h, uc, force);
      if (!finite(xn)) return fail(FailureCause::integration_error);

      if (!striking && strike(xn)) {
        // Localize the heel strike within this step by bisection.
        double lo = 0.0, hi = h;
        Vec x_hit = xn;
        while (hi - lo > config.event_tolerance) {
          const double mid = 0.5 * (lo + hi);
          Vec xm = rk4(x, mid, uc, force);
          if (strike(xm)) {
            hi = mid;
            x_hit = xm;
          } else {
            lo = mid;
          }
        }
        const bool reached_end = (hi == h);
        x = x_hit;
        t = reached_end ? t_end : t + hi;
        if (reached_end && t_end == next_grid) ++grid;
        apply_impact(x);
        ++impacts;
        if (!finite(x)) return fail(FailureCause::integration_error);
        armed = contact_surface(x) > kArmEpsilon;
        striking = strike(x);
        record();
        if (impacts % 2 == 0 && t >= config.min_cycle_time) {
          out.next.coords = section_of(x);
          out.cycle_time = t;
          out.impacts = impacts;
          return out;
        }
        refresh_control();
        since_control = 0;
        continue;
      }
      if (armed && contact_surface(xn) <= 0.0 && classify_contact(xn) == ContactKind::fell) {
        x = xn;
        t = t_end;
        record();
        return fail(FailureCause::fell);
      }
      striking = strike(xn);

      x = xn;
      t = t_end;
      if (t_end == next_grid) {
        ++grid;
        if (++since_control >= config.control_hold) {
          refresh_control();
          since_control = 0;
        }
      }
      if (contact_surface(x) > kArmEpsilon) armed = true;
      if (auto cause = detect_failure(x, t, force, config)) return fail(*cause);
      record();
    }
  }

 protected:
  static constexpr double kArmEpsilon = 1e-9;
};

/// Failure check on a full continuous model state; `t` is time into the cycle.
inline std::optional<FailureCause> detect_failure(const HybridModel& model,
                                                  std::span<const double> x, double t,
                                                  const SimConfig& config) {
  if (x.size() != model.state_dim())
    throw InvalidArgument("detect_failure: state dimension mismatch");
  HybridModel::Vec v{};
  std::copy(x.begin(), x.end(), v.begin());
  return model.detect_failure(v, t, 0.0, config);
}

// ---------------------------------------------------------------------------
// Rimless wheel

/// Point-mass hub on massless spokes walking down a slope. Angles are from
/// the world vertical, positive with the hub ahead of the stance foot.
/// Section coordinates: (stance angle, angular velocity).
class RimlessWheel final : public HybridModel {
 public:
  struct Params {
    double mass = 70.0;
    double leg_length = 1.0;
    double half_angle = 0.3927;  // half the inter-spoke angle, rad
    double slope = 0.08;         // rad
    double gravity = 9.81;
  };

  RimlessWheel() : RimlessWheel(Params()) {}
  explicit RimlessWheel(Params p) : p_(p) {
    if (!(p.mass > 0.0) || !(p.leg_length > 0.0) || !(p.gravity > 0.0))
      throw InvalidArgument("rimless wheel: mass, leg_length and gravity must be positive");
    if (!(p.half_angle > 0.0 && p.half_angle < 0.78))
      throw InvalidArgument("rimless wheel: half_angle must be in (0, pi/4)");
    if (!(p.slope >= 0.0 && p.slope < p.half_angle))
      throw InvalidArgument("rimless wheel: slope must be in [0, half_angle)");
  }

  const Params& params() const noexcept { return p_; }

  std::string id() const override { return "rimless_wheel"; }
  std::size_t section_dim() const override { return 2; }
  std::size_t state_dim() const override { return 2; }

  double post_impact_angle() const noexcept { return p_.slope - p_.half_angle; }

  /// Fixed point of the step map (post-impact angular velocity).
  double limit_cycle_speed() const {
    const double a = p_.half_angle;
    return std::cos(2 * a) / std::sin(2 * a) *
           std::sqrt(4.0 * p_.gravity / p_.leg_length * std::sin(a) * std::sin(p_.slope));
  }

  std::vector<double> limit_cycle_state() const {
    return {post_impact_angle(), limit_cycle_speed()};
  }

  Vec enter_section(std::span<const double> s) const override {
    if (s.size() != 2) throw InvalidArgument("rimless wheel section state has 2 coordinates");
    if (!all_finite(s)) throw InvalidArgument("rimless wheel: non-finite initial state");
    return Vec{s[0], s[1]};
  }

  std::vector<double> section_of(const Vec& x) const override { return {x[0], x[1]}; }

  void derivative(const Vec& x, std::span<const double>, double push, Vec& dx) const override {
    const double l = p_.leg_length;
    dx[0] = x[1];
    dx[1] = p_.gravity / l * std::sin(x[0]) + push * std::cos(x[0]) / (p_.mass * l);
  }

  double contact_surface(const Vec& x) const override {
    return (p_.slope + p_.half_angle) - x[0];
  }

  ContactKind classify_contact(const Vec& x) const override {
    return x[1] > 0.0 ? ContactKind::heel_strike : ContactKind::fell;
  }

  void apply_impact(Vec& x) const override {
    x[0] -= 2.0 * p_.half_angle;
    x[1] *= std::cos(2.0 * p_.half_angle);
  }

  double height_ratio(const Vec& x) const override { return std::cos(x[0]); }

  bool contact_lost(const Vec& x, double push) const override {
    // Rolled back onto the trailing spoke: the wheel stalls.
    if (x[1] < 0.0 && x[0] < post_impact_angle()) return true;
    // Spoke compression force must stay positive.
    const double normal = p_.mass * p_.gravity * std::cos(x[0]) - push * std::sin(x[0]) -
                          p_.mass * p_.leg_length * x[1] * x[1];
    return normal < 0.0;
  }

  double energy(const Vec& x) const override {
    const double l = p_.leg_length;
    return 0.5 * p_.mass * l * l * x[1] * x[1] + p_.mass * p_.gravity * l * std::cos(x[0]);
  }

  /// Angular momentum about the stance foot.
  double angular_momentum(const Vec& x) const {
    return p_.mass * p_.leg_length * p_.leg_length * x[1];
  }

 private:
  Params p_;
};

// ---------------------------------------------------------------------------
// Compass gait

/// Two-legged compass gait with point masses (hip mass plus one mass per leg)
/// and a hip actuator. Angles are leg orientations from the world vertical
/// (foot to hip), positive leaning forward. State: (stance, swing, rates).
class CompassGait final : public HybridModel {
 public:
  struct Params {
    double leg_mass = 5.0;
    double hip_mass = 10.0;
    double a = 0.5;  // foot to leg mass
    double b = 0.5;  // leg mass to hip
    double slope = 0.0525;
    double gravity = 9.81;
    double min_interleg = 0.1;  // rad; smaller separations are foot scuffing
  };

  CompassGait() : CompassGait(Params()) {}
  explicit CompassGait(Params p) : p_(p) {
    if (!(p.leg_mass > 0.0) || !(p.hip_mass > 0.0) || !(p.a > 0.0) || !(p.b > 0.0) ||
        !(p.gravity > 0.0))
      throw InvalidArgument("compass gait: masses, lengths and gravity must be positive");
    if (!(std::abs(p.slope) < 0.5)) throw InvalidArgument("compass gait: slope out of range");
    if (!(p.min_interleg > 0.0)) throw InvalidArgument("compass gait: min_interleg must be > 0");
  }

  const Params& params() const noexcept { return p_; }
  double leg_length() const noexcept { return p_.a + p_.b; }

  std::string id() const override { return "compass_gait"; }
  std::size_t section_dim() const override { return 4; }
  std::size_t state_dim() const override { return 4; }
  std::size_t action_dim() const override { return 1; }

  std::array<double, 2> tracked_output(std::span<const double> x) const override {
    return {x[1] - x[0], x[3] - x[2]};
  }

  Vec enter_section(std::span<const double> s) const override {
    if (s.size() != 4) throw InvalidArgument("compass gait section state has 4 coordinates");
    if (!all_finite(s)) throw InvalidArgument("compass gait: non-finite initial state");
    return Vec{s[0], s[1], s[2], s[3]};
  }

  std::vector<double> section_of(const Vec& x) const override {
    return {x[0], x[1], x[2], x[3]};
  }

  void derivative(const Vec& x, std::span<const double> torque, double push,
                  Vec& dx) const override {
    const double m = p_.leg_mass, mh = p_.hip_mass, a = p_.a, b = p_.b, l = leg_length();
    const double g = p_.gravity;
    const double th1 = x[0], th2 = x[1], w1 = x[2], w2 = x[3];
    const double s12 = std::sin(th1 - th2), c12 = std::cos(th1 - th2);
    const double u = torque.empty() ? 0.0 : torque[0];

    const double m11 = m * a * a + (mh + m) * l * l;
    const double m12 = -m * l * b * c12;
    const double m22 = m * b * b;
    const double rhs1 = -u + push * l * std::cos(th1) + m * l * b * s12 * w2 * w2 +
                        g * (m * a + mh * l + m * l) * std::sin(th1);
    const double rhs2 = u - m * l * b * s12 * w1 * w1 - g * m * b * std::sin(th2);
    const double det = m11 * m22 - m12 * m12;
    dx[0] = w1;
    dx[1] = w2;
    dx[2] = (m22 * rhs1 - m12 * rhs2) / det;
    dx[3] = (m11 * rhs2 - m12 * rhs1) / det;
  }

  double contact_surface(const Vec& x) const override {
    return leg_length() * (std::cos(x[0] - p_.slope) - std::cos(x[1] - p_.slope));
  }

  ContactKind classify_contact(const Vec& x) const override {
    if (x[0] - x[1] > p_.min_interleg) return ContactKind::heel_strike;
    // The trailing foot brushing the ground mid-swing is scuffing; it is a
    // fall only when the walker is rolling backward onto it.
    if (x[1] - x[0] > p_.min_interleg && x[2] < 0.0) return ContactKind::fell;
    return ContactKind::ignore;
  }

  void apply_impact(Vec& x) const override {
    // Plastic impact at the swing foot: angular momentum of the whole walker
    // about the new contact and of the trailing leg about the hip are
    // conserved; the legs swap roles.
    const Momenta pre = momenta(x[0], x[1], x[2], x[3], /*about_swing_foot=*/true);
    const double n1 = x[1], n2 = x[0];
    const Momenta e1 = momenta(n1, n2, 1.0, 0.0, false);
    const Momenta e2 = momenta(n1, n2, 0.0, 1.0, false);
    const double det = e1.whole * e2.trailing - e2.whole * e1.trailing;
    x[0] = n1;
    x[1] = n2;
    x[2] = (pre.whole * e2.trailing - e2.whole * pre.trailing) / det;
    x[3] = (e1.whole * pre.trailing - pre.whole * e1.trailing) / det;
  }

  double height_ratio(const Vec& x) const override { return std::cos(x[0]); }

  double energy(const Vec& x) const override {
    const double m = p_.leg_mass, mh = p_.hip_mass, a = p_.a, b = p_.b, l = leg_length();
    const double th1 = x[0], th2 = x[1], w1 = x[2], w2 = x[3];
    const double kinetic =
        0.5 * ((m * a * a + (mh + m) * l * l) * w1 * w1 + m * b * b * w2 * w2 -
               2.0 * m * l * b * std::cos(th1 - th2) * w1 * w2);
    const double potential =
        p_.gravity * ((m * a + mh * l + m * l) * std::cos(th1) - m * b * std::cos(th2));
    return kinetic + potential;
  }

 private:
  struct Momenta {
    double whole;     // all masses about the reference point
    double trailing;  // swing-leg mass about the hip
  };

  // Point-mass positions and velocities with the stance foot at the origin.
  // The reference point is the stance foot, or the swing foot when requested.
  Momenta momenta(double th1, double th2, double w1, double w2, bool about_swing_foot) const {
    const double m = p_.leg_mass, mh = p_.hip_mass, a = p_.a, b = p_.b, l = leg_length();
    const double s1 = std::sin(th1), c1 = std::cos(th1);
    const double s2 = std::sin(th2), c2 = std::cos(th2);
    struct P {
      double x, y, vx, vy, m;
    };
    const P stance{a * s1, a * c1, a * w1 * c1, -a * w1 * s1, m};
    const P hip{l * s1, l * c1, l * w1 * c1, -l * w1 * s1, mh};
    const P swing{hip.x - b * s2, hip.y - b * c2, hip.vx - b * w2 * c2, hip.vy + b * w2 * s2, m};
    double rx = 0.0, ry = 0.0;
    if (about_swing_foot) {
      rx = hip.x - l * s2;
      ry = hip.y - l * c2;
    }
    auto cross = [](const P& p, double ox, double oy) {
      return p.m * ((p.x - ox) * p.vy - (p.y - oy) * p.vx);
    };
    Momenta out{};
    out.whole = cross(stance, rx, ry) + cross(hip, rx, ry) + cross(swing, rx, ry);
    // The leg that trails after the impact: pre-impact stance leg when
    // measured about the swing foot, otherwise the post-impact swing leg.
    out.trailing = about_swing_foot ? cross(stance, hip.x, hip.y) : cross(swing, hip.x, hip.y);
    return out;
  }

  Params p_;
};

// ---------------------------------------------------------------------------
// Synthetic scatter map

/// Discrete return map that scatters successors uniformly over a
/// k-dimensional cube face of side `side` embedded in `ambient_dim`
/// dimensions (remaining coordinates zero). The successor is a deterministic
/// hash of the input state and the disturbance. A fraction of transitions
/// fail.
class ScatterModel final : public Model {
 public:
  struct Params {
    std::size_t ambient_dim = 13;
    std::size_t intrinsic_dim = 3;
    double side = 1.0;
    double failure_probability = 0.0;
    std::uint64_t seed = 0;
  };

  explicit ScatterModel(Params p) : p_(p) {
    if (p.ambient_dim == 0 || p.intrinsic_dim == 0 || p.intrinsic_dim > p.ambient_dim)
      throw InvalidArgument("scatter model: need 1 <= intrinsic_dim <= ambient_dim");
    if (!(p.side > 0.0)) throw InvalidArgument("scatter model: side must be positive");
    if (!(p.failure_probability >= 0.0 && p.failure_probability <= 1.0))
      throw InvalidArgument("scatter model: failure_probability must be in [0, 1]");
  }

  std::string id() const override { return "scatter"; }
  std::size_t section_dim() const override { return p_.ambient_dim; }

  SimulationOutcome simulate(std::span<const double> x0, Controller&, const Disturbance& gamma,
                             const SimConfig& config) const override {
    if (x0.size() != p_.ambient_dim)
      throw InvalidArgument("scatter model: state dimension mismatch");
    std::vector<std::uint32_t> words;
    words.reserve(2 * x0.size() + 8);
    auto push_bits = [&](double v) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      words.push_back(static_cast<std::uint32_t>(bits));
      words.push_back(static_cast<std::uint32_t>(bits >> 32));
    };
    for (double v : x0) push_bits(v);
    push_bits(gamma.magnitude);
    push_bits(gamma.start_time);
    push_bits(gamma.duration);
    words.push_back(static_cast<std::uint32_t>(p_.seed));
    words.push_back(static_cast<std::uint32_t>(p_.seed >> 32));
    std::seed_seq seq(words.begin(), words.end());
    std::mt19937_64 rng(seq);
    auto uniform = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

    SimulationOutcome out;
    out.cycle_time = std::max(1.0, config.min_cycle_time);
    out.impacts = 2;
    if (uniform() < p_.failure_probability) {
      out.failure = FailureCause::fell;
      return out;
    }
    out.next.coords.assign(p_.ambient_dim, 0.0);
    for (std::size_t i = 0; i < p_.intrinsic_dim; ++i) out.next.coords[i] = p_.side * uniform();
    return out;
  }

 private:
  Params p_;
};

// ---------------------------------------------------------------------------
// Model factory and controllers

struct ModelSpec {
  std::string id = "rimless_wheel";
  std::map<std::string, double> params;
};

namespace detail {
inline void take(std::map<std::string, double>& params, const char* key, double& field) {
  if (auto it = params.find(key); it != params.end()) {
    field = it->second;
    params.erase(it);
  }
}
inline void reject_leftovers(const std::map<std::string, double>& params,
                             const std::string& model) {
  if (!params.empty())
    throw InvalidArgument("unknown parameter '" + params.begin()->first + "' for model " + model);
}
}  // namespace detail

inline std::unique_ptr<Model> make_model(const ModelSpec& spec) {
  auto params = spec.params;
  if (spec.id == "rimless_wheel") {
    RimlessWheel::Params p;
    detail::take(params, "mass", p.mass);
    detail::take(params, "leg_length", p.leg_length);
    detail::take(params, "half_angle", p.half_angle);
    detail::take(params, "slope", p.slope);
    detail::take(params, "gravity", p.gravity);
    detail::reject_leftovers(params, spec.id);
    return std::make_unique<RimlessWheel>(p);
  }
  if (spec.id == "compass_gait") {
    CompassGait::Params p;
    detail::take(params, "leg_mass", p.leg_mass);
    detail::take(params, "hip_mass", p.hip_mass);
    detail::take(params, "a", p.a);
    detail::take(params, "b", p.b);
    detail::take(params, "slope", p.slope);
    detail::take(params, "gravity", p.gravity);
    detail::take(params, "min_interleg", p.min_interleg);
    detail::reject_leftovers(params, spec.id);
    return std::make_unique<CompassGait>(p);
  }
  if (spec.id == "scatter") {
    ScatterModel::Params p;
    double ambient = 13, intrinsic = 3, seed = 0;
    detail::take(params, "ambient_dim", ambient);
    detail::take(params, "intrinsic_dim", intrinsic);
    detail::take(params, "side", p.side);
    detail::take(params, "failure_probability", p.failure_probability);
    detail::take(params, "seed", seed);
    detail::reject_leftovers(params, spec.id);
    if (!(ambient >= 1 && intrinsic >= 1 && seed >= 0))
      throw InvalidArgument("scatter model: dimensions must be >= 1 and seed >= 0");
    p.ambient_dim = static_cast<std::size_t>(ambient);
    p.intrinsic_dim = static_cast<std::size_t>(intrinsic);
    p.seed = static_cast<std::uint64_t>(seed);
    return std::make_unique<ScatterModel>(p);
  }
  throw InvalidArgument("invalid model id '" + spec.id + "'");
}

class PassiveController final : public Controller {
 public:
  void act(std::span<const double>, std::span<double> torque) override {
    std::fill(torque.begin(), torque.end(), 0.0);
  }
};

/// PD on the model's tracked output, saturated to the torque bound.
class PdController final : public Controller {
 public:
  PdController(const Model& model, const PolicySpec& spec) : model_(model), spec_(spec) {}

  void act(std::span<const double> x, std::span<double> torque) override {
    if (torque.empty()) return;
    const auto [y, ydot] = model_.tracked_output(x);
    const double u = spec_.kp * (spec_.target - y) - spec_.kd * ydot;
    torque[0] = saturate(u, spec_.torque_limit);
    for (std::size_t i = 1; i < torque.size(); ++i) torque[i] = 0.0;
  }

 private:
  const Model& model_;
  PolicySpec spec_;
};

/// Queries an external server at every control update. Protocol errors
/// propagate and abort the simulation.
class ExternalController final : public Controller {
 public:
  explicit ExternalController(ExternalPolicyPool::Lease lease) : lease_(std::move(lease)) {}

  void act(std::span<const double> x, std::span<double> torque) override {
    try {
      const auto action = lease_.client().query(x, torque.size());
      std::copy(action.begin(), action.end(), torque.begin());
    } catch (const ProtocolError&) {
      lease_.discard();
      throw;
    }
  }

 private:
  ExternalPolicyPool::Lease lease_;
};

inline std::unique_ptr<Controller> make_controller(const PolicySpec& policy, const Model& model,
                                                   PolicyConnections* connections) {
  policy.validate();
  switch (policy.kind) {
    case PolicyKind::passive: return std::make_unique<PassiveController>();
    case PolicyKind::pd_tracking: return std::make_unique<PdController>(model, policy);
    case PolicyKind::external: {
      if (connections == nullptr)
        throw InvalidArgument("external policy '" + policy.id + "' needs a connection pool");
      auto& pool = connections->pool(
          policy.endpoint,
          std::chrono::milliseconds(static_cast<long>(std::llround(policy.deadline_ms))),
          policy.torque_limit);
      return std::make_unique<ExternalController>(pool.acquire());
    }
  }
  throw InvalidArgument("unknown policy kind");
}

/// One Poincare return: integrates a full gait cycle from the post-impact
/// state `x0` under `policy` and push `gamma`.
inline SimulationOutcome simulate_gait_cycle(std::span<const double> x0, const PolicySpec& policy,
                                             const Disturbance& gamma, const Model& model,
                                             const SimConfig& config,
                                             PolicyConnections* connections = nullptr) {
  detail::simulation_counter().fetch_add(1, std::memory_order_relaxed);
  auto controller = make_controller(policy, model, connections);
  return model.simulate(x0, *controller, gamma, config);
}

inline SimulationOutcome simulate_gait_cycle(const PoincareState& x0, const PolicySpec& policy,
                                             const Disturbance& gamma, const Model& model,
                                             const SimConfig& config,
                                             PolicyConnections* connections = nullptr) {
  return simulate_gait_cycle(std::span<const double>(x0.coords), policy, gamma, model, config,
                             connections);
}

}  // namespace metamesh
