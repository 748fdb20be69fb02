#pragma once

// Declarative run configuration (JSON). Every key is checked; unknown keys
// are errors. The resolved form, with defaults filled in, is what gets
// digested and written next to every output.

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "metamesh/common.hpp"
#include "metamesh/dynamics.hpp"
#include "metamesh/markov.hpp"

namespace metamesh {

using Json = nlohmann::json;

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 15]);
  }
  return out;
}

/// JSON has no infinity; non-finite values are written as strings.
inline Json json_number(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

inline double number_from_json(const Json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return kInfinity;
    if (s == "-inf") return -kInfinity;
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw InvalidArgument("expected a number, got " + j.dump());
}

namespace detail {

// Reads an object's fields by name and complains about leftovers.
class Fields {
 public:
  Fields(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw InvalidArgument(where() + ": expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  const Json& raw(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw InvalidArgument(where() + ": missing required key '" + key + "'");
    return j_.at(key);
  }

  double number(const char* key, std::optional<double> fallback = std::nullopt) {
    if (!has(key)) return required(key, fallback);
    const Json& v = raw(key);
    if (!v.is_number()) throw InvalidArgument(at(key) + ": expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw InvalidArgument(at(key) + ": must be finite");
    return d;
  }

  std::size_t count(const char* key, std::optional<std::size_t> fallback = std::nullopt) {
    if (!has(key)) return required(key, fallback);
    const Json& v = raw(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
      throw InvalidArgument(at(key) + ": expected a non-negative integer");
    return v.get<std::size_t>();
  }

  bool flag(const char* key, std::optional<bool> fallback = std::nullopt) {
    if (!has(key)) return required(key, fallback);
    const Json& v = raw(key);
    if (!v.is_boolean()) throw InvalidArgument(at(key) + ": expected true or false");
    return v.get<bool>();
  }

  std::string text(const char* key, std::optional<std::string> fallback = std::nullopt) {
    if (!has(key)) return required(key, fallback);
    const Json& v = raw(key);
    if (!v.is_string()) throw InvalidArgument(at(key) + ": expected a string");
    return v.get<std::string>();
  }

  std::vector<double> numbers(const char* key, std::optional<std::vector<double>> fallback = {}) {
    if (!has(key)) return required(key, fallback);
    const Json& v = raw(key);
    if (!v.is_array()) throw InvalidArgument(at(key) + ": expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number() || !std::isfinite(e.get<double>()))
        throw InvalidArgument(at(key) + ": expected finite numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::string at(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw InvalidArgument("unknown configuration key '" + at(it.key().c_str()) + "'");
  }

 private:
  template <class T>
  T required(const char* key, const std::optional<T>& fallback) {
    seen_.insert(key);
    if (!fallback) throw InvalidArgument(where() + ": missing required key '" + key + "'");
    return *fallback;
  }
  std::string where() const { return path_.empty() ? "config" : path_; }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

struct MeshSettings {
  double d_tr = 0.0;
  std::vector<double> d_tr_sweep;
  std::vector<double> weights;
  std::size_t state_cap = 1'000'000;
  std::size_t batch = 64;
  bool use_index = true;
};

struct AnalysisSettings {
  std::size_t controller = 0;
  double dangerous_threshold = 0.99;
  bool full_vectors = true;
  std::vector<double> n_steps{1, 10, 100};
  SensitivityWeights sensitivity;
};

struct ProjectSettings {
  std::size_t k = 3;
  std::vector<double> axes;  // empty: PCA; otherwise raw coordinate indices
};

struct LumpSettings {
  std::size_t cycles = 250;
  double d_tr = 0.0;  // 0: use mesh.d_tr
};

struct RunConfig {
  ModelSpec model;
  std::vector<double> initial_state;
  bool initial_limit_cycle = false;
  std::vector<PolicySpec> policies;
  DisturbanceProfile profile;
  MeshSettings mesh;
  SimConfig sim;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  unsigned threads = 1;
  AnalysisSettings analysis;
  ProjectSettings project;
  LumpSettings lump;

  Json resolved;       // canonical form with defaults
  std::string digest;  // sha256 of resolved.dump()
};

inline Json disturbance_to_json(const Disturbance& d) {
  return Json{{"magnitude", d.magnitude},
              {"start_time", d.start_time},
              {"duration", d.duration},
              {"target", d.target},
              {"null", d.is_null}};
}

inline Json disturbances_to_json(std::span<const Disturbance> ds) {
  Json arr = Json::array();
  for (const auto& d : ds) arr.push_back(disturbance_to_json(d));
  return arr;
}

/// Digest of the disturbance axis alone; probabilities may change freely.
inline std::string disturbance_digest(std::span<const Disturbance> ds) {
  return sha256_hex(disturbances_to_json(ds).dump());
}

inline Json profile_to_json(const DisturbanceProfile& p) {
  Json probs = Json::array();
  for (double v : p.probabilities) probs.push_back(v);
  return Json{{"id", p.id}, {"disturbances", disturbances_to_json(p.disturbances)},
              {"probabilities", probs}};
}

inline Disturbance parse_disturbance(const Json& j, const std::string& path) {
  detail::Fields f(j, path);
  Disturbance d;
  d.magnitude = f.number("magnitude", 0.0);
  d.start_time = f.number("start_time", 0.0);
  d.duration = f.number("duration", 0.0);
  d.target = f.text("target", std::string("torso"));
  d.is_null = f.flag("null", d.magnitude == 0.0);
  f.finish();
  d.validate();
  return d;
}

inline DisturbanceProfile parse_profile(const Json& j, const std::string& path = "profile") {
  detail::Fields f(j, path);
  DisturbanceProfile p;
  p.id = f.text("id", std::string("profile"));
  const Json& list = f.raw("disturbances");
  if (!list.is_array() || list.empty())
    throw InvalidArgument(f.at("disturbances") + ": expected a non-empty array");
  for (std::size_t i = 0; i < list.size(); ++i)
    p.disturbances.push_back(
        parse_disturbance(list[i], f.at("disturbances") + "[" + std::to_string(i) + "]"));
  p.probabilities = f.numbers("probabilities");
  f.finish();
  p.validate();
  return p;
}

inline PolicySpec parse_policy(const Json& j, const std::string& path) {
  detail::Fields f(j, path);
  PolicySpec p;
  const std::string kind = f.text("kind", std::string("passive"));
  if (kind == "passive") {
    p.kind = PolicyKind::passive;
  } else if (kind == "pd_tracking") {
    p.kind = PolicyKind::pd_tracking;
    p.kp = f.number("kp");
    p.kd = f.number("kd");
    p.target = f.number("target", 0.0);
  } else if (kind == "external") {
    p.kind = PolicyKind::external;
    p.endpoint = f.text("endpoint");
    p.deadline_ms = f.number("deadline_ms", 100.0);
  } else {
    throw InvalidArgument(f.at("kind") + ": unknown policy kind '" + kind + "'");
  }
  p.id = f.text("id", kind);
  p.torque_limit = f.number("torque_limit", kDefaultTorqueLimit);
  f.finish();
  p.validate();
  return p;
}

inline Json policy_to_json(const PolicySpec& p) {
  Json j{{"id", p.id}, {"kind", std::string(to_string(p.kind))}, {"torque_limit", p.torque_limit}};
  if (p.kind == PolicyKind::pd_tracking) {
    j["kp"] = p.kp;
    j["kd"] = p.kd;
    j["target"] = p.target;
  }
  if (p.kind == PolicyKind::external) {
    j["endpoint"] = p.endpoint;
    j["deadline_ms"] = p.deadline_ms;
  }
  return j;
}

inline Json resolve(const RunConfig& c) {
  Json model{{"id", c.model.id}, {"params", Json::object()}};
  for (const auto& [k, v] : c.model.params) model["params"][k] = v;
  Json policies = Json::array();
  for (const auto& p : c.policies) policies.push_back(policy_to_json(p));
  Json initial = c.initial_limit_cycle ? Json("limit_cycle") : Json(c.initial_state);
  return Json{
      {"model", model},
      {"initial_state", initial},
      {"policies", policies},
      {"profile", profile_to_json(c.profile)},
      {"mesh",
       {{"d_tr", c.mesh.d_tr},
        {"d_tr_sweep", c.mesh.d_tr_sweep},
        {"weights", c.mesh.weights},
        {"state_cap", c.mesh.state_cap},
        {"batch", c.mesh.batch},
        {"use_index", c.mesh.use_index}}},
      {"integrator",
       {{"dt", c.sim.dt},
        {"control_hold", c.sim.control_hold},
        {"min_cycle_time", c.sim.min_cycle_time},
        {"timeout", c.sim.timeout},
        {"event_tolerance", c.sim.event_tolerance},
        {"height_fraction", c.sim.height_fraction}}},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"threads", c.threads},
      {"analysis",
       {{"controller", c.analysis.controller},
        {"dangerous_threshold", c.analysis.dangerous_threshold},
        {"full_vectors", c.analysis.full_vectors},
        {"n_steps", c.analysis.n_steps},
        {"sensitivity",
         {{"p_null", c.analysis.sensitivity.p_null},
          {"p_interest", c.analysis.sensitivity.p_interest}}}}},
      {"project", {{"k", c.project.k}, {"axes", c.project.axes}}},
      {"lump", {{"cycles", c.lump.cycles}, {"d_tr", c.lump.d_tr}}},
  };
}

inline RunConfig parse_config(const Json& j) {
  detail::Fields f(j, "");
  RunConfig c;

  {
    detail::Fields m(f.raw("model"), "model");
    c.model.id = m.text("id");
    if (m.has("params")) {
      const Json& params = m.raw("params");
      if (!params.is_object()) throw InvalidArgument("model.params: expected an object");
      for (auto it = params.begin(); it != params.end(); ++it) {
        if (!it.value().is_number())
          throw InvalidArgument("model.params." + it.key() + ": expected a number");
        c.model.params[it.key()] = it.value().get<double>();
      }
    }
    m.finish();
  }
  c.seed = f.count("seed", 0);
  if (c.model.id == "scatter" && !c.model.params.count("seed"))
    c.model.params["seed"] = static_cast<double>(c.seed);
  const auto model = make_model(c.model);  // validates the parameters

  if (f.has("initial_state") && f.raw("initial_state").is_string()) {
    if (f.raw("initial_state").get<std::string>() != "limit_cycle")
      throw InvalidArgument("initial_state: expected an array or \"limit_cycle\"");
    const auto* wheel = dynamic_cast<const RimlessWheel*>(model.get());
    if (wheel == nullptr)
      throw InvalidArgument("initial_state \"limit_cycle\" is only available for rimless_wheel");
    c.initial_limit_cycle = true;
    c.initial_state = wheel->limit_cycle_state();
  } else {
    c.initial_state = f.numbers("initial_state");
  }
  if (c.initial_state.size() != model->section_dim())
    throw InvalidArgument("initial_state has " + std::to_string(c.initial_state.size()) +
                          " coordinates, model " + c.model.id + " expects " +
                          std::to_string(model->section_dim()));

  if (f.has("policies")) {
    const Json& list = f.raw("policies");
    if (!list.is_array() || list.empty())
      throw InvalidArgument("policies: expected a non-empty array");
    for (std::size_t i = 0; i < list.size(); ++i)
      c.policies.push_back(parse_policy(list[i], "policies[" + std::to_string(i) + "]"));
  } else {
    c.policies.push_back(PolicySpec{});
  }

  c.profile = parse_profile(f.raw("profile"));
  if (!c.profile.disturbances[0].is_null)
    throw InvalidArgument("profile.disturbances[0] must be the null push");

  {
    detail::Fields m(f.raw("mesh"), "mesh");
    c.mesh.d_tr = m.number("d_tr");
    if (!(c.mesh.d_tr > 0.0)) throw InvalidArgument("mesh.d_tr must be positive");
    c.mesh.d_tr_sweep = m.numbers("d_tr_sweep", std::vector<double>{});
    c.mesh.weights = m.numbers("weights", std::vector<double>{});
    if (!c.mesh.weights.empty() && c.mesh.weights.size() != model->section_dim())
      throw InvalidArgument("mesh.weights must have one entry per state coordinate");
    c.mesh.state_cap = m.count("state_cap", c.mesh.state_cap);
    c.mesh.batch = m.count("batch", c.mesh.batch);
    c.mesh.use_index = m.flag("use_index", true);
    m.finish();
  }

  if (f.has("integrator")) {
    detail::Fields s(f.raw("integrator"), "integrator");
    c.sim.dt = s.number("dt", c.sim.dt);
    c.sim.control_hold = static_cast<int>(s.count("control_hold", 4));
    c.sim.min_cycle_time = s.number("min_cycle_time", c.sim.min_cycle_time);
    c.sim.timeout = s.number("timeout", c.sim.timeout);
    c.sim.event_tolerance = s.number("event_tolerance", c.sim.event_tolerance);
    c.sim.height_fraction = s.number("height_fraction", c.sim.height_fraction);
    s.finish();
  }
  c.sim.validate();

  c.output_dir = f.text("output_dir", c.output_dir);
  c.threads = static_cast<unsigned>(f.count("threads", 1));
  if (c.threads == 0) throw InvalidArgument("threads must be >= 1");

  if (f.has("analysis")) {
    detail::Fields a(f.raw("analysis"), "analysis");
    c.analysis.controller = a.count("controller", 0);
    c.analysis.dangerous_threshold = a.number("dangerous_threshold", 0.99);
    c.analysis.full_vectors = a.flag("full_vectors", true);
    c.analysis.n_steps = a.numbers("n_steps", c.analysis.n_steps);
    if (a.has("sensitivity")) {
      detail::Fields s(a.raw("sensitivity"), "analysis.sensitivity");
      c.analysis.sensitivity.p_null = s.number("p_null", 0.4);
      c.analysis.sensitivity.p_interest = s.number("p_interest", 0.5);
      s.finish();
    }
    a.finish();
  }
  if (c.analysis.controller >= c.policies.size())
    throw InvalidArgument("analysis.controller is out of range");
  for (double n : c.analysis.n_steps)
    if (!(n >= 1.0) || n != std::floor(n))
      throw InvalidArgument("analysis.n_steps entries must be integers >= 1");

  if (f.has("project")) {
    detail::Fields p(f.raw("project"), "project");
    c.project.k = p.count("k", 3);
    c.project.axes = p.numbers("axes", std::vector<double>{});
    p.finish();
  }
  if (f.has("lump")) {
    detail::Fields l(f.raw("lump"), "lump");
    c.lump.cycles = l.count("cycles", 250);
    c.lump.d_tr = l.number("d_tr", 0.0);
    l.finish();
  }
  f.finish();

  c.resolved = resolve(c);
  c.digest = sha256_hex(c.resolved.dump());
  return c;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw InvalidArgument("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline RunConfig load_config(const std::string& path) {
  const Json j = read_json_file(path);
  try {
    return parse_config(j);
  } catch (const Json::exception& e) {
    throw InvalidArgument(path + ": " + e.what());
  }
}

/// A profile override file holds either a bare profile or a full config.
inline DisturbanceProfile load_profile(const std::string& path) {
  const Json j = read_json_file(path);
  try {
    if (j.is_object() && j.contains("model")) return load_config(path).profile;
    return parse_profile(j);
  } catch (const Json::exception& e) {
    throw InvalidArgument(path + ": " + e.what());
  }
}

}  // namespace metamesh
