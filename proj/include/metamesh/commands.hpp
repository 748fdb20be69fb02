#pragma once

// Subcommand implementations behind the metamesh executable. Each returns a
// process exit code; errors are reported as one JSON object on stderr and in
// <out>/error.json.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "metamesh/config.hpp"
#include "metamesh/geometry.hpp"
#include "metamesh/io.hpp"
#include "metamesh/markov.hpp"
#include "metamesh/meshing.hpp"
#include "metamesh/svg.hpp"

namespace metamesh {

namespace fs = std::filesystem;

enum ExitCode : int {
  kExitOk = 0,
  kExitIo = 1,
  kExitConfig = 2,
  kExitConvergence = 3,
  kExitTruncated = 4,
};

/// The bundle could not be analyzed because exploration stopped early.
class TruncatedMeshError : public Error {
 public:
  using Error::Error;
};

struct CliOptions {
  std::string config;
  std::string out;
  std::string bundle;
  std::string profile;
  std::string states;
  int verbosity = 0;
  std::optional<unsigned> threads;
  std::ostream* log = &std::cout;
};

namespace detail {

inline std::string env_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : std::string();
}

// Flag, then environment, then config file, then default.
inline fs::path output_dir(const CliOptions& o, const RunConfig* cfg) {
  if (!o.out.empty()) return o.out;
  if (auto env = env_or_empty("METAMESH_OUTPUT_DIR"); !env.empty()) return env;
  if (cfg) return cfg->output_dir;
  return "out";
}

inline unsigned thread_count(const CliOptions& o, const RunConfig* cfg) {
  if (o.threads) {
    if (*o.threads == 0) throw InvalidArgument("--threads must be >= 1");
    return *o.threads;
  }
  if (auto env = env_or_empty("METAMESH_THREADS"); !env.empty()) {
    unsigned v = 0;
    auto [p, ec] = std::from_chars(env.data(), env.data() + env.size(), v);
    if (ec != std::errc{} || p != env.data() + env.size() || v == 0)
      throw InvalidArgument("METAMESH_THREADS must be a positive integer");
    return v;
  }
  return cfg ? cfg->threads : 1u;
}

inline MeshBuildConfig build_settings(const RunConfig& c, unsigned threads) {
  MeshBuildConfig m;
  m.d_tr = c.mesh.d_tr;
  m.weights = c.mesh.weights;
  m.state_cap = c.mesh.state_cap;
  m.batch = c.mesh.batch;
  m.use_index = c.mesh.use_index;
  m.threads = threads;
  m.sim = c.sim;
  return m;
}

inline bool needs_connections(const std::vector<PolicySpec>& policies) {
  for (const auto& p : policies)
    if (p.kind == PolicyKind::external) return true;
  return false;
}

inline void write_config_copy(const fs::path& out, const std::string& command,
                              const RunConfig& cfg) {
  write_json(out / (command + ".config.json"),
             Json{{"config_digest", cfg.digest}, {"config", cfg.resolved}});
}

// Config for bundle-consuming commands: --config if given, else the one the
// bundle was built with.
inline RunConfig bundle_config(const CliOptions& o, const Bundle& b) {
  if (!o.config.empty()) return load_config(o.config);
  try {
    return parse_config(b.config);
  } catch (const Json::exception& e) {
    throw InvalidArgument(std::string("bundle config: ") + e.what());
  }
}

// --bundle, else <build output dir>/bundle. --out only redirects this
// command's own outputs.
inline fs::path bundle_path(const CliOptions& o) {
  if (!o.bundle.empty()) return o.bundle;
  std::optional<RunConfig> cfg;
  if (!o.config.empty()) cfg = load_config(o.config);
  CliOptions without_out = o;
  without_out.out.clear();
  return output_dir(without_out, cfg ? &*cfg : nullptr) / "bundle";
}

// Profile for analysis: --profile override, else the config's profile. It
// must share the bundle's disturbance axis.
inline DisturbanceProfile analysis_profile(const CliOptions& o, RunConfig& cfg,
                                           const Bundle& b) {
  DisturbanceProfile p = o.profile.empty() ? cfg.profile : load_profile(o.profile);
  if (p.size() != b.table.n_disturbances)
    throw InvalidArgument("profile has " + std::to_string(p.size()) +
                          " disturbances but the bundle's disturbance axis has " +
                          std::to_string(b.table.n_disturbances));
  if (disturbance_digest(p.disturbances) != b.mesh.provenance.disturbance_digest)
    throw InvalidArgument("profile disturbances do not match the bundle's disturbance axis "
                          "(digest mismatch)");
  if (b.truncated)
    throw TruncatedMeshError("bundle is truncated (state cap reached); rows past state " +
                             std::to_string(b.explored) + " are unexplored");
  cfg.profile = p;
  cfg.resolved = resolve(cfg);
  cfg.digest = sha256_hex(cfg.resolved.dump());
  return p;
}

inline Json summary_json(const SpectralSummary& s, bool full) {
  Json j{{"lambda2", s.lambda2},
         {"lambda3_bound", json_number(s.lambda3_bound)},
         {"M_exact", json_number(s.M_exact)},
         {"M_eigen", json_number(s.M_eigen)},
         {"gap_ok", s.gap_ok},
         {"phi_unique", s.phi_unique},
         {"residual", s.residual},
         {"iterations", s.iterations}};
  if (full) {
    Json m = Json::array();
    for (double v : s.m) m.push_back(json_number(v));
    j["phi"] = s.phi;
    j["m"] = m;
  }
  return j;
}

inline std::string label_for(const Disturbance& d) {
  std::ostringstream os;
  if (d.is_null) return "null";
  os << format_double(d.magnitude) << "N@" << format_double(d.start_time);
  return os.str();
}

inline std::string pair_label(std::size_t i, bool pca) {
  return (pca ? "PC" : "x") + std::to_string(pca ? i + 1 : i);
}

inline std::vector<svg::Panel> panels(std::span<const double> coords, std::size_t k,
                                      std::span<const double> sizes,
                                      const std::vector<char>& highlight, bool pca,
                                      std::span<const std::size_t> axis_ids) {
  std::vector<svg::Panel> out;
  const std::size_t n = coords.size() / k;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b) {
      svg::Panel p;
      p.xlabel = pair_label(axis_ids[a], pca);
      p.ylabel = pair_label(axis_ids[b], pca);
      for (std::size_t i = 0; i < n; ++i)
        p.points.push_back({coords[i * k + a], coords[i * k + b], sizes[i],
                            !highlight.empty() && highlight[i]});
      out.push_back(std::move(p));
    }
  if (k == 1) {
    svg::Panel p;
    p.xlabel = "sample";
    p.ylabel = pair_label(axis_ids[0], pca);
    for (std::size_t i = 0; i < n; ++i)
      p.points.push_back({static_cast<double>(i), coords[i], sizes[i],
                          !highlight.empty() && highlight[i]});
    out.push_back(std::move(p));
  }
  return out;
}

// Projects rows of `flat` (dim wide) per the config: PCA when no axes are
// given, raw coordinate slices otherwise. Writes CSV, JSON and SVG.
inline void write_projection(const fs::path& out, const std::string& stem,
                             std::span<const double> flat, std::size_t dim,
                             const ProjectSettings& ps, std::span<const std::size_t> ids,
                             std::span<const double> sizes, const std::vector<char>& highlight,
                             const std::string& digest, const std::string& title) {
  const std::size_t n = flat.size() / dim;
  std::vector<double> coords;
  std::vector<std::size_t> axis_ids;
  Json meta{{"config_digest", digest}, {"states", n}};
  std::ostringstream var_csv;
  var_csv << csv_preamble(digest) << "component,variance_explained\n";
  const bool pca = ps.axes.empty();
  std::size_t k;
  if (pca) {
    k = ps.k;
    const auto proj = pca_project(flat, dim, k);
    coords = proj.projected;
    for (std::size_t i = 0; i < k; ++i) {
      axis_ids.push_back(i);
      var_csv << (i + 1) << "," << format_double(proj.variance_explained[i]) << "\n";
    }
    Json comps = Json::array();
    for (std::size_t i = 0; i < k; ++i) {
      const auto c = proj.component(i);
      comps.push_back(std::vector<double>(c.begin(), c.end()));
    }
    meta["mode"] = "pca";
    meta["k"] = k;
    meta["variance_explained"] = proj.variance_explained;
    meta["components"] = comps;
    meta["mean"] = proj.mean;
    meta["scale"] = proj.scale;
  } else {
    std::set<std::size_t> distinct;
    for (double a : ps.axes) {
      if (a < 0 || a != std::floor(a) || a >= static_cast<double>(dim))
        throw InvalidArgument("project.axes entries must be coordinate indices below " +
                              std::to_string(dim));
      axis_ids.push_back(static_cast<std::size_t>(a));
      distinct.insert(axis_ids.back());
    }
    if (distinct.size() != axis_ids.size() || axis_ids.size() < 2 || axis_ids.size() > 3)
      throw InvalidArgument("project.axes must name 2 or 3 distinct coordinates");
    k = axis_ids.size();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t a : axis_ids) coords.push_back(flat[i * dim + a]);
    meta["mode"] = "axes";
    meta["axes"] = axis_ids;
  }

  std::ostringstream csv;
  csv << csv_preamble(digest) << "index";
  for (std::size_t a = 0; a < k; ++a) csv << "," << pair_label(axis_ids[a], pca);
  csv << ",dangerous,weight\n";
  for (std::size_t i = 0; i < n; ++i) {
    csv << ids[i];
    for (std::size_t a = 0; a < k; ++a) csv << "," << format_double(coords[i * k + a]);
    csv << "," << (!highlight.empty() && highlight[i] ? 1 : 0) << "," << format_double(sizes[i])
        << "\n";
  }
  write_text(out / (stem + ".csv"), csv.str());
  if (pca) write_text(out / (stem + "_variance.csv"), var_csv.str());
  write_json(out / (stem + ".json"), meta);
  const auto ps_panels = panels(coords, k, sizes, highlight, pca, axis_ids);
  write_text(out / (stem + ".svg"), svg::scatter(ps_panels, title, digest, !highlight.empty()));
}

}  // namespace detail

/// Runs `body`, mapping exceptions to exit codes and an error report.
inline int run_command(const std::string& name, const CliOptions& o,
                       const std::function<int()>& body) {
  int code = kExitOk;
  std::string kind, message;
  try {
    return body();
  } catch (const TruncatedMeshError& e) {
    code = kExitTruncated, kind = "truncated_mesh", message = e.what();
  } catch (const ConvergenceError& e) {
    code = kExitConvergence, kind = "non_convergence", message = e.what();
  } catch (const IoError& e) {
    code = kExitIo, kind = "io", message = e.what();
  } catch (const ProtocolError& e) {
    code = kExitIo, kind = "policy_protocol", message = e.what();
  } catch (const InvalidArgument& e) {
    code = kExitConfig, kind = "config", message = e.what();
  } catch (const Json::exception& e) {
    code = kExitConfig, kind = "config", message = e.what();
  } catch (const std::exception& e) {
    code = kExitIo, kind = "internal", message = e.what();
  }
  const Json report{{"error", {{"command", name}, {"kind", kind}, {"message", message},
                               {"exit_code", code}}}};
  std::cerr << report.dump() << std::endl;
  try {
    const fs::path out = o.out.empty() ? detail::output_dir(o, nullptr) : fs::path(o.out);
    ensure_directory(out);
    write_json(out / "error.json", report);
  } catch (const std::exception&) {
    // Reporting is best effort; stderr already has it.
  }
  return code;
}

inline int cmd_build(const CliOptions& o) {
  if (o.config.empty()) throw InvalidArgument("build needs --config");
  const RunConfig cfg = load_config(o.config);
  const fs::path out = detail::output_dir(o, &cfg);
  const unsigned threads = detail::thread_count(o, &cfg);
  const auto model = make_model(cfg.model);

  std::optional<PolicyConnections> connections;
  if (detail::needs_connections(cfg.policies)) connections.emplace(threads);

  const auto t0 = std::chrono::steady_clock::now();
  auto built = build_mesh(PoincareState{cfg.initial_state}, cfg.policies, cfg.profile, *model,
                          detail::build_settings(cfg, threads),
                          connections ? &*connections : nullptr);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  Bundle b;
  b.mesh = std::move(built.mesh);
  b.table = std::move(built.table);
  b.profile = cfg.profile;
  b.policies = cfg.policies;
  b.truncated = built.truncated;
  b.explored = built.explored;
  b.failures = built.failures;
  b.simulations = built.simulations;
  b.config = cfg.resolved;
  auto& prov = b.mesh.provenance;
  prov.model_id = cfg.model.id;
  for (const auto& p : cfg.policies) prov.policy_ids.push_back(p.id);
  prov.profile_id = cfg.profile.id;
  prov.config_digest = cfg.digest;
  prov.disturbance_digest = disturbance_digest(cfg.profile.disturbances);
  prov.seed = cfg.seed;

  ensure_directory(out);
  write_bundle(out / "bundle", b);
  write_text(out / "mesh_states.csv", mesh_states_csv(b.mesh, cfg.digest));
  write_text(out / "table.csv", table_csv(b.table, cfg.digest));
  std::size_t failure_transitions = 0;
  for (std::size_t s = 1; s < b.table.n_states; ++s)
    for (std::size_t k = 0; k < b.table.n_controllers * b.table.n_disturbances; ++k)
      if (b.table.entries[s * b.table.n_controllers * b.table.n_disturbances + k] == 0)
        ++failure_transitions;
  write_json(out / "build_summary.json",
             Json{{"config_digest", cfg.digest},
                  {"n_states", b.mesh.size()},
                  {"failure_transitions", failure_transitions},
                  {"failures",
                   {{"fell", b.failures.fell},
                    {"timeout", b.failures.timeout},
                    {"integration_error", b.failures.integration_error}}},
                  {"simulations", b.simulations},
                  {"truncated", b.truncated},
                  {"explored", b.explored}});
  detail::write_config_copy(out, "build", cfg);

  *o.log << "build: N=" << b.mesh.size() << " failure_transitions=" << failure_transitions
         << " simulations=" << b.simulations << " wall_time_s=" << svg::fixed(seconds, 3)
         << (b.truncated ? " TRUNCATED" : "") << "\n";
  if (o.verbosity > 0)
    *o.log << "  failures: fell=" << b.failures.fell << " timeout=" << b.failures.timeout
           << " integration_error=" << b.failures.integration_error << "\n"
           << "  bundle: " << (out / "bundle").string() << "\n";
  return b.truncated ? kExitTruncated : kExitOk;
}

inline int cmd_analyze(const CliOptions& o) {
  const fs::path bpath = detail::bundle_path(o);
  const Bundle b = read_bundle(bpath);
  RunConfig cfg = detail::bundle_config(o, b);
  const fs::path out = detail::output_dir(o, &cfg);
  const auto profile = detail::analysis_profile(o, cfg, b);
  if (cfg.analysis.controller >= b.table.n_controllers)
    throw InvalidArgument("analysis.controller is out of range for this bundle");

  const auto t = assemble_stochastic(b.table, cfg.analysis.controller, profile);
  const auto s = analyze_chain(t);
  const auto danger = dangerous_states(t, cfg.analysis.dangerous_threshold);

  Json nstep = Json::array();
  for (double n : cfg.analysis.n_steps)
    nstep.push_back(Json{{"n", static_cast<std::size_t>(n)},
                         {"probability", n_step_failure_prob(s.lambda2, static_cast<std::size_t>(n))}});
  Json j = detail::summary_json(s, cfg.analysis.full_vectors);
  j["config_digest"] = cfg.digest;
  j["bundle_config_digest"] = b.mesh.provenance.config_digest;
  j["disturbance_digest"] = b.mesh.provenance.disturbance_digest;
  j["profile"] = profile_to_json(profile);
  j["controller"] = cfg.analysis.controller;
  j["n_states"] = b.mesh.size();
  j["dangerous_threshold"] = cfg.analysis.dangerous_threshold;
  j["dangerous_count"] = danger.size();
  j["dangerous_states"] = danger;
  j["n_step_failure"] = nstep;

  ensure_directory(out);
  write_json(out / "analysis.json", j);
  std::ostringstream csv;
  csv << csv_preamble(cfg.digest) << "state,phi,m,failure_prob,dangerous\n";
  const std::set<std::size_t> dset(danger.begin(), danger.end());
  for (std::size_t i = 1; i < t.size(); ++i)
    csv << i << "," << format_double(s.phi[i - 1]) << "," << format_double(s.m[i]) << ","
        << format_double(t.failure_probability(i)) << "," << (dset.count(i) ? 1 : 0) << "\n";
  write_text(out / "mfpt.csv", csv.str());
  write_text(out / "matrix.csv", matrix_csv(t, cfg.digest));
  detail::write_config_copy(out, "analyze", cfg);

  *o.log << "analyze: profile=" << profile.id << " N=" << b.mesh.size()
         << " lambda2=" << format_double(s.lambda2) << " M_exact=" << format_double(s.M_exact)
         << " M_eigen=" << format_double(s.M_eigen) << " gap_ok=" << (s.gap_ok ? "true" : "false")
         << " dangerous=" << danger.size() << "\n";
  return kExitOk;
}

inline int cmd_sweep(const CliOptions& o) {
  const Bundle b = read_bundle(detail::bundle_path(o));
  RunConfig cfg = detail::bundle_config(o, b);
  const fs::path out = detail::output_dir(o, &cfg);
  const unsigned threads = detail::thread_count(o, &cfg);
  const auto profile = detail::analysis_profile(o, cfg, b);
  const auto points = sensitivity_sweep(b.table, cfg.analysis.controller, profile,
                                        cfg.analysis.sensitivity, {}, threads);

  std::ostringstream csv;
  csv << csv_preamble(cfg.digest) << "index,magnitude,start_time,M\n";
  Json entries = Json::array();
  std::vector<svg::Bar> bars;
  for (const auto& p : points) {
    const Disturbance& d = profile.disturbances[p.disturbance];
    const double m = p.ok() ? p.M : std::numeric_limits<double>::quiet_NaN();
    csv << p.disturbance << "," << format_double(d.magnitude) << ","
        << format_double(d.start_time) << "," << format_double(m) << "\n";
    Json e{{"index", p.disturbance}, {"magnitude", d.magnitude}, {"start_time", d.start_time},
           {"duration", d.duration}, {"M", json_number(m)}, {"probabilities", p.probabilities}};
    if (!p.ok()) e["error"] = p.error;
    entries.push_back(e);
    bars.push_back({std::to_string(p.disturbance), m});
  }
  ensure_directory(out);
  write_text(out / "sweep.csv", csv.str());
  write_json(out / "sweep.json",
             Json{{"config_digest", cfg.digest},
                  {"controller", cfg.analysis.controller},
                  {"p_null", cfg.analysis.sensitivity.p_null},
                  {"p_interest", cfg.analysis.sensitivity.p_interest},
                  {"entries", entries}});
  write_text(out / "sweep.svg",
             svg::mfpt_bars(bars, "MFPT per disturbance of interest", cfg.digest));
  detail::write_config_copy(out, "sweep", cfg);
  std::size_t infinite = 0, failed = 0;
  for (const auto& p : points) {
    if (!p.ok()) ++failed;
    else if (std::isinf(p.M)) ++infinite;
  }
  *o.log << "sweep: " << points.size() << " disturbances, " << infinite << " infinite, "
         << failed << " failed\n";
  return kExitOk;
}

inline int cmd_dims(const CliOptions& o) {
  if (o.config.empty()) throw InvalidArgument("dims needs --config");
  const RunConfig cfg = load_config(o.config);
  const fs::path out = detail::output_dir(o, &cfg);
  const unsigned threads = detail::thread_count(o, &cfg);
  if (cfg.mesh.d_tr_sweep.size() < 2)
    throw InvalidArgument("mesh.d_tr_sweep needs at least two thresholds");
  const auto model = make_model(cfg.model);
  std::optional<PolicyConnections> connections;
  if (detail::needs_connections(cfg.policies)) connections.emplace(threads);

  const auto points = mesh_growth_sweep(PoincareState{cfg.initial_state}, cfg.policies,
                                        cfg.profile, cfg.mesh.d_tr_sweep, *model,
                                        detail::build_settings(cfg, threads),
                                        connections ? &*connections : nullptr);
  std::ostringstream csv;
  csv << csv_preamble(cfg.digest) << "d_tr,N,truncated,error\n";
  for (const auto& p : points)
    csv << format_double(p.d_tr) << "," << p.n_states << "," << (p.truncated ? 1 : 0) << ","
        << '"' << p.error << '"' << "\n";
  ensure_directory(out);
  write_text(out / "dims.csv", csv.str());
  detail::write_config_copy(out, "dims", cfg);

  const auto samples = dimension_samples(points);
  const auto fit = estimate_dimension(samples);
  Json js = Json::array();
  for (const auto& s : fit.samples) js.push_back(Json{{"d_tr", s.d_tr}, {"N", s.count}});
  write_json(out / "dims.json", Json{{"config_digest", cfg.digest},
                                     {"samples", js},
                                     {"slope", fit.slope},
                                     {"intercept", fit.intercept},
                                     {"n_hat", fit.n_hat},
                                     {"r_squared", fit.r_squared}});
  write_text(out / "dims.svg", svg::dimension_plot(fit, cfg.digest));
  *o.log << "dims: n_hat=" << format_double(fit.n_hat) << " r2=" << format_double(fit.r_squared)
         << " from " << fit.samples.size() << " thresholds\n";
  return kExitOk;
}

inline int cmd_project(const CliOptions& o) {
  std::vector<double> flat;
  std::size_t dim = 0;
  std::vector<std::size_t> ids;
  std::vector<double> sizes;
  std::vector<char> highlight;
  RunConfig cfg;
  std::string title;
  if (!o.states.empty()) {
    if (o.config.empty()) throw InvalidArgument("project --states needs --config");
    cfg = load_config(o.config);
    const auto states = read_states_csv(o.states);
    dim = states.front().dim();
    for (std::size_t i = 0; i < states.size(); ++i) {
      flat.insert(flat.end(), states[i].coords.begin(), states[i].coords.end());
      ids.push_back(i);
      sizes.push_back(1.0);
    }
    title = "projected states";
  } else {
    const Bundle b = read_bundle(detail::bundle_path(o));
    cfg = detail::bundle_config(o, b);
    dim = b.mesh.dim();
    const auto data = b.mesh.data();
    flat.assign(data.begin() + static_cast<std::ptrdiff_t>(dim), data.end());
    for (std::size_t i = 1; i < b.mesh.size(); ++i) ids.push_back(i);
    // Marker size follows the metastable distribution; dangerous states are
    // highlighted when the chain can be assembled.
    sizes.assign(ids.size(), 1.0);
    if (!b.truncated) {
      const auto profile = detail::analysis_profile(o, cfg, b);
      const auto t = assemble_stochastic(b.table, cfg.analysis.controller, profile);
      highlight.assign(ids.size(), 0);
      for (auto i : dangerous_states(t, cfg.analysis.dangerous_threshold)) highlight[i - 1] = 1;
      const auto md = metastable_distribution(t);
      sizes = md.phi;
    }
    title = "mesh states";
  }
  const fs::path out = detail::output_dir(o, &cfg);
  ensure_directory(out);
  detail::write_projection(out, "projection", flat, dim, cfg.project, ids, sizes, highlight,
                           cfg.digest, title);
  detail::write_config_copy(out, "project", cfg);
  *o.log << "project: " << ids.size() << " states, "
         << (cfg.project.axes.empty() ? "pca k=" + std::to_string(cfg.project.k) : "axes")
         << "\n";
  return kExitOk;
}

inline int cmd_lump(const CliOptions& o) {
  if (o.config.empty()) throw InvalidArgument("lump needs --config");
  const RunConfig cfg = load_config(o.config);
  const fs::path out = detail::output_dir(o, &cfg);
  const unsigned threads = detail::thread_count(o, &cfg);
  const double d_tr = cfg.lump.d_tr > 0.0 ? cfg.lump.d_tr : cfg.mesh.d_tr;

  std::vector<PoincareState> seq;
  bool ended_in_failure = false;
  if (!o.states.empty()) {
    seq = read_states_csv(o.states);
  } else {
    const auto model = make_model(cfg.model);
    std::optional<PolicyConnections> connections;
    if (detail::needs_connections(cfg.policies)) connections.emplace(threads);
    seq = simulate_trajectory(PoincareState{cfg.initial_state},
                              cfg.policies[cfg.analysis.controller], *model, cfg.sim,
                              cfg.lump.cycles, connections ? &*connections : nullptr);
    ended_in_failure = seq.size() < cfg.lump.cycles + 1;
  }
  const auto lumped = lump_trajectory(seq, d_tr, cfg.mesh.weights);

  ensure_directory(out);
  std::ostringstream assign;
  assign << csv_preamble(cfg.digest) << "cycle,state\n";
  for (std::size_t i = 0; i < lumped.assignment.size(); ++i)
    assign << i << "," << lumped.assignment[i] << "\n";
  write_text(out / "lump_assignment.csv", assign.str());

  std::ostringstream states;
  states << csv_preamble(cfg.digest) << "index,visits";
  for (std::size_t k = 0; k < lumped.mesh.dim(); ++k) states << ",x" << k;
  states << "\n";
  for (std::size_t i = 1; i < lumped.mesh.size(); ++i) {
    states << i << "," << lumped.visits[i];
    for (double v : lumped.mesh.state(i)) states << "," << format_double(v);
    states << "\n";
  }
  write_text(out / "lump_states.csv", states.str());

  std::ostringstream edges;
  edges << csv_preamble(cfg.digest) << "from,to,count\n";
  for (const auto& e : lumped.transitions) edges << e.from << "," << e.to << "," << e.count << "\n";
  write_text(out / "lump_transitions.csv", edges.str());

  write_json(out / "lump.json", Json{{"config_digest", cfg.digest},
                                     {"d_tr", d_tr},
                                     {"sequence_length", seq.size()},
                                     {"n_states", lumped.mesh.size() - 1},
                                     {"ended_in_failure", ended_in_failure}});
  detail::write_config_copy(out, "lump", cfg);

  // Figure: visit-scaled markers, PCA when there are enough states.
  const std::size_t n = lumped.mesh.size() - 1;
  const std::size_t dim = lumped.mesh.dim();
  const auto data = lumped.mesh.data();
  std::vector<double> flat(data.begin() + static_cast<std::ptrdiff_t>(dim), data.end());
  std::vector<std::size_t> ids;
  std::vector<double> sizes;
  for (std::size_t i = 1; i <= n; ++i) {
    ids.push_back(i);
    sizes.push_back(static_cast<double>(lumped.visits[i]));
  }
  ProjectSettings ps = cfg.project;
  if (ps.axes.empty()) ps.k = std::min({ps.k, dim, n > 1 ? n - 1 : std::size_t{0}});
  if (!ps.axes.empty() || ps.k > 0)
    detail::write_projection(out, "lump_projection", flat, dim, ps, ids, sizes, {}, cfg.digest,
                             "lumped trajectory states");

  *o.log << "lump: " << seq.size() << " states -> " << n << " mesh points (d_tr="
         << format_double(d_tr) << ")" << (ended_in_failure ? ", trajectory ended in failure" : "")
         << "\n";
  return kExitOk;
}

}  // namespace metamesh
