#pragma once

// On-disk formats. A bundle is a directory holding
//   mesh.json   header: dimensions, threshold, provenance, disturbance axis
//   states.f64  N * dim little-endian doubles (row 0 is the failure sentinel)
//   table.u32   N * controllers * disturbances little-endian uint32
// Nothing time-dependent is written, so identical runs give identical bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "metamesh/config.hpp"
#include "metamesh/geometry.hpp"
#include "metamesh/markov.hpp"
#include "metamesh/meshing.hpp"

namespace metamesh {

inline constexpr const char* kBundleFormat = "metamesh-bundle/1";

struct Bundle {
  Mesh mesh;
  TransitionTable table;
  DisturbanceProfile profile;
  std::vector<PolicySpec> policies;
  bool truncated = false;
  std::size_t explored = 0;
  FailureTally failures;
  std::uint64_t simulations = 0;
  Json config;  // resolved config of the build
};

namespace detail {

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    U u = std::bit_cast<U>(v);
    U r = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) r |= ((u >> (8 * i)) & 0xFF) << (8 * (sizeof(T) - 1 - i));
    return std::bit_cast<T>(r);
  }
}

template <class T>
void write_binary(const std::filesystem::path& path, std::span<const T> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  for (T v : data) {
    const T le = to_little(v);
    out.write(reinterpret_cast<const char*>(&le), sizeof(T));
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

template <class T>
std::vector<T> read_binary(const std::filesystem::path& path, std::size_t expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<T> out(expected);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(expected * sizeof(T)));
  if (in.gcount() != static_cast<std::streamsize>(expected * sizeof(T)))
    throw IoError("'" + path.string() + "' is shorter than its header says");
  char extra;
  if (in.read(&extra, 1); in.gcount() != 0)
    throw IoError("'" + path.string() + "' is longer than its header says");
  for (T& v : out) v = to_little(v);
  return out;
}

}  // namespace detail

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  write_text(path, j.dump(2) + "\n");
}

inline void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

inline Json provenance_to_json(const MeshProvenance& p) {
  return Json{{"model_id", p.model_id},
              {"policy_ids", p.policy_ids},
              {"profile_id", p.profile_id},
              {"config_digest", p.config_digest},
              {"disturbance_digest", p.disturbance_digest},
              {"seed", p.seed}};
}

inline Json bundle_header(const Bundle& b) {
  Json policies = Json::array();
  for (const auto& p : b.policies) policies.push_back(policy_to_json(p));
  return Json{
      {"format", kBundleFormat},
      {"dim", b.mesh.dim()},
      {"n_states", b.mesh.size()},
      {"d_tr", b.mesh.threshold()},
      {"weights", std::vector<double>(b.mesh.weights().begin(), b.mesh.weights().end())},
      {"n_controllers", b.table.n_controllers},
      {"n_disturbances", b.table.n_disturbances},
      {"policies", policies},
      {"profile", profile_to_json(b.profile)},
      {"provenance", provenance_to_json(b.mesh.provenance)},
      {"truncated", b.truncated},
      {"explored", b.explored},
      {"failures",
       {{"fell", b.failures.fell},
        {"timeout", b.failures.timeout},
        {"integration_error", b.failures.integration_error}}},
      {"simulations", b.simulations},
      {"files", {{"states", "states.f64"}, {"table", "table.u32"}}},
      {"config", b.config},
  };
}

inline void write_bundle(const std::filesystem::path& dir, const Bundle& b) {
  ensure_directory(dir);
  detail::write_binary<double>(dir / "states.f64", b.mesh.data());
  detail::write_binary<std::uint32_t>(dir / "table.u32", b.table.entries);
  write_json(dir / "mesh.json", bundle_header(b));
}

inline Bundle read_bundle(const std::filesystem::path& dir) {
  const Json h = read_json_file((dir / "mesh.json").string());
  try {
    if (h.at("format").get<std::string>() != kBundleFormat)
      throw IoError("'" + dir.string() + "' is not a " + std::string(kBundleFormat) + " bundle");
    Bundle b;
    const auto dim = h.at("dim").get<std::size_t>();
    const auto n = h.at("n_states").get<std::size_t>();
    const auto nc = h.at("n_controllers").get<std::size_t>();
    const auto nd = h.at("n_disturbances").get<std::size_t>();
    auto states = detail::read_binary<double>(dir / "states.f64", n * dim);
    b.mesh = Mesh::from_flat(dim, h.at("d_tr").get<double>(),
                             h.at("weights").get<std::vector<double>>(), std::move(states));
    b.table = TransitionTable(n, nc, nd);
    b.table.entries = detail::read_binary<std::uint32_t>(dir / "table.u32", n * nc * nd);
    b.profile = parse_profile(h.at("profile"));
    for (const auto& p : h.at("policies")) {
      Json spec = p;
      b.policies.push_back(parse_policy(spec, "policies"));
    }
    const Json& prov = h.at("provenance");
    b.mesh.provenance.model_id = prov.at("model_id").get<std::string>();
    b.mesh.provenance.policy_ids = prov.at("policy_ids").get<std::vector<std::string>>();
    b.mesh.provenance.profile_id = prov.at("profile_id").get<std::string>();
    b.mesh.provenance.config_digest = prov.at("config_digest").get<std::string>();
    b.mesh.provenance.disturbance_digest = prov.at("disturbance_digest").get<std::string>();
    b.mesh.provenance.seed = prov.at("seed").get<std::uint64_t>();
    b.truncated = h.at("truncated").get<bool>();
    b.explored = h.at("explored").get<std::size_t>();
    b.failures.fell = h.at("failures").at("fell").get<std::size_t>();
    b.failures.timeout = h.at("failures").at("timeout").get<std::size_t>();
    b.failures.integration_error = h.at("failures").at("integration_error").get<std::size_t>();
    b.simulations = h.at("simulations").get<std::uint64_t>();
    b.config = h.at("config");
    if (b.profile.size() != nd || b.policies.size() != nc)
      throw IoError("bundle header is inconsistent with its table dimensions");
    return b;
  } catch (const Json::exception& e) {
    throw IoError("malformed bundle header in '" + dir.string() + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// CSV

/// Every CSV starts with a comment line naming the config digest.
inline std::string csv_preamble(const std::string& digest) {
  return "# config_digest=" + digest + "\n";
}

inline std::string csv_number(double v) { return format_double(v); }

inline std::string mesh_states_csv(const Mesh& mesh, const std::string& digest) {
  std::ostringstream os;
  os << csv_preamble(digest) << "index";
  for (std::size_t k = 0; k < mesh.dim(); ++k) os << ",x" << k;
  os << "\n";
  for (std::size_t i = 1; i < mesh.size(); ++i) {
    os << i;
    for (double v : mesh.state(i)) os << "," << csv_number(v);
    os << "\n";
  }
  return os.str();
}

inline std::string table_csv(const TransitionTable& t, const std::string& digest) {
  std::ostringstream os;
  os << csv_preamble(digest) << "state,controller,disturbance,successor\n";
  for (std::size_t s = 1; s < t.n_states; ++s)
    for (std::size_t c = 0; c < t.n_controllers; ++c)
      for (std::size_t d = 0; d < t.n_disturbances; ++d) {
        os << s << "," << c << "," << d << ",";
        const auto v = t.at(s, c, d);
        if (v == TransitionTable::kUnexplored)
          os << "unexplored";
        else
          os << v;
        os << "\n";
      }
  return os.str();
}

/// Coordinate-format export of a stochastic matrix.
inline std::string matrix_csv(const StochasticMatrix& t, const std::string& digest) {
  std::ostringstream os;
  os << csv_preamble(digest) << "row,col,prob\n";
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto c = t.row_cols(i);
    const auto p = t.row_vals(i);
    for (std::size_t k = 0; k < c.size(); ++k)
      os << i << "," << c[k] << "," << csv_number(p[k]) << "\n";
  }
  return os.str();
}

/// Parses a numeric CSV of states, one per row. Lines starting with '#' and
/// a header row (first field not numeric) are skipped. A leading integer
/// column named "index" is dropped.
inline std::vector<PoincareState> read_states_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<PoincareState> out;
  std::string line;
  bool drop_first = false;
  std::size_t lineno = 0, dim = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    auto is_number = [](const std::string& s) {
      double v;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      return ec == std::errc{} && p == s.data() + s.size();
    };
    if (!cells.empty() && !is_number(cells[0])) {
      if (out.empty()) drop_first = (cells[0] == "index");
      continue;
    }
    PoincareState s;
    for (std::size_t k = drop_first ? 1 : 0; k < cells.size(); ++k) {
      if (!is_number(cells[k]))
        throw InvalidArgument(path + ":" + std::to_string(lineno) + ": non-numeric value '" +
                              cells[k] + "'");
      double v;
      std::from_chars(cells[k].data(), cells[k].data() + cells[k].size(), v);
      s.coords.push_back(v);
    }
    if (dim == 0) dim = s.dim();
    if (s.dim() != dim || dim == 0)
      throw InvalidArgument(path + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(dim) + " values");
    out.push_back(std::move(s));
  }
  if (out.empty()) throw InvalidArgument("'" + path + "' holds no states");
  return out;
}

}  // namespace metamesh
