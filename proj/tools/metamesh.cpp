// metamesh: build meshes, analyze metastability, and emit figures.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "metamesh/commands.hpp"

int main(int argc, char** argv) {
  using namespace metamesh;
  CLI::App app{"Mesh-based metastability analysis for walking models"};
  app.require_subcommand(1);

  CliOptions opts;
  unsigned threads = 0;
  auto common = [&](CLI::App* sub, bool needs_config, bool reads_bundle) {
    auto* c = sub->add_option("-c,--config", opts.config, "run configuration (JSON)");
    if (needs_config) c->required();
    sub->add_option("-o,--out", opts.out, "output directory (overrides config and env)");
    sub->add_option("-t,--threads", threads, "worker threads (results do not depend on it)")
        ->check(CLI::PositiveNumber);
    sub->add_flag("-v,--verbose", opts.verbosity, "more progress output");
    if (reads_bundle) {
      sub->add_option("-b,--bundle", opts.bundle, "bundle directory (default <out>/bundle)");
      sub->add_option("-p,--profile", opts.profile,
                      "profile override: bare profile JSON or a config file");
    }
  };

  auto* build = app.add_subcommand("build", "explore the reachable mesh and write a bundle");
  common(build, true, false);
  auto* analyze = app.add_subcommand("analyze", "metastability metrics from a bundle");
  common(analyze, false, true);
  auto* sweep = app.add_subcommand("sweep", "MFPT as each disturbance becomes likely");
  common(sweep, false, true);
  auto* dims = app.add_subcommand("dims", "mesh growth over thresholds and dimension fit");
  common(dims, true, false);
  auto* project = app.add_subcommand("project", "PCA or coordinate-slice scatter of states");
  common(project, false, true);
  project->add_option("-s,--states", opts.states, "CSV of states instead of a bundle");
  auto* lump = app.add_subcommand("lump", "lump a trajectory onto a mesh without exploring");
  common(lump, true, false);
  lump->add_option("-s,--states", opts.states, "CSV of states instead of simulating");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }
  if (threads > 0) opts.threads = threads;

  const auto dispatch = [&](CLI::App* sub, const std::string& name, int (*fn)(const CliOptions&)) {
    return sub->parsed() ? run_command(name, opts, [&] { return fn(opts); }) : -1;
  };
  for (auto [sub, name, fn] : {std::tuple{build, "build", &cmd_build},
                               std::tuple{analyze, "analyze", &cmd_analyze},
                               std::tuple{sweep, "sweep", &cmd_sweep},
                               std::tuple{dims, "dims", &cmd_dims},
                               std::tuple{project, "project", &cmd_project},
                               std::tuple{lump, "lump", &cmd_lump}}) {
    if (int rc = dispatch(sub, name, fn); rc >= 0) return rc;
  }
  return kExitConfig;
}
