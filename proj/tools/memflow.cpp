#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "memflow/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"memflow: heat equation with memory — flows, observability and control"};
  app.require_subcommand(1);
  memflow::cli::Options opt;
  std::uint64_t seed = 0;
  int threads = 0;
  for (const char* name : {"flow-check", "kernel", "moc", "obsconst", "probe-alpha", "probe-ball", "probe-heat",
                           "reconstruct", "control", "duality", "report"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", opt.config_path, "JSON configuration file");
    sub->add_option("--out", opt.out_dir, "output directory")->capture_default_str();
    sub->add_option("--seed", seed, "override the configuration seed");
    sub->add_option("--threads", threads, "worker threads (default: MEMFLOW_THREADS or 1)");
    sub->add_option("--tolerance-scale", opt.tolerance_scale, "multiply all check tolerances")
        ->capture_default_str();
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  auto* sub = app.get_subcommands().front();
  opt.command = sub->get_name();
  if (sub->count("--seed")) opt.seed = seed;
  if (sub->count("--threads")) opt.threads = threads;
  return memflow::cli::run(opt, std::cout, std::cerr);
}
