#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

int main(int argc, char** argv) {
  using asyncfl::cli::Command;
  using asyncfl::cli::CommandOptions;

  CLI::App app{"asyncfl: staleness and throughput analysis for asynchronous federated learning"};
  app.require_subcommand(1);

  CommandOptions opts;
  opts.threads = asyncfl::cli::default_threads();
  std::string spec;
  std::string out;
  std::uint64_t seed = 0;
  int replications = 0;
  int m_min = 0;
  int m_max = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--spec", spec, "Experiment spec (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "Output directory (overrides output.dir)");
    sub->add_option("--seed", seed, "Override every seed in the spec");
    sub->add_option("--replications", replications, "Override simulation replications / training seeds");
    sub->add_flag("--quiet", opts.quiet, "Only machine-readable output on stdout");
    sub->add_option("--threads", opts.threads, "Worker threads (default: $ASYNCFL_THREADS or 1)")
        ->check(CLI::PositiveNumber);
  };

  struct Entry {
    const char* name;
    const char* help;
    Command command;
  };
  const Entry entries[] = {
      {"analyze", "Stationary moments, bounds G and H, eta_max and T_eps", Command::Analyze},
      {"optimize", "Minimise G or H over the routing simplex", Command::Optimize},
      {"simulate", "Replicated network simulation against the closed form", Command::Simulate},
      {"train", "Generalized AsyncSGD on a synthetic quadratic problem", Command::Train},
      {"sweep", "Bound H as a function of the concurrency m", Command::Sweep},
  };
  Command chosen = Command::Analyze;
  for (const Entry& e : entries) {
    CLI::App* sub = app.add_subcommand(e.name, e.help);
    add_common(sub);
    if (e.command == Command::Sweep) {
      sub->add_option("--m-min", m_min, "Smallest concurrency")->check(CLI::PositiveNumber);
      sub->add_option("--m-max", m_max, "Largest concurrency")->check(CLI::PositiveNumber);
    }
    sub->callback([&chosen, c = e.command] { chosen = c; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : asyncfl::cli::kExitUsage;
  }

  opts.spec = spec;
  if (!out.empty()) opts.out = out;
  for (CLI::App* sub : app.get_subcommands()) {
    if (sub->count("--seed")) opts.seed = seed;
    if (sub->count("--replications")) opts.replications = replications;
    if (sub->get_name() == "sweep" && sub->count("--m-min")) opts.m_min = m_min;
    if (sub->get_name() == "sweep" && sub->count("--m-max")) opts.m_max = m_max;
  }
  return asyncfl::cli::run_command(chosen, opts, std::cout, std::cerr);
}
