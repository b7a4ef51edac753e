#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>

#include <json.hpp>

#include "experiment.hpp"

namespace asyncfl::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitSpec = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitDiverged = 4;
inline constexpr int kExitIo = 5;

enum class Command { Analyze, Optimize, Simulate, Train, Sweep };

struct CommandOptions {
  std::filesystem::path spec;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> replications;
  std::optional<int> m_min;
  std::optional<int> m_max;
  bool quiet = false;
  int threads = 1;
};

/// Thread count from ASYNCFL_THREADS, or 1 when unset or invalid.
int default_threads();

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never observe a partial file.
void write_atomically(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body);

/// Pretty-printed JSON; doubles use the shortest exact representation.
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

/// Runs one subcommand. Prints a one-line JSON summary to `out` and
/// diagnostics to `err` (suppressed by `quiet`), and returns the exit code.
int run_command(Command command, const CommandOptions& options, std::ostream& out, std::ostream& err);

/// The command implementations; they throw on failure and return the
/// summary printed on stdout.
nlohmann::json cmd_analyze(const ExperimentSpec& spec, const std::filesystem::path& dir);
nlohmann::json cmd_optimize(const ExperimentSpec& spec, const std::filesystem::path& dir, int& exit_code);
nlohmann::json cmd_simulate(const ExperimentSpec& spec, const std::filesystem::path& dir, int threads);
nlohmann::json cmd_train(const ExperimentSpec& spec, const std::filesystem::path& dir, int threads, int& exit_code);
nlohmann::json cmd_sweep(const ExperimentSpec& spec, const std::filesystem::path& dir);

}  // namespace asyncfl::cli
