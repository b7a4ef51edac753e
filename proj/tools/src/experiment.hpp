#pragma once

// Experiment specification files (JSON). See the README for the schema.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "asyncfl/bounds.hpp"
#include "asyncfl/netsim.hpp"
#include "asyncfl/routing.hpp"

namespace asyncfl::cli {

enum class RoutingKind { Uniform, Balanced, Explicit, Optimize };

struct RoutingSpec {
  RoutingKind kind = RoutingKind::Uniform;
  std::vector<double> values;  // Explicit
  routing::Objective objective = routing::Objective::G;
};

enum class OptimizerInit { Uniform, Balanced, Explicit };

struct OptimizerSpec {
  routing::OptimizerConfig config;
  OptimizerInit init = OptimizerInit::Uniform;
  std::vector<double> init_values;
};

struct SimulationSpec {
  long horizon_rounds = 100000;
  std::optional<long> warmup_rounds;
  netsim::InitPolicy init = netsim::InitPolicy::StationarySample;
  std::uint64_t seed = 1;
  int replications = 1;
  std::optional<double> time_limit;
  int batches = 30;
  bool write_trace = true;
};

struct TrainingSpec {
  std::size_t dimension = 10;
  double heterogeneity_radius = 1.0;
  double sigma = 1.0;
  double L = 1.0;
  std::optional<long> rounds;  // defaults to learning.T
  int seeds = 1;
  std::uint64_t seed = 1;
  std::uint64_t problem_seed = 0;
  netsim::InitPolicy init = netsim::InitPolicy::StationarySample;
  std::optional<double> time_limit;
  double wallclock_step = 1.0;
};

struct SweepSpec {
  int m_min = 1;
  int m_max = 60;
};

/// Scan of the bound along p_client in (0, 1), the other entries keeping
/// their relative weights from the resolved routing.
struct ScanSpec {
  std::size_t client = 0;
  int points = 200;
};

struct ExperimentSpec {
  std::string name;
  NetworkConfig network;
  RoutingSpec routing;
  bounds::LearningParams learning;
  std::optional<bounds::ScheduleParams> schedule;
  OptimizerSpec optimizer;
  SimulationSpec simulation;
  TrainingSpec training;
  SweepSpec sweep;
  std::optional<ScanSpec> scan;
  std::string output_dir = "out";
};

/// Throws Error(SpecParse) on malformed input or unknown keys, and the
/// module errors (InvalidConfig, InvalidRouting) on semantic violations.
ExperimentSpec parse_spec(const nlohmann::json& doc);
ExperimentSpec load_spec(const std::filesystem::path& path);

/// Service rates from a generator string: "exp(i/K)" gives mu_i = exp(i/K)
/// for i = 1..n, "const(c)" gives mu_i = c.
std::vector<double> generate_rates(const std::string& generator, std::size_t n);

/// Resolves the routing section, running the optimiser when requested.
RoutingVector resolve_routing(const ExperimentSpec& spec, std::optional<routing::OptResult>* opt = nullptr);

RoutingVector optimizer_start(const ExperimentSpec& spec);

}  // namespace asyncfl::cli
