#pragma once

// Routing optimisation over the open simplex. The routing vector is
// parameterised as p = softmax(theta) and G or H is minimised with Adam.

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "asyncfl/bounds.hpp"
#include "asyncfl/network.hpp"

namespace asyncfl::routing {

enum class Objective { G, H };
enum class Baseline { Uniform, Balanced };

struct AdamParams {
  double step_size = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;
};

struct OptimizerConfig {
  Objective objective = Objective::G;
  AdamParams adam;
  int iterations = 5000;
  /// Starting point; empty means uniform routing.
  std::optional<RoutingVector> init;
  /// Additional starts from random theta ~ N(0, 1), drawn from `seed`.
  int restarts = 0;
  std::uint64_t seed = 0;
  /// Early exit once the sup-norm of the theta-gradient drops below this.
  double gradient_tolerance = 1e-8;
};

enum class OptStatus { Converged, BudgetExhausted, NonFiniteGradient };

struct OptResult {
  RoutingVector p_star = RoutingVector({1.0});
  std::vector<double> trace;  // objective value at every iterate of the winning start
  double objective_value = 0.0;
  double initial_value = 0.0;
  OptStatus status = OptStatus::BudgetExhausted;
  bool converged() const noexcept { return status == OptStatus::Converged; }
};

/// p_j = exp(theta_j) / sum_i exp(theta_i), stabilised by max-subtraction.
RoutingVector softmax_routing(std::span<const double> theta);

/// Pulls a gradient with respect to p back to theta:
/// dF/dtheta_j = p_j (g_j - <g, p>).
std::vector<double> chain_rule_theta(std::span<const double> grad_p, const RoutingVector& p);

RoutingVector baseline_routing(Baseline kind, const NetworkConfig& config);

/// Objective value and gradient with respect to p.
std::pair<double, std::vector<double>> objective_and_gradient(const NetworkConfig& config, const RoutingVector& p,
                                                              const bounds::LearningParams& lp, Objective objective);

/// Minimises the objective from the configured start (plus optional random
/// restarts) and returns the best iterate seen. The result may be a local
/// minimum; G and H are not convex in p.
OptResult optimize_routing(const NetworkConfig& config, const bounds::LearningParams& lp, const OptimizerConfig& oc);

struct SweepResult {
  std::vector<std::pair<int, double>> curve;  // (m, H)
  int m_star = 1;
  double h_star = 0.0;
};

/// Evaluates H for every concurrency in `m_values`; ties go to the smaller m.
SweepResult sweep_concurrency(const NetworkConfig& base, const RoutingVector& p, const bounds::LearningParams& lp,
                              std::span<const int> m_values);

}  // namespace asyncfl::routing
