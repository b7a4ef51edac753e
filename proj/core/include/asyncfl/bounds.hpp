#pragma once

// Convergence bounds of Generalized AsyncSGD as functions of the routing
// vector:
//
//   G = A / (eta (T+1)) + (eta L B / n^2) sum_i 1/p_i
//                       + (eta^2 L^2 B m / n^2) sum_i E[D_i] / p_i^2
//   H = G / lambda
//
// with B = sigma^2 + 2 M^2. The ergodic mean squared gradient norm per round
// is at most 8 G, and its duration-weighted counterpart at most 8 H, for
// step sizes below eta_max.

#include <optional>
#include <span>
#include <vector>

#include "asyncfl/jackson.hpp"
#include "asyncfl/network.hpp"

namespace asyncfl::bounds {

struct LearningParams {
  double eta = 0.01;   // step size
  long T = 1000;       // round budget
  double L = 1.0;      // gradient smoothness
  double sigma2 = 1.0; // stochastic gradient variance bound
  double M2 = 1.0;     // client heterogeneity bound
  double A = 1.0;      // f(w_0) - f*

  double B() const noexcept { return sigma2 + 2.0 * M2; }

  /// Throws Error(InvalidConfig) unless every parameter is positive
  /// (sigma2 and M2 may be zero).
  void validate() const;

  /// Builds the parameters from the ratio A/T instead of A itself.
  static LearningParams from_gap_ratio(double eta, long T, double L, double sigma2, double M2, double gap_over_T);
};

struct ScheduleParams {
  double alpha = 0.5;   // eta = C / T^alpha
  double C = 0.01;
  double epsilon = 1.0; // target ergodic mean squared gradient norm
};

struct EpsilonSchedule {
  long rounds = 1;             // T_eps
  double expected_time = 0.0;  // T_eps / lambda
  double eta = 0.0;            // C / T_eps^alpha
  bool eta_constrained = false;  // T_eps was raised to satisfy eta < eta_max
  double term_initial = 0.0;   // (A / (C eps))^{1/(1-alpha)}
  double term_variance = 0.0;  // (C L B sum 1/p_i / (eps n^2))^{1/alpha}
  double term_staleness = 0.0; // (C^2 L^2 B m sum E[D_i]/p_i^2 / (eps n^2))^{1/(2 alpha)}
};

struct BoundReport {
  double term1 = 0.0;
  double term2 = 0.0;
  double term3 = 0.0;
  double g_total = 0.0;
  double h_total = 0.0;
  double eta_max = 0.0;
  double lambda = 0.0;
  bool certified = false;  // eta < eta_max
  std::optional<EpsilonSchedule> schedule;
};

/// Evaluates G (and H, eta_max, lambda) from exact stationary delays.
BoundReport bound_G(const NetworkConfig& config, const RoutingVector& p, const LearningParams& lp);

/// Same report; H = G / lambda.
BoundReport bound_H(const NetworkConfig& config, const RoutingVector& p, const LearningParams& lp);

/// Evaluates the bounds from externally supplied mean delays and throughput,
/// e.g. Monte Carlo estimates from the simulator.
BoundReport bound_from_estimates(const NetworkConfig& config, const RoutingVector& p, const LearningParams& lp,
                                 std::span<const double> mean_delays, double lambda);

/// dG/dp_j, treating p as unconstrained (G is evaluated through the
/// homogeneous product form, so only simplex-tangent combinations matter).
std::vector<double> grad_G(const NetworkConfig& config, const RoutingVector& p, const LearningParams& lp);

/// dH/dp_j; needs moments under both pi_{n,m-1} and pi_{n,m}.
std::vector<double> grad_H(const NetworkConfig& config, const RoutingVector& p, const LearningParams& lp);

/// Gradients from precomputed moments (Full detail required).
std::vector<double> grad_G(const jackson::StationaryMoments& moments, const RoutingVector& p, int m,
                           const LearningParams& lp);
std::vector<double> grad_H(const jackson::StationaryMoments& moments, const RoutingVector& p, int m,
                           const LearningParams& lp);

/// Largest certified step size under the corrected delay bound.
double eta_max(const NetworkConfig& config, const RoutingVector& p, const LearningParams& lp);

/// Rounds to reach an epsilon-accurate ergodic mean with eta = C / T^alpha,
/// taking the largest of the three asymptotic terms with unit constant.
/// Throws Error(ScheduleInfeasible) if no representable T satisfies
/// eta < eta_max.
EpsilonSchedule rounds_to_epsilon(const NetworkConfig& config, const RoutingVector& p, const LearningParams& lp,
                                  const ScheduleParams& sp);

}  // namespace asyncfl::bounds
