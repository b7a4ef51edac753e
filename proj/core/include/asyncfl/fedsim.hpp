#pragma once

// Generalized AsyncSGD on synthetic quadratics with exactly known constants.
//
// Client i holds f_i(w) = (L/2) |w - c_i|^2 with sum_i c_i = 0, so the global
// objective f = (1/n) sum_i f_i has minimiser w* = 0, gradient L w and
// dissimilarity |grad f - grad f_i|^2 = L^2 |c_i|^2. Stochastic gradients add
// isotropic Gaussian noise with E|noise|^2 = sigma^2.

#include <cstdint>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "asyncfl/bounds.hpp"
#include "asyncfl/matrix.hpp"
#include "asyncfl/netsim.hpp"

namespace asyncfl::fedsim {

struct SyntheticProblem {
  std::size_t d = 1;
  double L = 1.0;
  double sigma = 0.0;
  Matrix centers;          // n x d
  std::vector<double> w0;  // initial model

  std::size_t n() const noexcept { return centers.rows(); }
  /// L^2 max_i |c_i|^2, attained for every w.
  double M2() const;
  double f_star() const;
  /// f(w0) - f*.
  double A() const;
  double loss(std::span<const double> w) const;
  /// |grad f(w)|^2 = L^2 |w|^2.
  double grad_norm_sq(std::span<const double> w) const;
  void client_gradient(std::size_t i, std::span<const double> w, std::span<double> out) const;

  /// Learning parameters whose constants match this problem exactly.
  bounds::LearningParams learning_params(double eta, long T) const;
};

/// Centres drawn uniformly from the ball of radius `heterogeneity_radius` and
/// recentred to sum to zero; w0 drawn uniformly from the unit sphere.
SyntheticProblem make_synthetic_problem(std::size_t n, std::size_t d, double heterogeneity_radius, double sigma,
                                        std::uint64_t seed, double L = 1.0);

struct TrainRound {
  long t = 0;
  double wallclock = 0.0;  // time at the end of round t
  double duration = 0.0;   // tau_t
  int completed = 0;       // C_t
  int assigned = -1;       // A_t (-1 when round 0 carries no routed task)
  long origin = 0;         // I_t
  double grad_norm_sq = 0.0;  // at w_t
  double loss = 0.0;          // at w_t
  long staleness() const noexcept { return t - origin; }
};

enum class TrainStatus { Completed, Diverged, TimeLimit };

struct TrainTrace {
  std::vector<TrainRound> rounds;
  TrainStatus status = TrainStatus::Completed;
  /// (1/(T+1)) sum_t |grad f(w_t)|^2 over the recorded rounds.
  double ergodic_grad_norm_sq = 0.0;
  /// (1/(T+1)) sum_t tau_t |grad f(w_t)|^2, weighting each round by its duration.
  double weighted_grad_norm_sq = 0.0;
  /// staleness_histogram[k] counts applied gradients with t - I_t = k.
  std::vector<long> staleness_histogram;
  std::vector<double> final_w;
  double elapsed = 0.0;
};

/// Runs rounds t = 0..T of generalized AsyncSGD on top of the queueing engine, with
/// the network, routing, initial state, seed and optional wall-clock budget
/// taken from `sc` (its horizon and warmup are ignored). Each task carries the
/// model it was dispatched with; the update divides the step by n p_{C_t}.
/// A non-finite model stops the run with status Diverged and a partial trace.
TrainTrace run_generalized_async_sgd(const SyntheticProblem& problem, const netsim::SimConfig& sc,
                                     const bounds::LearningParams& lp, long T);

struct BoundCheck {
  int runs = 0;
  double mean_ergodic = 0.0;
  double mean_weighted = 0.0;
  double bound_G = 0.0;  // 8 G
  double bound_H = 0.0;  // 8 H
  bool certified = false;
  bool holds_G = false;
  bool holds_H = false;
  double margin_G = 0.0;  // 8 G / mean_ergodic
  double margin_H = 0.0;
};

/// Compares seed-averaged ergodic means with 8 G and 8 H. Throws
/// Error(InsufficientData) if `traces` is empty or any run diverged.
BoundCheck verify_bound(std::span<const TrainTrace> traces, const NetworkConfig& config, const RoutingVector& p,
                        const bounds::LearningParams& lp);

/// CSV with header t,wallclock,grad_norm_sq,loss,staleness,client_completed,client_assigned.
void write_train_csv(const TrainTrace& trace, std::ostream& out);

/// Loss and gradient norm of the latest model at every multiple of `dt`.
void write_wallclock_csv(const TrainTrace& trace, double dt, std::ostream& out);

}  // namespace asyncfl::fedsim
