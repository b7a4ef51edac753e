#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "asyncfl/error.hpp"

namespace asyncfl {

enum class ServiceFamily { Exponential, Deterministic, Lognormal };

/// Distribution of per-task computation times at a client. Every family has
/// per-client mean 1/mu_i; `sigma_s` is the standard deviation of the
/// underlying normal for the lognormal family and ignored otherwise.
struct ServiceDistribution {
  ServiceFamily family = ServiceFamily::Exponential;
  double sigma_s = 1.0;

  static ServiceDistribution exponential() { return {}; }
  static ServiceDistribution deterministic() { return {ServiceFamily::Deterministic, 1.0}; }
  static ServiceDistribution lognormal(double sigma_s) { return {ServiceFamily::Lognormal, sigma_s}; }
};

/// Closed network of `n = mu.size()` FIFO clients with `m` tasks in flight.
struct NetworkConfig {
  std::vector<double> mu;  // service rates, tasks per unit wall-clock time
  int m = 1;               // concurrency
  ServiceDistribution service;

  std::size_t n() const noexcept { return mu.size(); }

  /// Throws Error(InvalidConfig) when an invariant is violated.
  void validate() const;

  NetworkConfig with_concurrency(int new_m) const {
    NetworkConfig copy = *this;
    copy.m = new_m;
    return copy;
  }
};

/// A point of the open probability simplex over the clients.
class RoutingVector {
 public:
  static constexpr double kSumTolerance = 1e-12;

  /// Throws Error(InvalidRouting) unless every entry lies in (0, 1) and the
  /// entries sum to one within kSumTolerance.
  explicit RoutingVector(std::vector<double> p);

  std::size_t size() const noexcept { return p_.size(); }
  double operator[](std::size_t i) const noexcept { return p_[i]; }
  std::span<const double> values() const noexcept { return p_; }
  const std::vector<double>& vector() const noexcept { return p_; }

  static RoutingVector uniform(std::size_t n);
  /// p_i = mu_i / sum_j mu_j, which equalises the mean queue lengths.
  static RoutingVector balanced(std::span<const double> mu);

 private:
  std::vector<double> p_;
};

/// Throws unless `p` has one entry per client of `config`.
void check_compatible(const NetworkConfig& config, const RoutingVector& p);

}  // namespace asyncfl
