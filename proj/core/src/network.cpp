#include "asyncfl/network.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace asyncfl {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidRouting: return "InvalidRouting";
    case ErrorCode::InvalidState: return "InvalidState";
    case ErrorCode::NonFiniteResult: return "NonFiniteResult";
    case ErrorCode::StateSpaceTooLarge: return "StateSpaceTooLarge";
    case ErrorCode::ScheduleInfeasible: return "ScheduleInfeasible";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::SpecParse: return "SpecParse";
  }
  return "Unknown";
}

void NetworkConfig::validate() const {
  if (mu.empty()) throw Error(ErrorCode::InvalidConfig, "at least one client is required");
  if (m < 1) throw Error(ErrorCode::InvalidConfig, "concurrency m must be >= 1");
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (!(mu[i] > 0.0) || !std::isfinite(mu[i])) {
      throw Error(ErrorCode::InvalidConfig, "service rate mu[" + std::to_string(i) + "] must be positive and finite");
    }
  }
  if (service.family == ServiceFamily::Lognormal && !(service.sigma_s > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "lognormal sigma_s must be positive");
  }
}

RoutingVector::RoutingVector(std::vector<double> p) : p_(std::move(p)) {
  if (p_.empty()) throw Error(ErrorCode::InvalidRouting, "routing vector is empty");
  double sum = 0.0;
  for (std::size_t i = 0; i < p_.size(); ++i) {
    const double v = p_[i];
    // A single client is the degenerate simplex {1}; the open interval only
    // makes sense for n >= 2.
    const bool ok = p_.size() == 1 ? v == 1.0 || std::abs(v - 1.0) <= kSumTolerance : (v > 0.0 && v < 1.0);
    if (!ok || !std::isfinite(v)) {
      throw Error(ErrorCode::InvalidRouting, "p[" + std::to_string(i) + "] = " + std::to_string(v) + " is outside (0, 1)");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    throw Error(ErrorCode::InvalidRouting, "routing probabilities sum to " + std::to_string(sum));
  }
}

RoutingVector RoutingVector::uniform(std::size_t n) {
  return RoutingVector(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

RoutingVector RoutingVector::balanced(std::span<const double> mu) {
  const double total = std::accumulate(mu.begin(), mu.end(), 0.0);
  std::vector<double> p(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) p[i] = mu[i] / total;
  return RoutingVector(std::move(p));
}

void check_compatible(const NetworkConfig& config, const RoutingVector& p) {
  config.validate();
  if (p.size() != config.n()) {
    throw Error(ErrorCode::InvalidRouting, "routing vector has " + std::to_string(p.size()) + " entries for " +
                                               std::to_string(config.n()) + " clients");
  }
}

}  // namespace asyncfl
