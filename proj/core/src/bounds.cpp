#include "asyncfl/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace asyncfl::bounds {
namespace {

double inverse_sum(std::span<const double> p) {
  double acc = 0.0;
  for (double v : p) acc += 1.0 / v;
  return acc;
}

double staleness_sum(std::span<const double> delays, std::span<const double> p) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += delays[i] / (p[i] * p[i]);
  return acc;
}

double eta_max_impl(std::span<const double> mu, std::span<const double> p, int m, double L) {
  const double n = static_cast<double>(p.size());
  const double mu_total = std::accumulate(mu.begin(), mu.end(), 0.0);
  double weighted = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) weighted += 1.0 / (mu[i] * p[i] * p[i]);
  const double staleness_arg = 1.0 / std::sqrt(static_cast<double>(m) * m / (n * n) * mu_total * weighted);
  const double variance_arg = 2.0 / (inverse_sum(p) / (n * n));
  return std::min(staleness_arg, variance_arg) / (4.0 * L);
}

}  // namespace

void LearningParams::validate() const {
  if (!(eta > 0.0) || T < 1 || !(L > 0.0) || !(sigma2 >= 0.0) || !(M2 >= 0.0) || !(A >= 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "learning parameters must be positive (sigma2, M2, A nonnegative)");
  }
}

LearningParams LearningParams::from_gap_ratio(double eta, long T, double L, double sigma2, double M2,
                                              double gap_over_T) {
  return LearningParams{eta, T, L, sigma2, M2, gap_over_T * static_cast<double>(T)};
}

BoundReport bound_from_estimates(const NetworkConfig& config, const RoutingVector& p, const LearningParams& lp,
                                 std::span<const double> mean_delays, double lambda) {
  check_compatible(config, p);
  lp.validate();
  const double n2 = static_cast<double>(config.n()) * static_cast<double>(config.n());
  const double B = lp.B();
  BoundReport r;
  r.term1 = lp.A / (lp.eta * (static_cast<double>(lp.T) + 1.0));
  r.term2 = lp.eta * lp.L * B / n2 * inverse_sum(p.values());
  r.term3 = lp.eta * lp.eta * lp.L * lp.L * B * config.m / n2 * staleness_sum(mean_delays, p.values());
  r.g_total = r.term1 + r.term2 + r.term3;
  r.lambda = lambda;
  r.h_total = r.g_total / lambda;
  r.eta_max = eta_max_impl(config.mu, p.values(), config.m, lp.L);
  r.certified = lp.eta < r.eta_max;
  return r;
}

BoundReport bound_G(const NetworkConfig& config, const RoutingVector& p, const LearningParams& lp) {
  const auto moments = jackson::stationary_moments(config, p, jackson::MomentDetail::MeansOnly);
  return bound_from_estimates(config, p, lp, moments.mean_queue, moments.throughput);
}

BoundReport bound_H(const NetworkConfig& config, const RoutingVector& p, const LearningParams& lp) {
  return bound_G(config, p, lp);
}

std::vector<double> grad_G(const jackson::StationaryMoments& moments, const RoutingVector& p, int m,
                           const LearningParams& lp) {
  const std::size_t n = p.size();
  const double n2 = static_cast<double>(n) * static_cast<double>(n);
  const double lead = lp.eta * lp.L * lp.B() / n2;
  const double mean_sum = staleness_sum(moments.mean_queue, p.values());
  std::vector<double> grad(n);
  for (std::size_t j = 0; j < n; ++j) {
    double cross = 0.0;
    for (std::size_t i = 0; i < n; ++i) cross += moments.second_moment(i, j) / (p[i] * p[i]);
    const double xj = moments.mean_queue[j];
    const double stale = cross - xj * mean_sum - 2.0 * xj / (p[j] * p[j]);
    grad[j] = lead / p[j] * (-1.0 / p[j] + lp.eta * m * lp.L * stale);
  }
  return grad;
}

std::vector<double> grad_H(const jackson::StationaryMoments& moments, const RoutingVector& p, int m,
                           const LearningParams& lp) {
  const std::size_t n = p.size();
  const double n2 = static_cast<double>(n) * static_cast<double>(n);
  const double lambda = moments.throughput;
  const double lead = lp.eta * lp.L * lp.B() / n2;
  const double inv_sum = inverse_sum(p.values());
  const double mean_sum = staleness_sum(moments.mean_queue, p.values());
  const double initial = lp.A / ((static_cast<double>(lp.T) + 1.0) * lp.eta * lambda);
  std::vector<double> grad(n);
  for (std::size_t j = 0; j < n; ++j) {
    double cross = 0.0;
    for (std::size_t i = 0; i < n; ++i) cross += moments.second_moment(i, j) / (p[i] * p[i]);
    const double xj = moments.mean_queue[j];
    const double shift = moments.mean_jobs[j] - xj;  // E[xi_j - X_j]
    const double stale = -2.0 * xj / (p[j] * p[j]) + cross + (moments.mean_jobs[j] - 2.0 * xj) * mean_sum;
    grad[j] = initial * shift / p[j] +
              lead / (p[j] * lambda) * (-1.0 / p[j] + shift * inv_sum + lp.eta * m * lp.L * stale);
  }
  return grad;
}

std::vector<double> grad_G(const NetworkConfig& config, const RoutingVector& p, const LearningParams& lp) {
  lp.validate();
  return grad_G(jackson::stationary_moments(config, p), p, config.m, lp);
}

std::vector<double> grad_H(const NetworkConfig& config, const RoutingVector& p, const LearningParams& lp) {
  lp.validate();
  return grad_H(jackson::stationary_moments(config, p), p, config.m, lp);
}

double eta_max(const NetworkConfig& config, const RoutingVector& p, const LearningParams& lp) {
  check_compatible(config, p);
  return eta_max_impl(config.mu, p.values(), config.m, lp.L);
}

EpsilonSchedule rounds_to_epsilon(const NetworkConfig& config, const RoutingVector& p, const LearningParams& lp,
                                  const ScheduleParams& sp) {
  if (!(sp.alpha > 0.0 && sp.alpha < 1.0) || !(sp.C > 0.0) || !(sp.epsilon > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "schedule needs alpha in (0,1), C > 0 and epsilon > 0");
  }
  const auto moments = jackson::stationary_moments(config, p, jackson::MomentDetail::MeansOnly);
  const double n2 = static_cast<double>(config.n()) * static_cast<double>(config.n());
  const double B = lp.B();

  EpsilonSchedule s;
  s.term_initial = std::pow(lp.A / (sp.C * sp.epsilon), 1.0 / (1.0 - sp.alpha));
  s.term_variance = std::pow(sp.C * lp.L * B * inverse_sum(p.values()) / (sp.epsilon * n2), 1.0 / sp.alpha);
  s.term_staleness = std::pow(sp.C * sp.C * lp.L * lp.L * B * config.m *
                                  staleness_sum(moments.mean_queue, p.values()) / (sp.epsilon * n2),
                              1.0 / (2.0 * sp.alpha));

  constexpr double kMaxRounds = 4.0e18;
  const double raw = std::max({1.0, std::ceil(s.term_initial), std::ceil(s.term_variance), std::ceil(s.term_staleness)});
  if (!std::isfinite(raw) || raw > kMaxRounds) {
    throw Error(ErrorCode::ScheduleInfeasible, "required round count is not representable");
  }
  long rounds = static_cast<long>(raw);

  const double ceiling = eta_max_impl(config.mu, p.values(), config.m, lp.L);
  auto eta_at = [&](long t) { return sp.C / std::pow(static_cast<double>(t), sp.alpha); };
  if (!(eta_at(rounds) < ceiling)) {
    // eta decreases in T and every term of G does too, so the smallest T
    // with eta < eta_max is still epsilon-accurate.
    const double needed = std::floor(std::pow(sp.C / ceiling, 1.0 / sp.alpha)) + 1.0;
    if (!std::isfinite(needed) || needed > kMaxRounds) {
      throw Error(ErrorCode::ScheduleInfeasible, "no representable T keeps eta below eta_max");
    }
    long t = std::max(rounds, static_cast<long>(needed));
    while (!(eta_at(t) < ceiling)) {
      if (static_cast<double>(t) > kMaxRounds / 2) {
        throw Error(ErrorCode::ScheduleInfeasible, "no representable T keeps eta below eta_max");
      }
      t += std::max(1L, t / 1000);
    }
    rounds = t;
    s.eta_constrained = true;
  }
  s.rounds = rounds;
  s.eta = eta_at(rounds);
  s.expected_time = static_cast<double>(rounds) / moments.throughput;
  return s;
}

}  // namespace asyncfl::bounds
