#include "asyncfl/jackson.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

namespace asyncfl::jackson {
namespace {

void check_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v) || !(v > 0.0)) {
      throw Error(ErrorCode::NonFiniteResult,
                  std::string(what) + " is not finite and positive; load ratios are too extreme for double precision");
    }
  }
}

// E[X_i] at population `pop` from a scaled table: sum_k rho_i^k z[pop-k] / z[pop].
double mean_at(double rho, const std::vector<double>& z, int pop) {
  double acc = 0.0;
  double power = 1.0;
  for (int k = 1; k <= pop; ++k) {
    power *= rho;
    if (power == 0.0) break;
    acc += power * z[pop - k];
  }
  return acc / z[pop];
}

}  // namespace

double BuzenTable::unscaled(std::size_t k) const {
  return z.at(k) / std::pow(scale, static_cast<double>(k));
}

std::vector<double> scaled_loads(const NetworkConfig& config, const RoutingVector& p, double* scale) {
  check_compatible(config, p);
  std::vector<double> rho(config.n());
  double largest = 0.0;
  for (std::size_t i = 0; i < rho.size(); ++i) {
    rho[i] = p[i] / config.mu[i];
    largest = std::max(largest, rho[i]);
  }
  const double c = 1.0 / largest;
  for (double& r : rho) r *= c;
  if (scale != nullptr) *scale = c;
  return rho;
}

BuzenTable buzen_table(const NetworkConfig& config, const RoutingVector& p, int depth) {
  if (depth < 0 || depth > config.m) {
    throw Error(ErrorCode::InvalidConfig, "Buzen depth must lie in [0, m]");
  }
  BuzenTable table;
  const std::vector<double> rho = scaled_loads(config, p, &table.scale);
  table.z.assign(static_cast<std::size_t>(depth) + 1, 0.0);
  table.z[0] = 1.0;
  // Client 1 gives z[k] = rho_1^k; every later client j adds rho_j * z[k-1].
  for (double r : rho) {
    for (int k = 1; k <= depth; ++k) table.z[k] += r * table.z[k - 1];
  }
  check_finite(table.z, "normalising constant");
  return table;
}

Matrix buzen_columns(const NetworkConfig& config, const RoutingVector& p, int depth) {
  if (depth < 0) throw Error(ErrorCode::InvalidConfig, "Buzen depth must be nonnegative");
  const std::vector<double> rho = scaled_loads(config, p);
  Matrix cols(rho.size(), static_cast<std::size_t>(depth) + 1, 0.0);
  for (std::size_t j = 0; j < rho.size(); ++j) {
    cols(j, 0) = 1.0;
    for (int k = 1; k <= depth; ++k) {
      const double previous_clients = j == 0 ? 0.0 : cols(j - 1, k);
      cols(j, k) = previous_clients + rho[j] * cols(j, k - 1);
    }
  }
  check_finite(cols.data(), "normalising constant");
  return cols;
}

double stationary_pmf(const NetworkConfig& config, const RoutingVector& p, std::span<const int> x) {
  check_compatible(config, p);
  if (x.size() != config.n()) throw Error(ErrorCode::InvalidState, "state has the wrong dimension");
  long total = 0;
  for (int xi : x) {
    if (xi < 0) throw Error(ErrorCode::InvalidState, "state entries must be nonnegative");
    total += xi;
  }
  if (total != config.m - 1) {
    throw Error(ErrorCode::InvalidState, "state population " + std::to_string(total) + " differs from m-1 = " +
                                             std::to_string(config.m - 1));
  }
  const BuzenTable table = buzen_table(config, p, config.m - 1);
  const std::vector<double> rho = scaled_loads(config, p);
  // Work in logs so that large populations with tiny loads do not underflow.
  double log_weight = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] > 0) log_weight += x[i] * std::log(rho[i]);
  }
  return std::exp(log_weight - std::log(table.z.back()));
}

StationaryMoments stationary_moments(const NetworkConfig& config, const RoutingVector& p, MomentDetail detail) {
  const std::size_t n = config.n();
  const int pop = config.m - 1;
  const BuzenTable table = buzen_table(config, p, config.m);
  const std::vector<double> rho = scaled_loads(config, p);
  const std::vector<double>& z = table.z;

  StationaryMoments out;
  out.mean_queue.resize(n);
  out.busy_prob.resize(n);
  out.mean_jobs.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.mean_queue[i] = mean_at(rho[i], z, pop);
    out.mean_jobs[i] = mean_at(rho[i], z, config.m);
    out.busy_prob[i] = rho[i] * z[pop] / z[config.m];
  }
  // z[m-1]/z[m] is c * Z_{m-1}/Z_m, and the throughput carries one power of
  // the load scale.
  out.throughput = table.scale * z[pop] / z[config.m];
  out.mean_round_duration = 1.0 / out.throughput;
  if (!std::isfinite(out.throughput) || !(out.throughput > 0.0)) {
    throw Error(ErrorCode::NonFiniteResult, "throughput is not finite");
  }

  if (detail == MomentDetail::MeansOnly) return out;

  // tail[j][r] = sum_{l=1}^{r} rho_j^l z[r-l], i.e. Z_r * E_r[X_j].
  Matrix tail(n, static_cast<std::size_t>(pop) + 1, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    for (int r = 1; r <= pop; ++r) tail(j, r) = rho[j] * (z[r - 1] + tail(j, r - 1));
  }

  out.second_moment = Matrix(n, n, 0.0);
  out.covariance = Matrix(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    // Diagonal: E[X_i^2] = sum_k (2k - 1) P(X_i >= k).
    double diag = 0.0;
    double power = 1.0;
    for (int k = 1; k <= pop; ++k) {
      power *= rho[i];
      if (power == 0.0) break;
      diag += (2.0 * k - 1.0) * power * z[pop - k];
    }
    out.second_moment(i, i) = diag / z[pop];

    // Off-diagonal: sum_{k,l >= 1, k+l <= m-1} rho_i^k rho_j^l z[m-1-k-l] / z[m-1].
    for (std::size_t j = i + 1; j < n; ++j) {
      double acc = 0.0;
      power = 1.0;
      for (int k = 1; k < pop; ++k) {
        power *= rho[i];
        if (power == 0.0) break;
        acc += power * tail(j, pop - k);
      }
      const double value = acc / z[pop];
      out.second_moment(i, j) = value;
      out.second_moment(j, i) = value;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out.covariance(i, j) = out.second_moment(i, j) - out.mean_queue[i] * out.mean_queue[j];
    }
  }
  return out;
}

std::vector<double> mean_relative_delays(const NetworkConfig& config, const RoutingVector& p) {
  return stationary_moments(config, p, MomentDetail::MeansOnly).mean_queue;
}

Matrix delay_jacobian(const NetworkConfig& config, const RoutingVector& p) {
  const StationaryMoments moments = stationary_moments(config, p);
  const std::size_t n = config.n();
  Matrix jac(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) jac(i, j) = moments.covariance(i, j) / p[j];
  }
  return jac;
}

double throughput(const NetworkConfig& config, const RoutingVector& p) {
  const BuzenTable table = buzen_table(config, p, config.m);
  return table.scale * table.z[config.m - 1] / table.z[config.m];
}

double state_count(std::size_t n, int total) {
  // C(n + total - 1, total) evaluated in floating point; only compared to a guard.
  double count = 1.0;
  for (int k = 1; k <= total; ++k) {
    count *= static_cast<double>(n - 1 + static_cast<std::size_t>(k)) / static_cast<double>(k);
  }
  return count;
}

StationaryMoments brute_force_moments(const NetworkConfig& config, const RoutingVector& p) {
  check_compatible(config, p);
  const std::size_t n = config.n();
  const int pop = config.m - 1;
  if (state_count(n, config.m) > kMaxEnumeratedStates) {
    throw Error(ErrorCode::StateSpaceTooLarge, "state space exceeds the enumeration guard");
  }
  std::vector<double> log_rho(n);
  for (std::size_t i = 0; i < n; ++i) log_rho[i] = std::log(p[i]) - std::log(config.mu[i]);

  auto log_weight = [&](const std::vector<int>& x) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * log_rho[i];
    return acc;
  };

  // Largest log weight on each space, subtracted before exponentiating.
  auto max_log_weight = [&](int total) {
    double best = -std::numeric_limits<double>::infinity();
    for_each_state(n, total, [&](const std::vector<int>& x) { best = std::max(best, log_weight(x)); });
    return best;
  };

  StationaryMoments out;
  out.mean_queue.assign(n, 0.0);
  out.second_moment = Matrix(n, n, 0.0);
  out.covariance = Matrix(n, n, 0.0);
  out.busy_prob.assign(n, 0.0);
  out.mean_jobs.assign(n, 0.0);

  const double shift_pop = max_log_weight(pop);
  double norm = 0.0;
  for_each_state(n, pop, [&](const std::vector<int>& x) {
    const double w = std::exp(log_weight(x) - shift_pop);
    norm += w;
    for (std::size_t i = 0; i < n; ++i) {
      if (x[i] == 0) continue;
      out.mean_queue[i] += w * x[i];
      for (std::size_t j = 0; j < n; ++j) out.second_moment(i, j) += w * x[i] * x[j];
    }
  });
  for (std::size_t i = 0; i < n; ++i) {
    out.mean_queue[i] /= norm;
    for (std::size_t j = 0; j < n; ++j) out.second_moment(i, j) /= norm;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out.covariance(i, j) = out.second_moment(i, j) - out.mean_queue[i] * out.mean_queue[j];
    }
  }

  const double shift_full = max_log_weight(config.m);
  double norm_full = 0.0;
  for_each_state(n, config.m, [&](const std::vector<int>& x) {
    const double w = std::exp(log_weight(x) - shift_full);
    norm_full += w;
    for (std::size_t i = 0; i < n; ++i) {
      if (x[i] > 0) {
        out.busy_prob[i] += w;
        out.mean_jobs[i] += w * x[i];
      }
    }
  });
  out.throughput = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.busy_prob[i] /= norm_full;
    out.mean_jobs[i] /= norm_full;
    out.throughput += config.mu[i] * out.busy_prob[i];
  }
  out.mean_round_duration = 1.0 / out.throughput;
  return out;
}

}  // namespace asyncfl::jackson
