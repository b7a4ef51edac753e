#pragma once

// Stationary analytics of the closed Jackson network formed by the clients
// of Generalized AsyncSGD. The embedded chain X_t (state at the end of each
// update round) lives on {x in N^n : |x| = m-1} with product-form law
//
//     pi_{n,m-1}(x) = prod_i (p_i / mu_i)^{x_i} / Z_{n,m-1},
//
// and the continuous-time queue process xi(t) has the same form on |x| = m.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "asyncfl/matrix.hpp"
#include "asyncfl/network.hpp"

namespace asyncfl::jackson {

/// Normalising constants Z_{n,0..depth}, computed on the rescaled loads
/// c * p_i / mu_i with c = 1 / max_i(p_i / mu_i). Since Z_{n,k} is
/// homogeneous of degree k in the loads, z[k] = c^k * Z_{n,k}.
struct BuzenTable {
  std::vector<double> z;
  double scale = 1.0;

  /// Z_{n,k} in the original (unscaled) units. May overflow for large k.
  double unscaled(std::size_t k) const;
};

BuzenTable buzen_table(const NetworkConfig& config, const RoutingVector& p, int depth);

/// Same recursion, keeping every intermediate column: entry (j, k) holds the
/// scaled Z_{j+1,k} over the first j+1 clients. Used for exact sampling.
Matrix buzen_columns(const NetworkConfig& config, const RoutingVector& p, int depth);

/// Rescaled loads c * p_i / mu_i (largest entry is exactly 1) and the scale c.
std::vector<double> scaled_loads(const NetworkConfig& config, const RoutingVector& p, double* scale = nullptr);

/// pi_{n,m-1}(x); throws Error(InvalidState) unless x is a nonnegative
/// vector with |x| = m-1.
double stationary_pmf(const NetworkConfig& config, const RoutingVector& p, std::span<const int> x);

struct StationaryMoments {
  std::vector<double> mean_queue;  // E[X_i] under pi_{n,m-1}
  Matrix second_moment;            // E[X_i X_j], including the diagonal
  Matrix covariance;               // Cov[X_i, X_j]
  std::vector<double> busy_prob;   // P(xi_i > 0) under pi_{n,m}
  std::vector<double> mean_jobs;   // E[xi_i] under pi_{n,m}
  double throughput = 0.0;         // rounds per unit wall-clock time
  double mean_round_duration = 0.0;
};

enum class MomentDetail { MeansOnly, Full };

/// Exact stationary moments via Buzen's recursion; O(n m) for the means and
/// O(n^2 m) for the second moments. With MeansOnly the matrices are empty.
StationaryMoments stationary_moments(const NetworkConfig& config, const RoutingVector& p,
                                     MomentDetail detail = MomentDetail::Full);

/// Mean relative delays; equal to the mean stationary queue lengths.
std::vector<double> mean_relative_delays(const NetworkConfig& config, const RoutingVector& p);

/// J(i, j) = d E[D_i] / d p_j = Cov[X_i, X_j] / p_j (unconstrained partials).
Matrix delay_jacobian(const NetworkConfig& config, const RoutingVector& p);

/// Throughput lambda = Z_{n,m-1} / Z_{n,m}.
double throughput(const NetworkConfig& config, const RoutingVector& p);

/// Largest state space brute_force_moments accepts.
inline constexpr double kMaxEnumeratedStates = 1e6;

/// Number of states |{x in N^n : |x| = total}| = C(n + total - 1, total).
double state_count(std::size_t n, int total);

/// Calls `visit(x)` for every x in N^n with |x| = total, in lexicographic
/// order (first coordinate largest first).
template <typename Visitor>
void for_each_state(std::size_t n, int total, Visitor&& visit) {
  std::vector<int> x(n, 0);
  if (n == 0) return;
  x[0] = total;
  while (true) {
    visit(std::as_const(x));
    // Find the rightmost position (excluding the last) holding a positive
    // count, move one unit right and gather the tail into position k+1.
    std::size_t k = n - 1;
    while (k > 0 && x[k - 1] == 0) --k;
    if (k == 0) return;
    --k;
    const int tail = x[n - 1];
    x[n - 1] = 0;
    --x[k];
    x[k + 1] = tail + 1;
  }
}

/// Test oracle: enumerates both state spaces and normalises directly.
/// Throws Error(StateSpaceTooLarge) when C(n+m-1, m) > kMaxEnumeratedStates.
StationaryMoments brute_force_moments(const NetworkConfig& config, const RoutingVector& p);

}  // namespace asyncfl::jackson
