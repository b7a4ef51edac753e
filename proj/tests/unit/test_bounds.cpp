#include <doctest.h>

#include <cmath>
#include <random>

#include "asyncfl/bounds.hpp"
#include "fd_check.hpp"
#include "oracles.hpp"

using namespace asyncfl;
using bounds::LearningParams;

namespace {

LearningParams params(double eta, long T, double L, double sigma2, double M2, double A) {
  return LearningParams{eta, T, L, sigma2, M2, A};
}

// eta_max written out term by term, independently of the library.
double eta_max_direct(const std::vector<double>& mu, const std::vector<double>& p, int m, double L) {
  const double n = static_cast<double>(mu.size());
  double mu_sum = 0.0, w = 0.0, inv = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    mu_sum += mu[i];
    w += 1.0 / (mu[i] * p[i] * p[i]);
    inv += 1.0 / (n * n * p[i]);
  }
  const double a = std::pow((m * m) / (n * n) * mu_sum * w, -0.5);
  const double b = 2.0 / inv;
  return std::min(a, b) / (4.0 * L);
}

}  // namespace

TEST_CASE("learning parameter validation") {
  CHECK_NOTHROW(params(0.1, 10, 1, 0, 0, 0).validate());
  CHECK_THROWS_AS(params(0.0, 10, 1, 1, 1, 1).validate(), Error);
  CHECK_THROWS_AS(params(0.1, 0, 1, 1, 1, 1).validate(), Error);
  CHECK_THROWS_AS(params(0.1, 10, 0, 1, 1, 1).validate(), Error);
  CHECK_THROWS_AS(params(0.1, 10, 1, -1, 1, 1).validate(), Error);
  const auto lp = LearningParams::from_gap_ratio(0.01, 200, 1.0, 9.0, 100.0, 15.0);
  CHECK(lp.A == 3000.0);
  CHECK(lp.B() == 209.0);
}

TEST_CASE("bound G closed forms") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 1 + trial % 6;
    const int m = 1 + (trial * 7) % 40;
    NetworkConfig cfg{gen::rates(rng, n), m, {}};
    const auto lp = params(0.001 + 0.05 * u(rng), 10 + trial * 97, 0.5 + u(rng), u(rng) * 4, u(rng) * 3, 1 + u(rng));
    const auto uni = bounds::bound_G(cfg, RoutingVector::uniform(n), lp);
    CHECK(uni.g_total == doctest::Approx(oracle::g_uniform(lp.A, lp.eta, lp.T, lp.L, lp.B(), m)).epsilon(1e-12));
    const auto bal = bounds::bound_G(cfg, RoutingVector::balanced(cfg.mu), lp);
    CHECK(bal.g_total ==
          doctest::Approx(oracle::g_balanced(lp.A, lp.eta, lp.T, lp.L, lp.B(), m, cfg.mu)).epsilon(1e-12));
    CHECK(uni.g_total == doctest::Approx(uni.term1 + uni.term2 + uni.term3).epsilon(1e-15));
    CHECK(uni.term1 >= 0.0);
    CHECK(uni.term2 >= 0.0);
    CHECK(uni.term3 >= 0.0);
  }
}

TEST_CASE("bound G with a single task has no staleness term") {
  NetworkConfig cfg{{1.0, 2.0, 7.0}, 1, {}};
  const auto r = bounds::bound_G(cfg, RoutingVector({0.1, 0.3, 0.6}), params(0.01, 100, 1, 1, 1, 1));
  CHECK(r.term3 == 0.0);
}

TEST_CASE("H times lambda equals G") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + trial % 5;
    NetworkConfig cfg{gen::rates(rng, n), 2 + trial, {}};
    const RoutingVector p(gen::simplex(rng, n));
    const auto lp = params(0.01, 1000, 1, 1, 1, 10);
    const auto g = bounds::bound_G(cfg, p, lp);
    const auto h = bounds::bound_H(cfg, p, lp);
    CHECK(h.h_total * h.lambda == doctest::Approx(g.g_total).epsilon(1e-12));
    CHECK(h.h_total == doctest::Approx(g.g_total / jackson::throughput(cfg, p)).epsilon(1e-12));
  }
  NetworkConfig single{{3.0}, 4, {}};
  const auto r = bounds::bound_H(single, RoutingVector({1.0}), params(0.01, 100, 1, 1, 1, 1));
  CHECK(r.h_total == doctest::Approx(r.g_total / 3.0).epsilon(1e-14));
}

TEST_CASE("bounds from external estimates reproduce the exact report") {
  NetworkConfig cfg{{1.0, 2.0, 4.0}, 5, {}};
  const RoutingVector p({0.5, 0.3, 0.2});
  const auto lp = params(0.01, 500, 1, 2, 1, 3);
  const auto mom = jackson::stationary_moments(cfg, p);
  const auto a = bounds::bound_from_estimates(cfg, p, lp, mom.mean_queue, mom.throughput);
  const auto b = bounds::bound_H(cfg, p, lp);
  CHECK(a.g_total == b.g_total);
  CHECK(a.h_total == b.h_total);
}

TEST_CASE("term3 is nondecreasing in m") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 1 + trial % 4;
    const auto mu = gen::rates(rng, n);
    const RoutingVector p(gen::simplex(rng, n));
    double prev = -1.0;
    for (int m = 1; m <= 15; ++m) {
      const double t3 = bounds::bound_G(NetworkConfig{mu, m, {}}, p, params(0.01, 100, 1, 1, 1, 1)).term3;
      CHECK(t3 >= prev);
      prev = t3;
    }
  }
}

TEST_CASE("gradients of G and H match finite differences") {
  std::mt19937_64 rng(10);
  const std::size_t sizes[] = {2, 3, 5};
  const int concurrencies[] = {2, 5, 10};
  int configs = 0;
  for (std::size_t n : sizes) {
    for (int m : concurrencies) {
      for (int draw = 0; draw < 3; ++draw) {
        NetworkConfig cfg{gen::rates(rng, n), m, {}};
        const auto p = gen::simplex(rng, n);
        const auto lp = params(0.02, 1000, 1.0, 2.0, 1.0, 5.0);
        const RoutingVector rp(p);
        const auto gG = bounds::grad_G(cfg, rp, lp);
        const auto gH = bounds::grad_H(cfg, rp, lp);
        const double eG = fd::simplex_gradient_error(
            [&](const RoutingVector& q) { return bounds::bound_G(cfg, q, lp).g_total; }, p, gG);
        const double eH = fd::simplex_gradient_error(
            [&](const RoutingVector& q) { return bounds::bound_H(cfg, q, lp).h_total; }, p, gH);
        CHECK(eG <= 1e-5);
        CHECK(eH <= 1e-5);
        ++configs;
      }
    }
  }
  CHECK(configs >= 20);
}

TEST_CASE("single-client gradients") {
  NetworkConfig cfg{{2.0}, 4, {}};
  const auto lp = params(0.01, 100, 1.0, 1.0, 1.0, 1.0);
  const auto gG = bounds::grad_G(cfg, RoutingVector({1.0}), lp);
  REQUIRE(gG.size() == 1);
  // d/dp of eta L B / p + eta^2 L^2 B m (m-1) / p^2 at p = 1, E[X] held at m-1.
  CHECK(gG[0] == doctest::Approx(-lp.eta * lp.L * lp.B() - 2 * lp.eta * lp.eta * lp.B() * 4 * 3).epsilon(1e-12));
  const auto gH = bounds::grad_H(cfg, RoutingVector({1.0}), lp);
  REQUIRE(gH.size() == 1);
  CHECK(std::isfinite(gH[0]));
}

TEST_CASE("gradient sign change behind the non-monotone staleness term") {
  NetworkConfig cfg{{1.0, 5.0}, 20, {}};
  const auto lp = params(0.01, 1000, 1.0, 1.0, 1.0, 1.0);
  int sign_changes = 0;
  double prev = 0.0;
  for (int k = 1; k <= 200; ++k) {
    const double t = k / 201.0;
    const auto g = bounds::grad_G(cfg, RoutingVector({t, 1.0 - t}), lp);
    const double directional = g[0] - g[1];
    if (k > 1 && (directional > 0) != (prev > 0)) ++sign_changes;
    prev = directional;
  }
  CHECK(sign_changes >= 1);
}

TEST_CASE("eta_max") {
  SUBCASE("single client") {
    for (int m : {1, 2, 7, 50}) {
      for (double L : {0.5, 1.0, 3.0}) {
        NetworkConfig cfg{{2.5}, m, {}};
        CHECK(bounds::eta_max(cfg, RoutingVector({1.0}), LearningParams{0.01, 10, L, 1, 1, 1}) ==
              doctest::Approx(1.0 / (4.0 * L * m)).epsilon(1e-14));
      }
    }
  }
  SUBCASE("matches a direct coding") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 1 + trial % 6;
      const auto mu = gen::rates(rng, n);
      const auto p = gen::simplex(rng, n);
      const int m = 1 + trial * 3;
      const double got = bounds::eta_max(NetworkConfig{mu, m, {}}, RoutingVector(p), params(0.01, 10, 1.3, 1, 1, 1));
      CHECK(got == doctest::Approx(eta_max_direct(mu, p, m, 1.3)).epsilon(1e-13));
      const auto uni = RoutingVector::uniform(n);
      const double got_uniform = bounds::eta_max(NetworkConfig{mu, m, {}}, uni, params(0.01, 10, 1.3, 1, 1, 1));
      CHECK(got_uniform == doctest::Approx(eta_max_direct(mu, uni.vector(), m, 1.3)).epsilon(1e-13));
    }
  }
  SUBCASE("doubling the rates") {
    NetworkConfig cfg{{1.0, 3.0, 9.0}, 6, {}};
    NetworkConfig fast = cfg;
    for (double& v : fast.mu) v *= 2.0;
    const RoutingVector p({0.2, 0.3, 0.5});
    const auto lp = params(0.01, 10, 1, 1, 1, 1);
    // Sum(mu) * Sum(1/(mu p^2)) is scale free, so eta_max does not move.
    CHECK(bounds::eta_max(fast, p, lp) == doctest::Approx(bounds::eta_max(cfg, p, lp)).epsilon(1e-14));
  }
  SUBCASE("certification flag") {
    NetworkConfig cfg{{1.0, 2.0}, 3, {}};
    const RoutingVector p({0.5, 0.5});
    const double ceiling = bounds::eta_max(cfg, p, params(0.01, 10, 1, 1, 1, 1));
    CHECK(bounds::bound_G(cfg, p, params(0.5 * ceiling, 10, 1, 1, 1, 1)).certified);
    const auto over = bounds::bound_G(cfg, p, params(2.0 * ceiling, 10, 1, 1, 1, 1));
    CHECK_FALSE(over.certified);
    CHECK(std::isfinite(over.g_total));
  }
}

TEST_CASE("rounds to epsilon") {
  NetworkConfig cfg{{1.0, 3.0}, 4, {}};
  const RoutingVector p({0.4, 0.6});
  const auto lp = params(0.01, 100, 1.0, 1.0, 0.5, 2.0);

  SUBCASE("huge epsilon gives a single round") {
    const auto s = bounds::rounds_to_epsilon(cfg, p, lp, {0.5, 0.01, 1e12});
    CHECK(s.rounds == 1);
    CHECK(s.expected_time == doctest::Approx(1.0 / jackson::throughput(cfg, p)).epsilon(1e-14));
    CHECK_FALSE(s.eta_constrained);
  }
  SUBCASE("exponent of the variance term") {
    const auto a = bounds::rounds_to_epsilon(cfg, p, lp, {0.5, 0.01, 1e-3});
    const auto b = bounds::rounds_to_epsilon(cfg, p, lp, {0.5, 0.01, 5e-4});
    CHECK(b.term_variance == doctest::Approx(4.0 * a.term_variance).epsilon(1e-12));
    CHECK(b.term_initial == doctest::Approx(4.0 * a.term_initial).epsilon(1e-12));
    CHECK(b.term_staleness == doctest::Approx(2.0 * a.term_staleness).epsilon(1e-12));
  }
  SUBCASE("agrees with bisection on the exact bound") {
    // Smallest T whose G(T), with eta = C / T^alpha, falls below epsilon.
    const bounds::ScheduleParams sp{0.5, 0.01, 0.0};
    for (double eps : {2e-3, 1e-3, 3e-4, 1e-4}) {
      bounds::ScheduleParams s = sp;
      s.epsilon = eps;
      const auto sched = bounds::rounds_to_epsilon(cfg, p, lp, s);
      CHECK(s.C / std::pow(static_cast<double>(sched.rounds), s.alpha) < bounds::eta_max(cfg, p, lp));
      auto g_at = [&](long T) {
        LearningParams q = lp;
        q.T = T;
        q.eta = s.C / std::pow(static_cast<double>(T), s.alpha);
        return bounds::bound_G(cfg, p, q).g_total;
      };
      long lo = 1, hi = 2;
      while (g_at(hi) > eps) hi *= 2;
      while (hi - lo > 1) {
        const long mid = lo + (hi - lo) / 2;
        (g_at(mid) > eps ? lo : hi) = mid;
      }
      const double ratio = static_cast<double>(sched.rounds) / static_cast<double>(hi);
      CHECK(ratio >= 1.0 / 3.0);
      CHECK(ratio <= 3.0);
    }
  }
  SUBCASE("eta ceiling raises T") {
    const auto s = bounds::rounds_to_epsilon(cfg, p, lp, {0.5, 10.0, 1e6});
    CHECK(s.eta_constrained);
    CHECK(s.eta < bounds::eta_max(cfg, p, lp));
    CHECK(10.0 / std::pow(static_cast<double>(s.rounds - 1), 0.5) >= bounds::eta_max(cfg, p, lp));
  }
  SUBCASE("invalid schedules") {
    CHECK_THROWS_AS(bounds::rounds_to_epsilon(cfg, p, lp, {1.0, 0.01, 1.0}), Error);
    CHECK_THROWS_AS(bounds::rounds_to_epsilon(cfg, p, lp, {0.5, 0.0, 1.0}), Error);
    CHECK_THROWS_AS(bounds::rounds_to_epsilon(cfg, p, lp, {0.5, 0.01, 0.0}), Error);
    try {
      bounds::rounds_to_epsilon(cfg, p, lp, {0.5, 1e200, 1.0});
      FAIL("expected ScheduleInfeasible");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ScheduleInfeasible);
    }
  }
}

TEST_CASE("staleness term over the routing grid for two clients") {
  const double fast_rates[] = {2.0, 5.0, 10.0};
  for (double fast : fast_rates) {
    NetworkConfig cfg{{1.0, fast}, 20, {}};
    const auto lp = params(0.01, 1000, 1, 1, 1, 1);
    std::vector<double> curve;
    for (int k = 1; k <= 200; ++k) {
      const double t = k / 201.0;
      curve.push_back(bounds::bound_G(cfg, RoutingVector({t, 1.0 - t}), lp).term3);
    }
    const auto best = std::min_element(curve.begin(), curve.end()) - curve.begin();
    CHECK((best + 1) / 201.0 > 0.9);
    // The curve blows up as p_slow -> 0, dips, then rises to an interior peak.
    int peaks = 0;
    for (std::size_t k = 1; k + 1 < curve.size(); ++k) {
      if (curve[k] > curve[k - 1] && curve[k] > curve[k + 1]) ++peaks;
    }
    CHECK(peaks >= 1);
  }
}
