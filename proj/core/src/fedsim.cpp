#include "asyncfl/fedsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace asyncfl::fedsim {
namespace {

double squared_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return acc;
}

void write_double(std::ostream& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out << buf;
}

}  // namespace

double SyntheticProblem::M2() const {
  double top = 0.0;
  for (std::size_t i = 0; i < n(); ++i) top = std::max(top, squared_norm(centers.row(i)));
  return L * L * top;
}

double SyntheticProblem::f_star() const {
  double acc = 0.0;
  for (std::size_t i = 0; i < n(); ++i) acc += squared_norm(centers.row(i));
  return 0.5 * L * acc / static_cast<double>(n());
}

double SyntheticProblem::A() const { return loss(w0) - f_star(); }

double SyntheticProblem::loss(std::span<const double> w) const {
  double acc = 0.0;
  for (std::size_t i = 0; i < n(); ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = w[k] - centers(i, k);
      acc += diff * diff;
    }
  }
  return 0.5 * L * acc / static_cast<double>(n());
}

double SyntheticProblem::grad_norm_sq(std::span<const double> w) const { return L * L * squared_norm(w); }

void SyntheticProblem::client_gradient(std::size_t i, std::span<const double> w, std::span<double> out) const {
  for (std::size_t k = 0; k < d; ++k) out[k] = L * (w[k] - centers(i, k));
}

bounds::LearningParams SyntheticProblem::learning_params(double eta, long T) const {
  return bounds::LearningParams{eta, T, L, sigma * sigma, M2(), A()};
}

SyntheticProblem make_synthetic_problem(std::size_t n, std::size_t d, double heterogeneity_radius, double sigma,
                                        std::uint64_t seed, double L) {
  if (n < 1 || d < 1) throw Error(ErrorCode::InvalidConfig, "problem needs n >= 1 and d >= 1");
  if (!(heterogeneity_radius >= 0.0) || !(sigma >= 0.0) || !(L > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "radius and sigma must be nonnegative, L positive");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto sphere_point = [&](std::span<double> out) {
    double norm = 0.0;
    do {
      for (double& v : out) v = normal(rng);
      norm = std::sqrt(squared_norm(out));
    } while (norm == 0.0);
    for (double& v : out) v /= norm;
  };

  SyntheticProblem pb;
  pb.d = d;
  pb.L = L;
  pb.sigma = sigma;
  pb.centers = Matrix(n, d, 0.0);
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::span<double> c = pb.centers.row(i);
    sphere_point(c);
    const double r = heterogeneity_radius * std::pow(unif(rng), 1.0 / static_cast<double>(d));
    for (std::size_t k = 0; k < d; ++k) {
      c[k] *= r;
      mean[k] += c[k] / static_cast<double>(n);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) pb.centers(i, k) -= mean[k];
  }
  pb.w0.assign(d, 0.0);
  sphere_point(pb.w0);
  return pb;
}

TrainTrace run_generalized_async_sgd(const SyntheticProblem& problem, const netsim::SimConfig& sc,
                                     const bounds::LearningParams& lp, long T) {
  if (T < 0) throw Error(ErrorCode::InvalidConfig, "T must be nonnegative");
  if (problem.n() != sc.config.n()) throw Error(ErrorCode::InvalidConfig, "problem and network disagree on n");
  lp.validate();
  sc.config.validate();
  check_compatible(sc.config, sc.p);

  const std::size_t d = problem.d;
  const double n = static_cast<double>(problem.n());
  netsim::NetworkEngine engine(sc.config, sc.p, sc.init, sc.seed);
  std::mt19937_64 noise_rng = netsim::make_stream(sc.seed, netsim::Stream::Noise);
  std::normal_distribution<double> noise(0.0, problem.sigma / std::sqrt(static_cast<double>(d)));

  std::vector<double> w = problem.w0;
  std::vector<std::vector<double>> snapshots(static_cast<std::size_t>(sc.config.m), problem.w0);
  std::vector<double> g(d);

  TrainTrace trace;
  trace.rounds.reserve(static_cast<std::size_t>(std::min<long>(T + 1, 1L << 22)));
  int assigned = engine.initial_assignment();
  double grad_sum = 0.0;
  double weighted_sum = 0.0;
  for (long t = 0; t <= T; ++t) {
    const auto c = engine.complete(sc.time_limit);
    if (!c) {
      trace.status = TrainStatus::TimeLimit;
      break;
    }
    TrainRound r;
    r.t = t;
    r.wallclock = c->clock;
    r.duration = c->duration;
    r.completed = c->client;
    r.assigned = assigned;
    r.origin = c->assigned_round;
    r.grad_norm_sq = problem.grad_norm_sq(w);
    r.loss = problem.loss(w);
    trace.rounds.push_back(r);
    grad_sum += r.grad_norm_sq;
    weighted_sum += r.duration * r.grad_norm_sq;
    const auto k = static_cast<std::size_t>(r.staleness());
    if (trace.staleness_histogram.size() <= k) trace.staleness_histogram.resize(k + 1, 0);
    ++trace.staleness_histogram[k];

    problem.client_gradient(static_cast<std::size_t>(c->client), snapshots[static_cast<std::size_t>(c->slot)], g);
    if (problem.sigma > 0.0) {
      for (double& v : g) v += noise(noise_rng);
    }
    const double step = lp.eta / (n * sc.p[static_cast<std::size_t>(c->client)]);
    bool finite = true;
    for (std::size_t k2 = 0; k2 < d; ++k2) {
      w[k2] -= step * g[k2];
      finite = finite && std::isfinite(w[k2]);
    }
    if (!finite) {
      trace.status = TrainStatus::Diverged;
      break;
    }
    if (t < T) {
      snapshots[static_cast<std::size_t>(c->slot)] = w;
      assigned = engine.assign();
    }
  }
  const double rounds = static_cast<double>(trace.rounds.size());
  if (rounds > 0) {
    trace.ergodic_grad_norm_sq = grad_sum / rounds;
    trace.weighted_grad_norm_sq = weighted_sum / rounds;
  }
  trace.final_w = std::move(w);
  trace.elapsed = engine.clock();
  return trace;
}

BoundCheck verify_bound(std::span<const TrainTrace> traces, const NetworkConfig& config, const RoutingVector& p,
                        const bounds::LearningParams& lp) {
  if (traces.empty()) throw Error(ErrorCode::InsufficientData, "no training runs to average");
  BoundCheck out;
  out.runs = static_cast<int>(traces.size());
  for (const TrainTrace& tr : traces) {
    if (tr.status == TrainStatus::Diverged) throw Error(ErrorCode::InsufficientData, "a training run diverged");
    out.mean_ergodic += tr.ergodic_grad_norm_sq;
    out.mean_weighted += tr.weighted_grad_norm_sq;
  }
  out.mean_ergodic /= static_cast<double>(out.runs);
  out.mean_weighted /= static_cast<double>(out.runs);
  const bounds::BoundReport report = bounds::bound_G(config, p, lp);
  out.bound_G = 8.0 * report.g_total;
  out.bound_H = 8.0 * report.h_total;
  out.certified = report.certified;
  out.holds_G = out.mean_ergodic <= out.bound_G;
  out.holds_H = out.mean_weighted <= out.bound_H;
  out.margin_G = out.bound_G / out.mean_ergodic;
  out.margin_H = out.bound_H / out.mean_weighted;
  return out;
}

void write_train_csv(const TrainTrace& trace, std::ostream& out) {
  out << "t,wallclock,grad_norm_sq,loss,staleness,client_completed,client_assigned\n";
  for (const TrainRound& r : trace.rounds) {
    out << r.t << ',';
    write_double(out, r.wallclock);
    out << ',';
    write_double(out, r.grad_norm_sq);
    out << ',';
    write_double(out, r.loss);
    out << ',' << r.staleness() << ',' << r.completed << ',' << r.assigned << '\n';
  }
}

void write_wallclock_csv(const TrainTrace& trace, double dt, std::ostream& out) {
  if (!(dt > 0.0)) throw Error(ErrorCode::InvalidConfig, "wall-clock grid step must be positive");
  out << "wallclock,rounds_completed,grad_norm_sq,loss\n";
  if (trace.rounds.empty()) return;
  // Before the end of round t the server holds w_t, recorded in round t.
  std::size_t idx = 0;
  for (long k = 0;; ++k) {
    const double time = static_cast<double>(k) * dt;
    if (time > trace.elapsed) break;
    while (idx + 1 < trace.rounds.size() && trace.rounds[idx].wallclock <= time) ++idx;
    const TrainRound& r = trace.rounds[idx];
    write_double(out, time);
    out << ',' << r.t << ',';
    write_double(out, r.grad_norm_sq);
    out << ',';
    write_double(out, r.loss);
    out << '\n';
  }
}

}  // namespace asyncfl::fedsim
