#include "commands.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <thread>
#include <vector>

#include "asyncfl/fedsim.hpp"
#include "asyncfl/jackson.hpp"

namespace asyncfl::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    rows.push_back(std::vector<double>(m.row(i).begin(), m.row(i).end()));
  }
  return rows;
}

json bound_json(const bounds::BoundReport& r) {
  json j = {{"term1", r.term1},     {"term2", r.term2},   {"term3", r.term3},         {"G", r.g_total},
            {"H", r.h_total},       {"eta_max", r.eta_max}, {"lambda", r.lambda}, {"certified", r.certified}};
  return j;
}

json learning_json(const bounds::LearningParams& lp) {
  return {{"eta", lp.eta}, {"T", lp.T}, {"L", lp.L}, {"sigma2", lp.sigma2}, {"M2", lp.M2}, {"A", lp.A}, {"B", lp.B()}};
}

json schedule_json(const bounds::EpsilonSchedule& s) {
  return {{"rounds", s.rounds},
          {"expected_time", s.expected_time},
          {"eta", s.eta},
          {"eta_constrained", s.eta_constrained},
          {"term_initial", s.term_initial},
          {"term_variance", s.term_variance},
          {"term_staleness", s.term_staleness}};
}

std::string status_name(routing::OptStatus s) {
  switch (s) {
    case routing::OptStatus::Converged: return "converged";
    case routing::OptStatus::BudgetExhausted: return "budget_exhausted";
    case routing::OptStatus::NonFiniteGradient: return "non_finite_gradient";
  }
  return "unknown";
}

std::string status_name(fedsim::TrainStatus s) {
  switch (s) {
    case fedsim::TrainStatus::Completed: return "completed";
    case fedsim::TrainStatus::Diverged: return "diverged";
    case fedsim::TrainStatus::TimeLimit: return "time_limit";
  }
  return "unknown";
}

template <typename Fn>
void parallel_for(int count, int threads, Fn fn) {
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  auto worker = [&]() {
    for (int k = next++; k < count && !failed; k = next++) {
      try {
        fn(k);
      } catch (...) {
        if (!failed.exchange(true)) failure = std::current_exception();
      }
    }
  };
  const int workers = std::max(1, std::min(threads, count));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::SpecParse:
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidRouting: return kExitSpec;
    default: return kExitNumeric;
  }
}

}  // namespace

int default_threads() {
  if (const char* env = std::getenv("ASYNCFL_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
  }
  return 1;
}

void write_atomically(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw fs::filesystem_error("cannot open for writing", tmp, std::make_error_code(std::errc::io_error));
    body(out);
    out.flush();
    if (!out) throw fs::filesystem_error("write failed", tmp, std::make_error_code(std::errc::io_error));
  }
  fs::rename(tmp, path);
}

void write_json(const fs::path& path, const json& doc) {
  write_atomically(path, [&](std::ostream& out) { out << doc.dump(2) << '\n'; });
}

json cmd_analyze(const ExperimentSpec& spec, const fs::path& dir) {
  const RoutingVector p = resolve_routing(spec);
  const auto moments = jackson::stationary_moments(spec.network, p);
  bounds::BoundReport report = bounds::bound_from_estimates(spec.network, p, spec.learning, moments.mean_queue,
                                                            moments.throughput);
  if (spec.schedule) report.schedule = bounds::rounds_to_epsilon(spec.network, p, spec.learning, *spec.schedule);

  json doc = {{"name", spec.name},
              {"n", spec.network.n()},
              {"m", spec.network.m},
              {"mu", spec.network.mu},
              {"p", p.vector()},
              {"learning", learning_json(spec.learning)},
              {"mean_queue", moments.mean_queue},
              {"mean_delay", jackson::mean_relative_delays(spec.network, p)},
              {"covariance", matrix_json(moments.covariance)},
              {"busy_prob", moments.busy_prob},
              {"mean_jobs", moments.mean_jobs},
              {"throughput", moments.throughput},
              {"mean_round_duration", moments.mean_round_duration},
              {"bound", bound_json(report)}};
  if (report.schedule) doc["schedule"] = schedule_json(*report.schedule);
  const fs::path report_path = dir / "analysis.json";
  write_json(report_path, doc);
  json summary = {{"command", "analyze"}, {"files", {report_path.string()}}, {"G", report.g_total},
                  {"H", report.h_total},  {"throughput", moments.throughput}};

  if (spec.scan) {
    const std::size_t c = spec.scan->client;
    const fs::path scan_path = dir / "scan.csv";
    write_atomically(scan_path, [&](std::ostream& out) {
      out << "p_client,term1,term2,term3,G,H,throughput\n";
      const double rest = 1.0 - p[c];
      for (int k = 1; k <= spec.scan->points; ++k) {
        const double q = static_cast<double>(k) / (spec.scan->points + 1);
        std::vector<double> v(p.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = i == c ? q : p[i] / rest * (1.0 - q);
        double total = std::accumulate(v.begin(), v.end(), 0.0);
        v[c] += 1.0 - total;  // absorb rounding so the entries sum to one
        const auto r = bounds::bound_G(spec.network, RoutingVector(v), spec.learning);
        out << format_double(q) << ',' << format_double(r.term1) << ',' << format_double(r.term2) << ','
            << format_double(r.term3) << ',' << format_double(r.g_total) << ',' << format_double(r.h_total) << ','
            << format_double(r.lambda) << '\n';
      }
    });
    summary["files"].push_back(scan_path.string());
  }
  return summary;
}

json cmd_optimize(const ExperimentSpec& spec, const fs::path& dir, int& exit_code) {
  if (spec.routing.kind != RoutingKind::Optimize) {
    throw Error(ErrorCode::SpecParse, "optimize needs \"routing\": {\"optimize\": \"G\" | \"H\"}");
  }
  std::optional<routing::OptResult> opt;
  const RoutingVector p = resolve_routing(spec, &opt);
  const auto report = bounds::bound_G(spec.network, p, spec.learning);
  const fs::path routing_path = dir / "routing.json";
  const fs::path trace_path = dir / "optimize_trace.csv";
  json doc = {{"name", spec.name},
              {"objective", spec.routing.objective == routing::Objective::G ? "G" : "H"},
              {"p_star", p.vector()},
              {"objective_value", opt->objective_value},
              {"initial_value", opt->initial_value},
              {"status", status_name(opt->status)},
              {"iterations_run", opt->trace.empty() ? 0 : opt->trace.size() - 1},
              {"bound", bound_json(report)}};
  write_json(routing_path, doc);
  write_atomically(trace_path, [&](std::ostream& out) {
    out << "iteration,objective\n";
    for (std::size_t k = 0; k < opt->trace.size(); ++k) out << k << ',' << format_double(opt->trace[k]) << '\n';
  });
  if (opt->status == routing::OptStatus::NonFiniteGradient) exit_code = kExitNumeric;
  return {{"command", "optimize"},
          {"files", {routing_path.string(), trace_path.string()}},
          {"objective_value", opt->objective_value},
          {"status", status_name(opt->status)},
          {"p_star", p.vector()}};
}

json cmd_simulate(const ExperimentSpec& spec, const fs::path& dir, int threads) {
  const RoutingVector p = resolve_routing(spec);
  netsim::SimConfig sc;
  sc.config = spec.network;
  sc.p = p;
  sc.horizon_rounds = spec.simulation.horizon_rounds;
  sc.warmup_rounds = spec.simulation.warmup_rounds;
  sc.seed = spec.simulation.seed;
  sc.init = spec.simulation.init;
  sc.time_limit = spec.simulation.time_limit;
  const auto summary = netsim::replicate(sc, spec.simulation.replications, threads, spec.simulation.batches);
  const auto exact = jackson::stationary_moments(spec.network, p, jackson::MomentDetail::MeansOnly);

  json runs = json::array();
  for (const auto& r : summary.runs) {
    runs.push_back({{"throughput", r.throughput},
                    {"throughput_se", r.throughput_se},
                    {"mean_queue", r.mean_queue},
                    {"mean_delay", r.mean_delay},
                    {"task_delay", r.task_delay},
                    {"rounds_used", r.rounds_used},
                    {"delay_rounds_used", r.delay_rounds_used}});
  }
  json clients = json::array();
  for (std::size_t i = 0; i < p.size(); ++i) {
    clients.push_back({{"client", i},
                       {"p", p[i]},
                       {"mean_queue", summary.mean_queue[i]},
                       {"mean_queue_se", summary.mean_queue_se[i]},
                       {"mean_queue_sd", summary.mean_queue_sd[i]},
                       {"mean_delay", summary.mean_delay[i]},
                       {"mean_delay_se", summary.mean_delay_se[i]},
                       {"mean_delay_sd", summary.mean_delay_sd[i]},
                       {"closed_form_mean_delay", exact.mean_queue[i]}});
  }
  json doc = {{"name", spec.name},
              {"replications", spec.simulation.replications},
              {"seed", spec.simulation.seed},
              {"clients", clients},
              {"delay_sum", summary.delay_sum},
              {"delay_sum_se", summary.delay_sum_se},
              {"closed_form_delay_sum", spec.network.m - 1},
              {"throughput", summary.throughput},
              {"throughput_se", summary.throughput_se},
              {"throughput_sd", summary.throughput_sd},
              {"closed_form_throughput", exact.throughput},
              {"runs", runs}};
  const fs::path summary_path = dir / "simulation.json";
  write_json(summary_path, doc);
  json out = {{"command", "simulate"}, {"files", {summary_path.string()}}, {"throughput", summary.throughput},
              {"closed_form_throughput", exact.throughput}};
  if (spec.simulation.write_trace) {
    const netsim::SimTrace trace = netsim::simulate(sc);
    const fs::path trace_path = dir / "trace.csv";
    const fs::path tasks_path = dir / "tasks.csv";
    write_atomically(trace_path, [&](std::ostream& o) { netsim::write_trace_csv(trace, o); });
    write_atomically(tasks_path, [&](std::ostream& o) { netsim::write_tasks_csv(trace, o); });
    out["files"].push_back(trace_path.string());
    out["files"].push_back(tasks_path.string());
  }
  return out;
}

json cmd_train(const ExperimentSpec& spec, const fs::path& dir, int threads, int& exit_code) {
  const RoutingVector p = resolve_routing(spec);
  const auto& ts = spec.training;
  const fedsim::SyntheticProblem problem =
      fedsim::make_synthetic_problem(spec.network.n(), ts.dimension, ts.heterogeneity_radius, ts.sigma,
                                     ts.problem_seed, ts.L);
  const long T = ts.rounds.value_or(spec.learning.T);
  const bounds::LearningParams lp = problem.learning_params(spec.learning.eta, std::max(T, 1L));

  std::vector<fedsim::TrainTrace> traces(static_cast<std::size_t>(ts.seeds));
  parallel_for(ts.seeds, threads, [&](int k) {
    netsim::SimConfig sc;
    sc.config = spec.network;
    sc.p = p;
    sc.seed = netsim::replication_seed(ts.seed, k);
    sc.init = ts.init;
    sc.time_limit = ts.time_limit;
    traces[static_cast<std::size_t>(k)] = fedsim::run_generalized_async_sgd(problem, sc, lp, T);
  });

  json runs = json::array();
  bool diverged = false;
  for (std::size_t k = 0; k < traces.size(); ++k) {
    const auto& tr = traces[k];
    diverged = diverged || tr.status == fedsim::TrainStatus::Diverged;
    runs.push_back({{"seed", netsim::replication_seed(ts.seed, static_cast<int>(k))},
                    {"status", status_name(tr.status)},
                    {"rounds", tr.rounds.size()},
                    {"elapsed", tr.elapsed},
                    {"ergodic_grad_norm_sq", tr.ergodic_grad_norm_sq},
                    {"weighted_grad_norm_sq", tr.weighted_grad_norm_sq},
                    {"final_loss", tr.rounds.empty() ? 0.0 : tr.rounds.back().loss},
                    {"staleness_histogram", tr.staleness_histogram}});
  }
  json doc = {{"name", spec.name},
              {"p", p.vector()},
              {"problem", {{"n", problem.n()}, {"d", problem.d}, {"L", problem.L}, {"sigma", problem.sigma},
                           {"M2", problem.M2()}, {"A", problem.A()}, {"f_star", problem.f_star()}}},
              {"learning", learning_json(lp)},
              {"runs", runs}};
  if (!diverged) {
    const fedsim::BoundCheck check = fedsim::verify_bound(traces, spec.network, p, lp);
    doc["bound_check"] = {{"mean_ergodic", check.mean_ergodic}, {"mean_weighted", check.mean_weighted},
                          {"bound_8G", check.bound_G},          {"bound_8H", check.bound_H},
                          {"certified", check.certified},       {"holds_G", check.holds_G},
                          {"holds_H", check.holds_H}};
  }
  const fs::path summary_path = dir / "training.json";
  const fs::path rounds_path = dir / "train_rounds.csv";
  const fs::path clock_path = dir / "train_wallclock.csv";
  write_json(summary_path, doc);
  write_atomically(rounds_path, [&](std::ostream& o) { fedsim::write_train_csv(traces.front(), o); });
  write_atomically(clock_path, [&](std::ostream& o) { fedsim::write_wallclock_csv(traces.front(), ts.wallclock_step, o); });
  if (diverged) exit_code = kExitDiverged;
  json out = {{"command", "train"},
              {"files", {summary_path.string(), rounds_path.string(), clock_path.string()}},
              {"diverged", diverged}};
  if (doc.contains("bound_check")) out["bound_check"] = doc["bound_check"];
  return out;
}

json cmd_sweep(const ExperimentSpec& spec, const fs::path& dir) {
  const RoutingVector p = resolve_routing(spec);
  std::vector<int> ms;
  for (int m = spec.sweep.m_min; m <= spec.sweep.m_max; ++m) ms.push_back(m);
  const routing::SweepResult result = routing::sweep_concurrency(spec.network, p, spec.learning, ms);
  const fs::path csv_path = dir / "sweep.csv";
  write_atomically(csv_path, [&](std::ostream& out) {
    out << "m,H\n";
    for (const auto& [m, h] : result.curve) out << m << ',' << format_double(h) << '\n';
  });
  const fs::path json_path = dir / "sweep.json";
  json curve = json::array();
  for (const auto& [m, h] : result.curve) curve.push_back({{"m", m}, {"H", h}});
  write_json(json_path, {{"name", spec.name}, {"m_star", result.m_star}, {"h_star", result.h_star}, {"curve", curve}});
  return {{"command", "sweep"},
          {"files", {csv_path.string(), json_path.string()}},
          {"m_star", result.m_star},
          {"h_star", result.h_star}};
}

int run_command(Command command, const CommandOptions& options, std::ostream& out, std::ostream& err) {
  int exit_code = kExitOk;
  try {
    ExperimentSpec spec = load_spec(options.spec);
    if (options.seed) {
      spec.optimizer.config.seed = *options.seed;
      spec.simulation.seed = *options.seed;
      spec.training.seed = *options.seed;
    }
    if (options.replications) {
      if (*options.replications < 1) throw Error(ErrorCode::InvalidConfig, "--replications must be >= 1");
      spec.simulation.replications = *options.replications;
      spec.training.seeds = *options.replications;
    }
    if (options.m_min) spec.sweep.m_min = *options.m_min;
    if (options.m_max) spec.sweep.m_max = *options.m_max;
    if (spec.sweep.m_min < 1 || spec.sweep.m_max < spec.sweep.m_min) {
      throw Error(ErrorCode::InvalidConfig, "sweep needs 1 <= m_min <= m_max");
    }
    const fs::path dir = options.out.value_or(fs::path(spec.output_dir));
    if (!options.quiet) err << "asyncfl: spec " << options.spec.string() << ", output in " << dir.string() << '\n';

    json summary;
    switch (command) {
      case Command::Analyze: summary = cmd_analyze(spec, dir); break;
      case Command::Optimize: summary = cmd_optimize(spec, dir, exit_code); break;
      case Command::Simulate: summary = cmd_simulate(spec, dir, options.threads); break;
      case Command::Train: summary = cmd_train(spec, dir, options.threads, exit_code); break;
      case Command::Sweep: summary = cmd_sweep(spec, dir); break;
    }
    summary["exit_code"] = exit_code;
    out << summary.dump() << '\n';
    if (!options.quiet && exit_code == kExitDiverged) err << "asyncfl: training diverged\n";
    if (!options.quiet && exit_code == kExitNumeric) err << "asyncfl: optimisation hit a non-finite gradient\n";
    return exit_code;
  } catch (const Error& e) {
    err << "asyncfl: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "asyncfl: " << e.what() << '\n';
    return kExitIo;
  }
}

}  // namespace asyncfl::cli
