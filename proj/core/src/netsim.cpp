#include "asyncfl/netsim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <thread>

#include "asyncfl/jackson.hpp"

namespace asyncfl::netsim {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

// Batch means of per-batch values, each already averaged within its batch.
MeanSe batch_stats(std::span<const double> values) {
  MeanSe out;
  const std::size_t b = values.size();
  if (b == 0) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(b);
  if (b < 2) {
    out.se = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.se = std::sqrt(ss / static_cast<double>(b - 1) / static_cast<double>(b));
  return out;
}

// Boundaries of `batches` contiguous batches over [begin, end).
std::vector<long> batch_edges(long begin, long end, int batches) {
  const long count = end - begin;
  const long b = std::max<long>(1, std::min<long>(batches, count));
  std::vector<long> edges(static_cast<std::size_t>(b) + 1);
  for (long k = 0; k <= b; ++k) edges[static_cast<std::size_t>(k)] = begin + k * count / b;
  return edges;
}

void write_double(std::ostream& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out << buf;
}

}  // namespace

long SimConfig::warmup() const {
  if (warmup_rounds) return *warmup_rounds;
  return init == InitPolicy::EqualSplit ? 10L * config.m : 0L;
}

void SimConfig::validate() const {
  config.validate();
  check_compatible(config, p);
  if (horizon_rounds < 1) throw Error(ErrorCode::InvalidConfig, "horizon must be at least one round");
  const long w = warmup();
  if (w < 0 || w >= horizon_rounds) {
    throw Error(ErrorCode::InvalidConfig, "warmup must be nonnegative and shorter than the horizon");
  }
  if (time_limit && !(*time_limit > 0.0)) throw Error(ErrorCode::InvalidConfig, "time limit must be positive");
}

std::mt19937_64 make_stream(std::uint64_t seed, Stream stream) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(stream))));
}

std::uint64_t replication_seed(std::uint64_t base, int r) {
  if (r == 0) return base;
  return splitmix64(base + 0x632be59bd9b4e019ULL * static_cast<std::uint64_t>(r));
}

std::vector<int> sample_stationary_state(const NetworkConfig& config, const RoutingVector& p, std::mt19937_64& rng) {
  const int total = config.m - 1;
  const std::size_t n = config.n();
  std::vector<int> x(n, 0);
  if (total == 0) return x;
  const Matrix cols = jackson::buzen_columns(config, p, total);
  const std::vector<double> rho = jackson::scaled_loads(config, p);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  int left = total;
  // P(x_j = a | first j+1 clients hold `left`) = rho_j^a Z_j(left - a) / Z_{j+1}(left).
  for (std::size_t j = n - 1; j > 0 && left > 0; --j) {
    const double target = unif(rng) * cols(j, static_cast<std::size_t>(left));
    double acc = 0.0;
    double power = 1.0;
    int a = 0;
    for (; a < left; ++a) {
      acc += power * cols(j - 1, static_cast<std::size_t>(left - a));
      if (target < acc) break;
      power *= rho[j];
    }
    x[j] = a;
    left -= a;
  }
  x[0] += left;
  return x;
}

NetworkEngine::NetworkEngine(const NetworkConfig& config, const RoutingVector& p, InitPolicy init,
                             std::uint64_t seed)
    : config_(config),
      jump_chain_(config.service.family == ServiceFamily::Exponential),
      durations_(make_stream(seed, Stream::Durations)),
      completions_(make_stream(seed, Stream::Completions)),
      routing_(make_stream(seed, Stream::Routing)) {
  config_.validate();
  check_compatible(config_, p);
  const std::size_t n = config_.n();
  cdf_.resize(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) cdf_[i] = (acc += p[i]);
  queues_.resize(n);
  lengths_.assign(n, 0);
  finish_.assign(n, 0.0);
  slot_round_.assign(static_cast<std::size_t>(config_.m), 0);
  slot_client_.assign(static_cast<std::size_t>(config_.m), 0);

  std::vector<int> counts(n, 0);
  if (init == InitPolicy::StationarySample) {
    std::mt19937_64 init_rng = make_stream(seed, Stream::Init);
    counts = sample_stationary_state(config_, p, init_rng);
  } else {
    const int base = config_.m / static_cast<int>(n);
    const int extra = config_.m % static_cast<int>(n);
    for (std::size_t i = 0; i < n; ++i) counts[i] = base + (static_cast<int>(i) < extra ? 1 : 0);
  }
  int slot = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < counts[i]; ++k) {
      slot_client_[static_cast<std::size_t>(slot)] = static_cast<int>(i);
      enqueue(static_cast<int>(i), slot++);
    }
  }
  if (init == InitPolicy::StationarySample) {
    freed_slot_ = config_.m - 1;
    initial_assignment_ = assign();
    round_ = 0;  // the extra task of Y_0 belongs to round 0
    slot_round_[static_cast<std::size_t>(config_.m - 1)] = 0;
  }
}

double NetworkEngine::draw_service(int client) {
  const double mean = 1.0 / config_.mu[static_cast<std::size_t>(client)];
  switch (config_.service.family) {
    case ServiceFamily::Exponential: return std::exponential_distribution<double>(1.0 / mean)(durations_);
    case ServiceFamily::Deterministic: return mean;
    case ServiceFamily::Lognormal: {
      const double s = config_.service.sigma_s;
      return std::lognormal_distribution<double>(std::log(mean) - 0.5 * s * s, s)(durations_);
    }
  }
  return mean;
}

void NetworkEngine::start_service(int client) {
  if (!jump_chain_) finish_[static_cast<std::size_t>(client)] = clock_ + draw_service(client);
}

void NetworkEngine::enqueue(int client, int slot) {
  auto& q = queues_[static_cast<std::size_t>(client)];
  q.push_back(slot);
  ++lengths_[static_cast<std::size_t>(client)];
  if (q.size() == 1) start_service(client);
}

std::optional<NetworkEngine::Completion> NetworkEngine::complete(std::optional<double> time_limit) {
  if (freed_slot_ >= 0) throw Error(ErrorCode::InvalidState, "assign() must follow every completion");
  const std::size_t n = queues_.size();
  int client = -1;
  double finish = 0.0;
  if (jump_chain_) {
    double rate = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (lengths_[i] > 0) rate += config_.mu[i];
    }
    finish = clock_ + std::exponential_distribution<double>(rate)(durations_);
    if (time_limit && finish > *time_limit) return std::nullopt;
    const double target = std::uniform_real_distribution<double>(0.0, rate)(completions_);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (lengths_[i] == 0) continue;
      client = static_cast<int>(i);
      acc += config_.mu[i];
      if (target < acc) break;
    }
  } else {
    finish = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (lengths_[i] > 0 && finish_[i] < finish) {
        finish = finish_[i];
        client = static_cast<int>(i);
      }
    }
    if (time_limit && finish > *time_limit) return std::nullopt;
  }

  auto& q = queues_[static_cast<std::size_t>(client)];
  Completion c;
  c.round = round_;
  c.client = client;
  c.slot = q.front();
  c.assigned_round = slot_round_[static_cast<std::size_t>(c.slot)];
  c.duration = finish - clock_;
  c.clock = finish;
  clock_ = finish;
  q.pop_front();
  --lengths_[static_cast<std::size_t>(client)];
  if (!q.empty()) start_service(client);
  freed_slot_ = c.slot;
  return c;
}

int NetworkEngine::assign() {
  if (freed_slot_ < 0) throw Error(ErrorCode::InvalidState, "assign() needs a preceding completion");
  const double u = std::uniform_real_distribution<double>(0.0, cdf_.back())(routing_);
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  const int client = static_cast<int>(std::min<std::ptrdiff_t>(it - cdf_.begin(), std::ssize(cdf_) - 1));
  const int slot = freed_slot_;
  freed_slot_ = -1;
  ++round_;
  slot_round_[static_cast<std::size_t>(slot)] = round_;
  slot_client_[static_cast<std::size_t>(slot)] = client;
  enqueue(client, slot);
  return client;
}

SimTrace simulate(const SimConfig& sc) {
  sc.validate();
  NetworkEngine engine(sc.config, sc.p, sc.init, sc.seed);
  const std::size_t n = sc.config.n();
  const int m = sc.config.m;

  SimTrace trace;
  trace.n = n;
  trace.m = m;
  trace.warmup = sc.warmup();
  trace.initial_state = engine.queue_lengths();
  const auto reserve = static_cast<std::size_t>(std::min<long>(sc.horizon_rounds, 1L << 24));
  trace.rounds.reserve(reserve);
  trace.states.reserve(reserve * n);
  trace.tasks.reserve(reserve + static_cast<std::size_t>(m));

  // A task is initial when it was placed in Y_0 without being routed.
  std::vector<char> slot_initial(static_cast<std::size_t>(m), 1);
  if (engine.initial_assignment() >= 0) slot_initial[static_cast<std::size_t>(m - 1)] = 0;

  int assigned = engine.initial_assignment();
  for (long t = 0; t < sc.horizon_rounds; ++t) {
    const auto c = engine.complete(sc.time_limit);
    if (!c) break;
    trace.tasks.push_back({c->assigned_round, c->client, t, slot_initial[static_cast<std::size_t>(c->slot)] != 0});
    trace.rounds.push_back({t, c->client, assigned, c->duration});
    const auto& x = engine.queue_lengths();
    trace.states.insert(trace.states.end(), x.begin(), x.end());
    if (t + 1 < sc.horizon_rounds) {
      slot_initial[static_cast<std::size_t>(c->slot)] = 0;
      assigned = engine.assign();
    }
  }
  for (int s = 0; s < m; ++s) {
    if (s == engine.free_slot()) continue;
    trace.tasks.push_back({engine.slot_round(s), engine.slot_client(s), -1, slot_initial[static_cast<std::size_t>(s)] != 0});
  }
  trace.elapsed = engine.clock();
  return trace;
}

EmpiricalMoments estimate_moments(const SimTrace& trace, int batches) {
  if (batches < 1) throw Error(ErrorCode::InvalidConfig, "need at least one batch");
  const long total = static_cast<long>(trace.rounds.size());
  const long begin = trace.warmup;
  if (begin >= total) throw Error(ErrorCode::InsufficientData, "no rounds left after the warmup");
  const std::size_t n = trace.n;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  EmpiricalMoments out;
  out.rounds_used = total - begin;
  out.second_moment = Matrix(n, n, 0.0);
  out.covariance = Matrix(n, n, 0.0);
  out.busy_prob.assign(n, 0.0);
  out.mean_jobs.assign(n, 0.0);

  // Queue lengths, throughput and time averages.
  const std::vector<long> edges = batch_edges(begin, total, batches);
  const std::size_t nb = edges.size() - 1;
  out.batches = static_cast<int>(nb);
  std::vector<std::vector<double>> queue_batches(n, std::vector<double>(nb, 0.0));
  std::vector<double> lambda_batches(nb, 0.0);
  std::vector<double> sum_x(n, 0.0);
  double time = 0.0;
  for (std::size_t b = 0; b < nb; ++b) {
    double batch_time = 0.0;
    for (long t = edges[b]; t < edges[b + 1]; ++t) {
      const auto x = trace.state(static_cast<std::size_t>(t));
      const RoundRecord& r = trace.rounds[static_cast<std::size_t>(t)];
      for (std::size_t i = 0; i < n; ++i) {
        queue_batches[i][b] += x[i];
        sum_x[i] += x[i];
        for (std::size_t j = i; j < n; ++j) out.second_moment(i, j) += static_cast<double>(x[i]) * x[j];
        const int y = x[i] + (static_cast<int>(i) == r.completed ? 1 : 0);
        out.mean_jobs[i] += r.duration * y;
        if (y > 0) out.busy_prob[i] += r.duration;
      }
      batch_time += r.duration;
    }
    const double len = static_cast<double>(edges[b + 1] - edges[b]);
    for (std::size_t i = 0; i < n; ++i) queue_batches[i][b] /= len;
    lambda_batches[b] = len / batch_time;
    time += batch_time;
  }
  const double count = static_cast<double>(out.rounds_used);
  out.mean_queue.resize(n);
  out.mean_queue_se.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.mean_queue[i] = sum_x[i] / count;
    out.mean_queue_se[i] = batch_stats(queue_batches[i]).se;
    out.busy_prob[i] /= time;
    out.mean_jobs[i] /= time;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      out.second_moment(i, j) /= count;
      out.second_moment(j, i) = out.second_moment(i, j);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out.covariance(i, j) = out.second_moment(i, j) - out.mean_queue[i] * out.mean_queue[j];
    }
  }
  out.throughput = count / time;
  out.throughput_se = batch_stats(lambda_batches).se;
  out.mean_round_duration = time / count;

  // Delays, indexed by assignment round. Round s >= 1 carries exactly one
  // routed assignment A_s.
  std::vector<long> delay_at(static_cast<std::size_t>(total), -1);
  std::vector<int> client_at(static_cast<std::size_t>(total), -1);
  long censored = total;
  for (const TaskRecord& task : trace.tasks) {
    if (task.initial) continue;
    if (!task.completed()) {
      censored = std::min(censored, task.assigned_round);
      continue;
    }
    if (task.assigned_round < total) {
      delay_at[static_cast<std::size_t>(task.assigned_round)] = task.delay();
      client_at[static_cast<std::size_t>(task.assigned_round)] = task.client;
    }
  }
  const long d_begin = std::max<long>(begin, 1);
  const long d_end = censored;
  out.mean_delay.assign(n, nan);
  out.mean_delay_se.assign(n, nan);
  out.task_delay.assign(n, nan);
  out.delay_sum = nan;
  out.delay_sum_se = nan;
  if (d_end > d_begin) {
    out.delay_rounds_used = d_end - d_begin;
    const std::vector<long> dedges = batch_edges(d_begin, d_end, batches);
    const std::size_t dnb = dedges.size() - 1;
    std::vector<std::vector<double>> delay_batches(n, std::vector<double>(dnb, 0.0));
    std::vector<double> sum_batches(dnb, 0.0);
    std::vector<double> delay_total(n, 0.0);
    std::vector<double> task_count(n, 0.0);
    for (std::size_t b = 0; b < dnb; ++b) {
      for (long s = dedges[b]; s < dedges[b + 1]; ++s) {
        const int c = client_at[static_cast<std::size_t>(s)];
        if (c < 0) continue;
        const double d = static_cast<double>(delay_at[static_cast<std::size_t>(s)]);
        delay_batches[static_cast<std::size_t>(c)][b] += d;
        sum_batches[b] += d;
        delay_total[static_cast<std::size_t>(c)] += d;
        task_count[static_cast<std::size_t>(c)] += 1.0;
      }
      const double len = static_cast<double>(dedges[b + 1] - dedges[b]);
      for (std::size_t i = 0; i < n; ++i) delay_batches[i][b] /= len;
      sum_batches[b] /= len;
    }
    const double rounds = static_cast<double>(out.delay_rounds_used);
    for (std::size_t i = 0; i < n; ++i) {
      out.mean_delay[i] = delay_total[i] / rounds;
      out.mean_delay_se[i] = batch_stats(delay_batches[i]).se;
      if (task_count[i] > 0) out.task_delay[i] = delay_total[i] / task_count[i];
    }
    const MeanSe s = batch_stats(sum_batches);
    double sum = 0.0;
    for (double v : delay_total) sum += v;
    out.delay_sum = sum / rounds;
    out.delay_sum_se = s.se;
  }
  return out;
}

ReplicationSummary replicate(const SimConfig& sc, int replications, int threads, int batches) {
  if (replications < 1) throw Error(ErrorCode::InvalidConfig, "need at least one replication");
  sc.validate();
  ReplicationSummary out;
  out.runs.resize(static_cast<std::size_t>(replications));

  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  auto worker = [&]() {
    for (int r = next++; r < replications && !failed; r = next++) {
      try {
        SimConfig run = sc;
        run.seed = replication_seed(sc.seed, r);
        out.runs[static_cast<std::size_t>(r)] = estimate_moments(simulate(run), batches);
      } catch (...) {
        if (!failed.exchange(true)) failure = std::current_exception();
      }
    }
  };
  unsigned workers = threads > 0 ? static_cast<unsigned>(threads) : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, static_cast<unsigned>(replications));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  const std::size_t n = sc.config.n();
  const double R = static_cast<double>(replications);
  auto aggregate = [&](auto get, double& mean, double& sd, double& se) {
    mean = 0.0;
    double se2 = 0.0;
    for (const auto& run : out.runs) {
      const auto [v, s] = get(run);
      mean += v;
      se2 += s * s;
    }
    mean /= R;
    double ss = 0.0;
    for (const auto& run : out.runs) ss += (get(run).first - mean) * (get(run).first - mean);
    sd = replications > 1 ? std::sqrt(ss / (R - 1.0)) : 0.0;
    se = std::sqrt(se2) / R;
  };
  out.mean_queue.resize(n);
  out.mean_queue_sd.resize(n);
  out.mean_queue_se.resize(n);
  out.mean_delay.resize(n);
  out.mean_delay_sd.resize(n);
  out.mean_delay_se.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    aggregate([i](const EmpiricalMoments& e) { return std::pair{e.mean_queue[i], e.mean_queue_se[i]}; },
              out.mean_queue[i], out.mean_queue_sd[i], out.mean_queue_se[i]);
    aggregate([i](const EmpiricalMoments& e) { return std::pair{e.mean_delay[i], e.mean_delay_se[i]}; },
              out.mean_delay[i], out.mean_delay_sd[i], out.mean_delay_se[i]);
  }
  double unused = 0.0;
  aggregate([](const EmpiricalMoments& e) { return std::pair{e.delay_sum, e.delay_sum_se}; }, out.delay_sum, unused,
            out.delay_sum_se);
  aggregate([](const EmpiricalMoments& e) { return std::pair{e.throughput, e.throughput_se}; }, out.throughput,
            out.throughput_sd, out.throughput_se);
  return out;
}

void write_trace_csv(const SimTrace& trace, std::ostream& out) {
  out << "round,client_completed,client_assigned,duration";
  for (std::size_t i = 0; i < trace.n; ++i) out << ",queue_" << (i + 1);
  out << '\n';
  for (std::size_t t = 0; t < trace.rounds.size(); ++t) {
    const RoundRecord& r = trace.rounds[t];
    out << r.round << ',' << r.completed << ',' << r.assigned << ',';
    write_double(out, r.duration);
    for (int x : trace.state(t)) out << ',' << x;
    out << '\n';
  }
}

void write_tasks_csv(const SimTrace& trace, std::ostream& out) {
  out << "assigned_round,client,completed_round,delay,initial\n";
  for (const TaskRecord& task : trace.tasks) {
    out << task.assigned_round << ',' << task.client << ',' << task.completed_round << ','
        << (task.completed() ? task.delay() : -1) << ',' << (task.initial ? 1 : 0) << '\n';
  }
}

}  // namespace asyncfl::netsim
