#pragma once

// Simulation of the closed network driven by Generalized AsyncSGD.
//
// Round t starts right after completion t-1, when the updated model is sent
// to client A_t. During the round the network holds Y_t (|Y_t| = m) tasks;
// the round ends when client C_t completes a task, leaving X_t = Y_t - e_{C_t}
// in flight. A task assigned at round s and completed at round t has relative
// delay D = t - s: the number of rounds completed while it sat at its client.
//
// Exponential services use the jump chain directly (rate sum over busy
// clients, completer drawn proportionally to mu). Other service families run
// an event-driven simulation with per-client FIFO queues.

#include <cstdint>
#include <deque>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "asyncfl/matrix.hpp"
#include "asyncfl/network.hpp"

namespace asyncfl::netsim {

enum class InitPolicy {
  /// Y_0 drawn from the stationary law of the jump chain (exact sampling).
  StationarySample,
  /// floor(m/n) tasks per client; the remaining m mod n go one each to the
  /// first clients.
  EqualSplit,
};

struct SimConfig {
  NetworkConfig config;
  RoutingVector p = RoutingVector({1.0});
  long horizon_rounds = 1000;
  /// Rounds discarded before measuring; empty means 0 for stationary
  /// initialisation and 10 m for EqualSplit.
  std::optional<long> warmup_rounds;
  std::uint64_t seed = 0;
  InitPolicy init = InitPolicy::StationarySample;
  /// Optional wall-clock budget; the run stops before the first round that
  /// would finish after it.
  std::optional<double> time_limit;

  long warmup() const;
  void validate() const;
};

/// Independent generator for one purpose, derived from a base seed.
enum class Stream : std::uint64_t { Durations = 1, Completions = 2, Routing = 3, Init = 4, Noise = 5 };
std::mt19937_64 make_stream(std::uint64_t seed, Stream stream);

/// Seed of replication r: the base seed itself for r = 0, then a
/// splitmix-scrambled sequence.
std::uint64_t replication_seed(std::uint64_t base, int r);

/// Samples X from pi_{n,m-1} exactly (backward sampling over the Buzen table).
std::vector<int> sample_stationary_state(const NetworkConfig& config, const RoutingVector& p, std::mt19937_64& rng);

/// The queueing engine shared by netsim and fedsim. Tasks live in m slots;
/// the task assigned at the end of a round reuses the slot of the task that
/// just completed, so callers can attach payloads to slot indices.
class NetworkEngine {
 public:
  struct Completion {
    long round = 0;
    int client = 0;
    int slot = 0;
    long assigned_round = 0;  // I_t
    double duration = 0.0;    // tau_t
    double clock = 0.0;       // wall-clock time at the end of the round
  };

  NetworkEngine(const NetworkConfig& config, const RoutingVector& p, InitPolicy init, std::uint64_t seed);

  /// Ends the current round. Returns nothing if the round would finish after
  /// `time_limit`.
  std::optional<Completion> complete(std::optional<double> time_limit = std::nullopt);

  /// Sends the next task (in the slot freed by the last completion) to a
  /// client drawn from p, and starts the next round. Returns the client.
  int assign();

  long round() const noexcept { return round_; }
  double clock() const noexcept { return clock_; }
  /// Tasks at each client right now.
  const std::vector<int>& queue_lengths() const noexcept { return lengths_; }
  /// Client that received the extra task of Y_0 under stationary
  /// initialisation, -1 otherwise.
  int initial_assignment() const noexcept { return initial_assignment_; }
  long slot_round(int slot) const { return slot_round_[static_cast<std::size_t>(slot)]; }
  int slot_client(int slot) const { return slot_client_[static_cast<std::size_t>(slot)]; }
  int concurrency() const noexcept { return static_cast<int>(slot_round_.size()); }
  /// Slot left empty by a completion not yet followed by assign(), or -1.
  int free_slot() const noexcept { return freed_slot_; }

 private:
  void enqueue(int client, int slot);
  void start_service(int client);
  double draw_service(int client);

  NetworkConfig config_;
  std::vector<double> cdf_;
  bool jump_chain_;
  std::mt19937_64 durations_;
  std::mt19937_64 completions_;
  std::mt19937_64 routing_;
  std::vector<std::deque<int>> queues_;
  std::vector<int> lengths_;
  std::vector<double> finish_;  // event mode: completion time of the head task
  std::vector<long> slot_round_;
  std::vector<int> slot_client_;
  int freed_slot_ = -1;
  int initial_assignment_ = -1;
  long round_ = 0;
  double clock_ = 0.0;
};

struct RoundRecord {
  long round = 0;
  int completed = 0;  // C_t
  int assigned = -1;  // A_t, the client that received a task at the start of round t (-1: none)
  double duration = 0.0;
};

struct TaskRecord {
  long assigned_round = 0;
  int client = 0;
  long completed_round = -1;  // -1 if still in flight at the end of the run
  bool initial = false;       // part of Y_0 and not a routed assignment

  bool completed() const noexcept { return completed_round >= 0; }
  long delay() const noexcept { return completed_round - assigned_round; }
};

struct SimTrace {
  std::size_t n = 0;
  int m = 0;
  long warmup = 0;
  std::vector<int> initial_state;  // Y_0
  std::vector<RoundRecord> rounds;
  std::vector<int> states;         // X_t, row-major with n entries per round
  std::vector<TaskRecord> tasks;   // in completion order, then in-flight tasks
  double elapsed = 0.0;

  std::span<const int> state(std::size_t t) const { return {states.data() + t * n, n}; }
};

SimTrace simulate(const SimConfig& sc);

struct EmpiricalMoments {
  std::vector<double> mean_queue;  // mean of X_t over measured rounds
  std::vector<double> mean_queue_se;
  Matrix second_moment;
  Matrix covariance;
  /// Per-round mean delay: total delay of tasks routed to i divided by the
  /// number of rounds (the quantity equal to E[X_i]).
  std::vector<double> mean_delay;
  std::vector<double> mean_delay_se;
  double delay_sum = 0.0;
  double delay_sum_se = 0.0;
  /// Mean delay per task routed to i (approximately E[X_i] / p_i).
  std::vector<double> task_delay;
  std::vector<double> busy_prob;  // time-average of 1{Y_i > 0}
  std::vector<double> mean_jobs;  // time-average of Y_i
  double throughput = 0.0;
  double throughput_se = 0.0;
  double mean_round_duration = 0.0;
  long rounds_used = 0;
  long delay_rounds_used = 0;
  int batches = 0;
};

/// Batch-means estimates from the post-warmup part of a trace. Delays use the
/// assignment rounds whose tasks all completed before the end of the run.
/// Throws Error(InsufficientData) if no round is left after the warmup.
EmpiricalMoments estimate_moments(const SimTrace& trace, int batches = 30);

struct ReplicationSummary {
  std::vector<EmpiricalMoments> runs;
  std::vector<double> mean_queue;       // across-run means
  std::vector<double> mean_queue_sd;    // across-run standard deviations
  std::vector<double> mean_queue_se;    // pooled batch-means standard error of the mean
  std::vector<double> mean_delay;
  std::vector<double> mean_delay_sd;
  std::vector<double> mean_delay_se;
  double delay_sum = 0.0;
  double delay_sum_se = 0.0;
  double throughput = 0.0;
  double throughput_sd = 0.0;
  double throughput_se = 0.0;
};

/// Runs independent replications with seeds replication_seed(sc.seed, r) on
/// up to `threads` worker threads (0 means hardware concurrency). The result
/// does not depend on the thread count.
ReplicationSummary replicate(const SimConfig& sc, int replications, int threads = 1, int batches = 30);

/// CSV with header round,client_completed,client_assigned,duration,queue_1..queue_n
/// where the queues are X_t. Doubles use 17 significant digits.
void write_trace_csv(const SimTrace& trace, std::ostream& out);

/// CSV of per-task records: assigned_round,client,completed_round,delay,initial.
void write_tasks_csv(const SimTrace& trace, std::ostream& out);

}  // namespace asyncfl::netsim
