#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "asyncfl/fedsim.hpp"
#include "commands.hpp"
#include "experiment.hpp"

using namespace asyncfl;
using namespace asyncfl::cli;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("asyncfl_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_spec(const fs::path& dir, const json& doc) {
  const fs::path path = dir / "spec.json";
  std::ofstream(path) << doc.dump(2);
  return path;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  return json::parse(in);
}

struct Run {
  int code = 0;
  json summary;
  std::string err;
};

Run run(Command command, const fs::path& spec, const fs::path& out, std::optional<std::uint64_t> seed = {}) {
  CommandOptions opts;
  opts.spec = spec;
  opts.out = out;
  opts.seed = seed;
  opts.quiet = true;
  std::ostringstream o, e;
  Run r;
  r.code = run_command(command, opts, o, e);
  r.err = e.str();
  if (!o.str().empty()) r.summary = json::parse(o.str());
  return r;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream fields(line);
    std::string cell;
    while (std::getline(fields, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

json small_network() { return {{"n", 3}, {"m", 4}, {"mu", {1.0, 2.0, 4.0}}}; }

}  // namespace

TEST_CASE("rate generators") {
  const auto e = generate_rates("exp(i/100)", 3);
  CHECK(e[0] == std::exp(0.01));
  CHECK(e[2] == std::exp(0.03));
  CHECK(generate_rates(" const( 2.5 ) ", 2) == std::vector<double>{2.5, 2.5});
  CHECK_THROWS_AS(generate_rates("log(i)", 3), Error);
  CHECK_THROWS_AS(generate_rates("exp(i/abc)", 3), Error);
}

TEST_CASE("spec parsing") {
  SUBCASE("full document") {
    const json doc = {
        {"name", "demo"},
        {"network", {{"n", 30}, {"m", 30}, {"clusters", {{{"count", 10}, {"mean_time", 100.0}},
                                                          {{"count", 10}, {"mean_time", 10.0}},
                                                          {{"count", 10}, {"mean_time", 1.0}}}},
                     {"service", {{"family", "lognormal"}, {"sigma_s", 0.5}}}}},
        {"routing", {{"optimize", "H"}}},
        {"learning", {{"eta", 0.01}, {"T", 200}, {"L", 1.0}, {"sigma", 3.0}, {"M", 10.0}, {"A_over_T", 15.0}}},
        {"schedule", {{"alpha", 0.5}, {"C", 0.02}, {"epsilon", 0.1}}},
        {"optimizer", {{"iterations", 50}, {"step_size", 0.01}, {"restarts", 2}, {"seed", 9}, {"init", "balanced"}}},
        {"simulation", {{"horizon_rounds", 500}, {"init", "equal_split"}, {"replications", 3}, {"time_limit", 40.0}}},
        {"training", {{"dimension", 4}, {"seeds", 2}, {"rounds", 30}}},
        {"sweep", {{"m_min", 2}, {"m_max", 9}}},
        {"output", {{"dir", "somewhere"}}}};
    const auto spec = parse_spec(doc);
    CHECK(spec.name == "demo");
    REQUIRE(spec.network.n() == 30);
    CHECK(spec.network.mu[0] == 0.01);
    CHECK(spec.network.mu[29] == 1.0);
    CHECK(spec.network.service.family == ServiceFamily::Lognormal);
    CHECK(spec.network.service.sigma_s == 0.5);
    CHECK(spec.routing.kind == RoutingKind::Optimize);
    CHECK(spec.routing.objective == routing::Objective::H);
    CHECK(spec.learning.sigma2 == 9.0);
    CHECK(spec.learning.M2 == 100.0);
    CHECK(spec.learning.A == 3000.0);
    REQUIRE(spec.schedule.has_value());
    CHECK(spec.schedule->C == 0.02);
    CHECK(spec.optimizer.config.iterations == 50);
    CHECK(spec.optimizer.config.restarts == 2);
    CHECK(spec.optimizer.init == OptimizerInit::Balanced);
    CHECK(spec.simulation.init == netsim::InitPolicy::EqualSplit);
    CHECK(spec.simulation.time_limit == 40.0);
    CHECK(spec.training.dimension == 4);
    CHECK(spec.sweep.m_max == 9);
    CHECK(spec.output_dir == "somewhere");
  }
  SUBCASE("routing forms") {
    json doc = {{"network", small_network()}};
    CHECK(parse_spec(doc).routing.kind == RoutingKind::Uniform);
    doc["routing"] = "balanced";
    CHECK(resolve_routing(parse_spec(doc)).vector() == RoutingVector::balanced(std::vector<double>{1, 2, 4}).vector());
    doc["routing"] = {0.2, 0.3, 0.5};
    CHECK(resolve_routing(parse_spec(doc)).vector() == std::vector<double>{0.2, 0.3, 0.5});
    doc["network"]["mu"] = "exp(i/10)";
    CHECK(parse_spec(doc).network.mu[1] == std::exp(0.2));
  }
  auto code_of = [](const json& doc) {
    try {
      parse_spec(doc);
    } catch (const Error& e) {
      return e.code();
    }
    FAIL("spec accepted");
    return ErrorCode::SpecParse;
  };
  SUBCASE("unknown keys are rejected everywhere") {
    const json base = {{"network", small_network()}};
    json top = base;
    top["colour"] = "blue";
    CHECK(code_of(top) == ErrorCode::SpecParse);
    json nested = base;
    nested["network"]["lambda"] = 3;
    CHECK(code_of(nested) == ErrorCode::SpecParse);
    json learning = base;
    learning["learning"] = {{"eta", 0.1}, {"gamma", 1}};
    CHECK(code_of(learning) == ErrorCode::SpecParse);
    json sim = base;
    sim["simulation"] = {{"horizon", 10}};
    CHECK(code_of(sim) == ErrorCode::SpecParse);
  }
  SUBCASE("malformed values") {
    CHECK(code_of(json::object()) == ErrorCode::SpecParse);
    CHECK(code_of({{"network", {{"n", 2}, {"m", 3}}}}) == ErrorCode::SpecParse);
    CHECK(code_of({{"network", {{"n", 2}, {"m", "three"}, {"mu", {1, 2}}}}}) == ErrorCode::SpecParse);
    CHECK(code_of({{"network", {{"n", 3}, {"m", 3}, {"mu", {1, 2}}}}}) == ErrorCode::SpecParse);
    CHECK(code_of({{"network", small_network()}, {"routing", "fastest"}}) == ErrorCode::SpecParse);
    CHECK(code_of({{"network", small_network()}, {"learning", {{"sigma", 1}, {"sigma2", 1}}}}) ==
          ErrorCode::SpecParse);
    CHECK(code_of({{"network", {{"n", 2}, {"m", 0}, {"mu", {1, 2}}}}}) == ErrorCode::InvalidConfig);
    CHECK(code_of({{"network", small_network()}, {"learning", {{"eta", -1.0}}}}) == ErrorCode::InvalidConfig);
    CHECK(code_of({{"network", small_network()}, {"routing", {0.5, 0.6, -0.1}}}) == ErrorCode::InvalidRouting);
  }
}

TEST_CASE("spec files") {
  const auto dir = scratch_dir("files");
  std::ofstream(dir / "broken.json") << "{ \"network\": ";
  try {
    load_spec(dir / "broken.json");
    FAIL("broken JSON accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SpecParse);
  }
  CHECK_THROWS_AS(load_spec(dir / "missing.json"), Error);
}

TEST_CASE("shipped experiment specs parse") {
  int count = 0;
  for (const auto& entry : fs::directory_iterator(ASYNCFL_EXPERIMENTS_DIR)) {
    if (entry.path().extension() != ".json") continue;
    CAPTURE(entry.path().string());
    CHECK_NOTHROW(load_spec(entry.path()));
    ++count;
  }
  CHECK(count >= 5);
}

TEST_CASE("analyze") {
  const auto dir = scratch_dir("analyze");
  SUBCASE("single client") {
    const auto spec = write_spec(dir, {{"network", {{"n", 1}, {"m", 6}, {"mu", {2.5}}}}});
    const auto r = run(Command::Analyze, spec, dir / "out");
    REQUIRE(r.code == kExitOk);
    const auto doc = read_json(dir / "out" / "analysis.json");
    CHECK(doc["throughput"].get<double>() == 2.5);
    CHECK(doc["mean_delay"][0].get<double>() == 5.0);
    CHECK(r.summary["exit_code"] == 0);
  }
  SUBCASE("values equal the library calls bit for bit") {
    const json d = {{"network", small_network()},
                    {"routing", {0.5, 0.3, 0.2}},
                    {"learning", {{"eta", 0.003}, {"T", 777}, {"L", 1.3}, {"sigma2", 2.0}, {"M2", 0.7}, {"A", 4.0}}},
                    {"schedule", {{"alpha", 0.5}, {"C", 0.01}, {"epsilon", 0.05}}},
                    {"scan", {{"client", 0}, {"points", 20}}}};
    const auto path = write_spec(dir, d);
    REQUIRE(run(Command::Analyze, path, dir / "out").code == kExitOk);
    const auto doc = read_json(dir / "out" / "analysis.json");
    const auto spec = parse_spec(d);
    const RoutingVector p({0.5, 0.3, 0.2});
    const auto mom = jackson::stationary_moments(spec.network, p);
    const auto rep = bounds::bound_G(spec.network, p, spec.learning);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(doc["mean_queue"][i].get<double>() == mom.mean_queue[i]);
      CHECK(doc["busy_prob"][i].get<double>() == mom.busy_prob[i]);
    }
    CHECK(doc["throughput"].get<double>() == mom.throughput);
    CHECK(doc["bound"]["G"].get<double>() == rep.g_total);
    CHECK(doc["bound"]["H"].get<double>() == rep.h_total);
    CHECK(doc["bound"]["eta_max"].get<double>() == rep.eta_max);
    const auto sched = bounds::rounds_to_epsilon(spec.network, p, spec.learning, *spec.schedule);
    CHECK(doc["schedule"]["rounds"].get<long>() == sched.rounds);
    CHECK(doc["schedule"]["expected_time"].get<double>() == sched.expected_time);

    const auto scan = read_csv(dir / "out" / "scan.csv");
    REQUIRE(scan.size() == 21);
    CHECK(scan[0] == std::vector<std::string>{"p_client", "term1", "term2", "term3", "G", "H", "throughput"});
    for (std::size_t k = 1; k < scan.size(); ++k) {
      const double q = std::stod(scan[k][0]);
      CHECK(q == static_cast<double>(k) / 21.0);
      const double g = std::stod(scan[k][4]);
      CHECK(g == std::stod(scan[k][1]) + std::stod(scan[k][2]) + std::stod(scan[k][3]));
    }
  }
  SUBCASE("uniform routing reproduces the closed form") {
    const json d = {{"network", small_network()},
                    {"learning", {{"eta", 0.01}, {"T", 1000}, {"L", 1.0}, {"sigma2", 1.0}, {"M2", 1.0}, {"A", 2.0}}}};
    REQUIRE(run(Command::Analyze, write_spec(dir, d), dir / "out").code == kExitOk);
    const double G = read_json(dir / "out" / "analysis.json")["bound"]["G"].get<double>();
    const double B = 3.0;
    const double expected = 2.0 / (0.01 * 1001) + 0.01 * B + 0.0001 * B * 4 * 3;
    CHECK(G == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("exit codes") {
  const auto dir = scratch_dir("exit");
  SUBCASE("bad spec") {
    const auto spec = write_spec(dir, {{"network", small_network()}, {"unknown", 1}});
    const auto r = run(Command::Analyze, spec, dir / "out");
    CHECK(r.code == kExitSpec);
    CHECK(r.err.find("unknown") != std::string::npos);
  }
  SUBCASE("invalid routing") {
    const auto spec = write_spec(dir, {{"network", small_network()}, {"routing", {0.5, 0.5}}});
    CHECK(run(Command::Analyze, spec, dir / "out").code == kExitSpec);
  }
  SUBCASE("optimize without an objective") {
    const auto spec = write_spec(dir, {{"network", small_network()}});
    CHECK(run(Command::Optimize, spec, dir / "out").code == kExitSpec);
  }
  SUBCASE("numeric failure") {
    const auto spec = write_spec(dir, {{"network", small_network()},
                                       {"schedule", {{"alpha", 0.5}, {"C", 1e200}, {"epsilon", 1.0}}}});
    CHECK(run(Command::Analyze, spec, dir / "out").code == kExitNumeric);
  }
  SUBCASE("divergence") {
    const auto spec = write_spec(dir, {{"network", {{"n", 2}, {"m", 2}, {"mu", {1.0, 1.0}}}},
                                       {"learning", {{"eta", 50.0}, {"T", 5000}}},
                                       {"training", {{"dimension", 2}, {"sigma", 0.0}}}});
    const auto r = run(Command::Train, spec, dir / "out");
    CHECK(r.code == kExitDiverged);
    CHECK(r.summary["diverged"] == true);
  }
  SUBCASE("unwritable output") {
    const auto spec = write_spec(dir, {{"network", small_network()}});
    std::ofstream(dir / "blocker") << "x";
    CHECK(run(Command::Analyze, spec, dir / "blocker" / "out").code == kExitIo);
  }
  SUBCASE("missing spec file") {
    CHECK(run(Command::Analyze, dir / "nope.json", dir / "out").code == kExitSpec);
  }
}

TEST_CASE("optimize") {
  const auto dir = scratch_dir("optimize");
  const json d = {{"network", {{"n", 4}, {"m", 1}, {"mu", {0.5, 1.0, 2.0, 4.0}}}},
                  {"routing", {{"optimize", "G"}}},
                  {"optimizer", {{"iterations", 2000}, {"step_size", 0.01}}}};
  const auto r = run(Command::Optimize, write_spec(dir, d), dir / "out");
  REQUIRE(r.code == kExitOk);
  const auto doc = read_json(dir / "out" / "routing.json");
  for (const auto& v : doc["p_star"]) CHECK(std::abs(v.get<double>() - 0.25) <= 0.05);
  const auto trace = read_csv(dir / "out" / "optimize_trace.csv");
  CHECK(trace.size() == doc["iterations_run"].get<std::size_t>() + 2);

  const auto spec = parse_spec(d);
  const auto direct = routing::optimize_routing(spec.network, spec.learning, spec.optimizer.config);
  CHECK(doc["objective_value"].get<double>() == direct.objective_value);
  for (std::size_t i = 0; i < 4; ++i) CHECK(doc["p_star"][i].get<double>() == direct.p_star[i]);
}

TEST_CASE("simulate") {
  const auto dir = scratch_dir("simulate");
  const json d = {{"network", small_network()},
                  {"routing", {0.5, 0.3, 0.2}},
                  {"simulation", {{"horizon_rounds", 2000}, {"replications", 3}, {"seed", 5}}}};
  const auto path = write_spec(dir, d);
  REQUIRE(run(Command::Simulate, path, dir / "a").code == kExitOk);
  REQUIRE(run(Command::Simulate, path, dir / "b").code == kExitOk);
  const auto a = read_json(dir / "a" / "simulation.json");
  CHECK(a == read_json(dir / "b" / "simulation.json"));
  const auto spec = parse_spec(d);
  netsim::SimConfig sc;
  sc.config = spec.network;
  sc.p = RoutingVector({0.5, 0.3, 0.2});
  sc.horizon_rounds = 2000;
  sc.seed = 5;
  const auto rep = netsim::replicate(sc, 3);
  CHECK(a["throughput"].get<double>() == rep.throughput);
  CHECK(a["clients"][1]["mean_delay"].get<double>() == rep.mean_delay[1]);
  const auto trace = read_csv(dir / "a" / "trace.csv");
  CHECK(trace.size() == 2001);
  CHECK(trace[0].size() == 7);
  const auto first = netsim::simulate(sc);
  CHECK(std::stod(trace[1][3]) == first.rounds[0].duration);

  REQUIRE(run(Command::Simulate, path, dir / "c", 6).code == kExitOk);
  CHECK(read_json(dir / "c" / "simulation.json")["throughput"] != a["throughput"]);
}

TEST_CASE("train") {
  const auto dir = scratch_dir("train");
  const json d = {{"network", small_network()},
                  {"learning", {{"eta", 0.005}, {"T", 300}}},
                  {"training", {{"dimension", 3}, {"seeds", 3}, {"sigma", 0.5}, {"heterogeneity_radius", 1.0},
                                {"wallclock_step", 5.0}}}};
  const auto r = run(Command::Train, write_spec(dir, d), dir / "out");
  REQUIRE(r.code == kExitOk);
  const auto doc = read_json(dir / "out" / "training.json");
  CHECK(doc["runs"].size() == 3);
  CHECK(doc["bound_check"]["holds_G"] == true);
  const auto rounds = read_csv(dir / "out" / "train_rounds.csv");
  CHECK(rounds.size() == 302);
  CHECK(rounds[0][0] == "t");
  const auto clock = read_csv(dir / "out" / "train_wallclock.csv");
  CHECK(clock[0] == std::vector<std::string>{"wallclock", "rounds_completed", "grad_norm_sq", "loss"});

  const auto spec = parse_spec(d);
  const auto pb = fedsim::make_synthetic_problem(3, 3, 1.0, 0.5, 0, 1.0);
  netsim::SimConfig sc;
  sc.config = spec.network;
  sc.p = RoutingVector::uniform(3);
  sc.seed = 1;
  const auto tr = fedsim::run_generalized_async_sgd(pb, sc, pb.learning_params(0.005, 300), 300);
  CHECK(doc["runs"][0]["ergodic_grad_norm_sq"].get<double>() == tr.ergodic_grad_norm_sq);
}

TEST_CASE("sweep") {
  const auto dir = scratch_dir("sweep");
  const json d = {{"network", {{"n", 1}, {"m", 1}, {"mu", {2.0}}}}, {"sweep", {{"m_min", 1}, {"m_max", 12}}}};
  const auto path = write_spec(dir, d);
  const auto r = run(Command::Sweep, path, dir / "out");
  REQUIRE(r.code == kExitOk);
  CHECK(r.summary["m_star"] == 1);
  const auto csv = read_csv(dir / "out" / "sweep.csv");
  CHECK(csv.size() == 13);
  const auto doc = read_json(dir / "out" / "sweep.json");
  CHECK(doc["curve"].size() == 12);
  for (std::size_t k = 0; k < 12; ++k) {
    CHECK(std::stod(csv[k + 1][1]) == doc["curve"][k]["H"].get<double>());
  }
  REQUIRE(run(Command::Sweep, path, dir / "again").code == kExitOk);
  CHECK(read_json(dir / "again" / "sweep.json") == doc);

  CommandOptions opts;
  opts.spec = path;
  opts.out = dir / "bad";
  opts.m_min = 5;
  opts.m_max = 2;
  opts.quiet = true;
  std::ostringstream o, e;
  CHECK(run_command(Command::Sweep, opts, o, e) == kExitSpec);
}

TEST_CASE("atomic writes and JSON round trips") {
  const auto dir = scratch_dir("atomic");
  const std::vector<double> values{0.1, 1.0 / 3.0, std::exp(1.0), 1e-300, 123456789.123456789, -2.5e17};
  write_json(dir / "v.json", {{"values", values}});
  CHECK(read_json(dir / "v.json")["values"].get<std::vector<double>>() == values);
  CHECK_FALSE(fs::exists(dir / "v.json.tmp"));
  CHECK_THROWS(write_atomically(dir / "w.txt", [](std::ostream&) { throw std::runtime_error("boom"); }));
  CHECK_FALSE(fs::exists(dir / "w.txt"));
}

TEST_CASE("thread count from the environment") {
  ::setenv("ASYNCFL_THREADS", "6", 1);
  CHECK(default_threads() == 6);
  ::setenv("ASYNCFL_THREADS", "zero", 1);
  CHECK(default_threads() == 1);
  ::unsetenv("ASYNCFL_THREADS");
  CHECK(default_threads() == 1);
}
