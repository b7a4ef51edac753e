#include "experiment.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <regex>
#include <string_view>

namespace asyncfl::cli {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::SpecParse, where + ": " + what);
}

void check_keys(const json& obj, const std::string& where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) fail(where, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (std::string_view a : allowed) known = known || key == a;
    if (!known) fail(where, "unknown key \"" + key + "\"");
  }
}

double number(const json& obj, const std::string& key, const std::string& where) {
  const json& v = obj.at(key);
  if (!v.is_number()) fail(where + "." + key, "expected a number");
  return v.get<double>();
}

long integer(const json& obj, const std::string& key, const std::string& where) {
  const json& v = obj.at(key);
  if (!v.is_number_integer()) fail(where + "." + key, "expected an integer");
  return v.get<long>();
}

std::uint64_t seed_value(const json& obj, const std::string& key, const std::string& where) {
  const json& v = obj.at(key);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<long>() >= 0) return static_cast<std::uint64_t>(v.get<long>());
  fail(where + "." + key, "expected a nonnegative integer");
}

std::string text(const json& obj, const std::string& key, const std::string& where) {
  const json& v = obj.at(key);
  if (!v.is_string()) fail(where + "." + key, "expected a string");
  return v.get<std::string>();
}

bool flag(const json& obj, const std::string& key, const std::string& where) {
  const json& v = obj.at(key);
  if (!v.is_boolean()) fail(where + "." + key, "expected true or false");
  return v.get<bool>();
}

std::vector<double> numbers(const json& v, const std::string& where) {
  if (!v.is_array()) fail(where, "expected an array of numbers");
  std::vector<double> out;
  for (const json& x : v) {
    if (!x.is_number()) fail(where, "expected an array of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

netsim::InitPolicy init_policy(const std::string& value, const std::string& where) {
  if (value == "stationary") return netsim::InitPolicy::StationarySample;
  if (value == "equal_split") return netsim::InitPolicy::EqualSplit;
  fail(where, "expected \"stationary\" or \"equal_split\"");
}

routing::Objective objective(const std::string& value, const std::string& where) {
  if (value == "G") return routing::Objective::G;
  if (value == "H") return routing::Objective::H;
  fail(where, "expected \"G\" or \"H\"");
}

NetworkConfig parse_network(const json& j) {
  const std::string w = "network";
  check_keys(j, w, {"n", "m", "mu", "clusters", "service"});
  NetworkConfig cfg;
  if (!j.contains("m")) fail(w, "missing \"m\"");
  cfg.m = static_cast<int>(integer(j, "m", w));
  const bool has_mu = j.contains("mu");
  const bool has_clusters = j.contains("clusters");
  if (has_mu == has_clusters) fail(w, "exactly one of \"mu\" and \"clusters\" is required");
  if (has_mu && j.at("mu").is_string()) {
    if (!j.contains("n")) fail(w, "a rate generator needs \"n\"");
    cfg.mu = generate_rates(j.at("mu").get<std::string>(), static_cast<std::size_t>(integer(j, "n", w)));
  } else if (has_mu) {
    cfg.mu = numbers(j.at("mu"), w + ".mu");
  } else {
    const json& clusters = j.at("clusters");
    if (!clusters.is_array() || clusters.empty()) fail(w + ".clusters", "expected a nonempty array");
    for (const json& c : clusters) {
      const std::string cw = w + ".clusters[]";
      check_keys(c, cw, {"count", "mean_time"});
      if (!c.contains("count") || !c.contains("mean_time")) fail(cw, "needs \"count\" and \"mean_time\"");
      const long count = integer(c, "count", cw);
      const double mean_time = number(c, "mean_time", cw);
      if (count < 1 || !(mean_time > 0.0)) fail(cw, "count must be positive and mean_time > 0");
      cfg.mu.insert(cfg.mu.end(), static_cast<std::size_t>(count), 1.0 / mean_time);
    }
  }
  if (j.contains("n") && static_cast<std::size_t>(integer(j, "n", w)) != cfg.mu.size()) {
    fail(w, "\"n\" disagrees with the number of rates");
  }
  if (j.contains("service")) {
    const json& s = j.at("service");
    const std::string sw = w + ".service";
    std::string family;
    if (s.is_string()) {
      family = s.get<std::string>();
    } else {
      check_keys(s, sw, {"family", "sigma_s"});
      if (!s.contains("family")) fail(sw, "missing \"family\"");
      family = text(s, "family", sw);
      if (s.contains("sigma_s")) cfg.service.sigma_s = number(s, "sigma_s", sw);
    }
    if (family == "exponential") {
      cfg.service.family = ServiceFamily::Exponential;
    } else if (family == "deterministic") {
      cfg.service.family = ServiceFamily::Deterministic;
    } else if (family == "lognormal") {
      cfg.service.family = ServiceFamily::Lognormal;
    } else {
      fail(sw, "unknown service family \"" + family + "\"");
    }
  }
  cfg.validate();
  return cfg;
}

RoutingSpec parse_routing(const json& j) {
  const std::string w = "routing";
  RoutingSpec r;
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "uniform") {
      r.kind = RoutingKind::Uniform;
    } else if (s == "balanced") {
      r.kind = RoutingKind::Balanced;
    } else {
      fail(w, "expected \"uniform\", \"balanced\", an array or {\"optimize\": ...}");
    }
  } else if (j.is_array()) {
    r.kind = RoutingKind::Explicit;
    r.values = numbers(j, w);
  } else {
    check_keys(j, w, {"optimize"});
    if (!j.contains("optimize")) fail(w, "missing \"optimize\"");
    r.kind = RoutingKind::Optimize;
    r.objective = objective(text(j, "optimize", w), w + ".optimize");
  }
  return r;
}

bounds::LearningParams parse_learning(const json& j) {
  const std::string w = "learning";
  check_keys(j, w, {"eta", "T", "L", "sigma2", "sigma", "M2", "M", "A", "A_over_T"});
  bounds::LearningParams lp;
  if (j.contains("eta")) lp.eta = number(j, "eta", w);
  if (j.contains("T")) lp.T = integer(j, "T", w);
  if (j.contains("L")) lp.L = number(j, "L", w);
  auto either = [&](const char* squared, const char* plain, double& out) {
    if (j.contains(squared) && j.contains(plain)) fail(w, std::string("give either ") + squared + " or " + plain);
    if (j.contains(squared)) out = number(j, squared, w);
    if (j.contains(plain)) {
      const double v = number(j, plain, w);
      out = v * v;
    }
  };
  either("sigma2", "sigma", lp.sigma2);
  either("M2", "M", lp.M2);
  if (j.contains("A") && j.contains("A_over_T")) fail(w, "give either A or A_over_T");
  if (j.contains("A")) lp.A = number(j, "A", w);
  if (j.contains("A_over_T")) lp.A = number(j, "A_over_T", w) * static_cast<double>(lp.T);
  lp.validate();
  return lp;
}

bounds::ScheduleParams parse_schedule(const json& j) {
  const std::string w = "schedule";
  check_keys(j, w, {"alpha", "C", "epsilon"});
  bounds::ScheduleParams sp;
  if (j.contains("alpha")) sp.alpha = number(j, "alpha", w);
  if (j.contains("C")) sp.C = number(j, "C", w);
  if (j.contains("epsilon")) sp.epsilon = number(j, "epsilon", w);
  if (!(sp.alpha > 0.0 && sp.alpha < 1.0) || !(sp.C > 0.0) || !(sp.epsilon > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "schedule needs alpha in (0,1), C > 0 and epsilon > 0");
  }
  return sp;
}

OptimizerSpec parse_optimizer(const json& j) {
  const std::string w = "optimizer";
  check_keys(j, w,
             {"iterations", "step_size", "beta1", "beta2", "eps_hat", "restarts", "seed", "gradient_tolerance", "init"});
  OptimizerSpec o;
  auto& c = o.config;
  if (j.contains("iterations")) c.iterations = static_cast<int>(integer(j, "iterations", w));
  if (j.contains("step_size")) c.adam.step_size = number(j, "step_size", w);
  if (j.contains("beta1")) c.adam.beta1 = number(j, "beta1", w);
  if (j.contains("beta2")) c.adam.beta2 = number(j, "beta2", w);
  if (j.contains("eps_hat")) c.adam.eps_hat = number(j, "eps_hat", w);
  if (j.contains("restarts")) c.restarts = static_cast<int>(integer(j, "restarts", w));
  if (j.contains("seed")) c.seed = seed_value(j, "seed", w);
  if (j.contains("gradient_tolerance")) c.gradient_tolerance = number(j, "gradient_tolerance", w);
  if (j.contains("init")) {
    const json& init = j.at("init");
    if (init.is_array()) {
      o.init = OptimizerInit::Explicit;
      o.init_values = numbers(init, w + ".init");
    } else if (init == "uniform") {
      o.init = OptimizerInit::Uniform;
    } else if (init == "balanced") {
      o.init = OptimizerInit::Balanced;
    } else {
      fail(w + ".init", "expected \"uniform\", \"balanced\" or an array");
    }
  }
  if (c.iterations < 1 || c.restarts < 0 || !(c.adam.step_size > 0.0) || !(c.adam.beta1 >= 0.0 && c.adam.beta1 < 1.0) ||
      !(c.adam.beta2 >= 0.0 && c.adam.beta2 < 1.0) || !(c.adam.eps_hat > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "optimizer settings out of range");
  }
  return o;
}

SimulationSpec parse_simulation(const json& j) {
  const std::string w = "simulation";
  check_keys(j, w,
             {"horizon_rounds", "warmup_rounds", "init", "seed", "replications", "time_limit", "batches", "write_trace"});
  SimulationSpec s;
  if (j.contains("horizon_rounds")) s.horizon_rounds = integer(j, "horizon_rounds", w);
  if (j.contains("warmup_rounds")) s.warmup_rounds = integer(j, "warmup_rounds", w);
  if (j.contains("init")) s.init = init_policy(text(j, "init", w), w + ".init");
  if (j.contains("seed")) s.seed = seed_value(j, "seed", w);
  if (j.contains("replications")) s.replications = static_cast<int>(integer(j, "replications", w));
  if (j.contains("time_limit")) s.time_limit = number(j, "time_limit", w);
  if (j.contains("batches")) s.batches = static_cast<int>(integer(j, "batches", w));
  if (j.contains("write_trace")) s.write_trace = flag(j, "write_trace", w);
  if (s.replications < 1 || s.batches < 1) throw Error(ErrorCode::InvalidConfig, "replications and batches must be >= 1");
  return s;
}

TrainingSpec parse_training(const json& j) {
  const std::string w = "training";
  check_keys(j, w,
             {"dimension", "heterogeneity_radius", "sigma", "L", "rounds", "seeds", "seed", "problem_seed", "init",
              "time_limit", "wallclock_step"});
  TrainingSpec t;
  if (j.contains("dimension")) {
    const long d = integer(j, "dimension", w);
    if (d < 1) throw Error(ErrorCode::InvalidConfig, "training dimension must be positive");
    t.dimension = static_cast<std::size_t>(d);
  }
  if (j.contains("heterogeneity_radius")) t.heterogeneity_radius = number(j, "heterogeneity_radius", w);
  if (j.contains("sigma")) t.sigma = number(j, "sigma", w);
  if (j.contains("L")) t.L = number(j, "L", w);
  if (j.contains("rounds")) t.rounds = integer(j, "rounds", w);
  if (j.contains("seeds")) t.seeds = static_cast<int>(integer(j, "seeds", w));
  if (j.contains("seed")) t.seed = seed_value(j, "seed", w);
  if (j.contains("problem_seed")) t.problem_seed = seed_value(j, "problem_seed", w);
  if (j.contains("init")) t.init = init_policy(text(j, "init", w), w + ".init");
  if (j.contains("time_limit")) t.time_limit = number(j, "time_limit", w);
  if (j.contains("wallclock_step")) t.wallclock_step = number(j, "wallclock_step", w);
  if (t.seeds < 1 || (t.rounds && *t.rounds < 0) || !(t.wallclock_step > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "training settings out of range");
  }
  return t;
}

}  // namespace

std::vector<double> generate_rates(const std::string& generator, std::size_t n) {
  static const std::regex exp_form(R"(\s*exp\(\s*i\s*/\s*([0-9.eE+-]+)\s*\)\s*)");
  static const std::regex const_form(R"(\s*const\(\s*([0-9.eE+-]+)\s*\)\s*)");
  if (n < 1) fail("network.n", "must be positive");
  std::smatch match;
  std::vector<double> mu(n);
  try {
    if (std::regex_match(generator, match, exp_form)) {
      const double scale = std::stod(match[1].str());
      for (std::size_t i = 0; i < n; ++i) mu[i] = std::exp(static_cast<double>(i + 1) / scale);
      return mu;
    }
    if (std::regex_match(generator, match, const_form)) {
      mu.assign(n, std::stod(match[1].str()));
      return mu;
    }
  } catch (const std::logic_error&) {
    fail("network.mu", "bad number in generator \"" + generator + "\"");
  }
  fail("network.mu", "unknown rate generator \"" + generator + "\"");
}

ExperimentSpec parse_spec(const json& doc) {
  check_keys(doc, "spec",
             {"name", "network", "routing", "learning", "schedule", "optimizer", "simulation", "training", "sweep", "scan",
              "output"});
  ExperimentSpec spec;
  try {
    if (doc.contains("name")) spec.name = text(doc, "name", "spec");
    if (!doc.contains("network")) fail("spec", "missing \"network\"");
    spec.network = parse_network(doc.at("network"));
    if (doc.contains("routing")) spec.routing = parse_routing(doc.at("routing"));
    if (doc.contains("learning")) spec.learning = parse_learning(doc.at("learning"));
    if (doc.contains("schedule")) spec.schedule = parse_schedule(doc.at("schedule"));
    if (doc.contains("optimizer")) spec.optimizer = parse_optimizer(doc.at("optimizer"));
    if (doc.contains("simulation")) spec.simulation = parse_simulation(doc.at("simulation"));
    if (doc.contains("training")) spec.training = parse_training(doc.at("training"));
    if (doc.contains("sweep")) {
      const json& s = doc.at("sweep");
      check_keys(s, "sweep", {"m_min", "m_max"});
      if (s.contains("m_min")) spec.sweep.m_min = static_cast<int>(integer(s, "m_min", "sweep"));
      if (s.contains("m_max")) spec.sweep.m_max = static_cast<int>(integer(s, "m_max", "sweep"));
      if (spec.sweep.m_min < 1 || spec.sweep.m_max < spec.sweep.m_min) {
        throw Error(ErrorCode::InvalidConfig, "sweep needs 1 <= m_min <= m_max");
      }
    }
    if (doc.contains("scan")) {
      const json& s = doc.at("scan");
      check_keys(s, "scan", {"client", "points"});
      ScanSpec scan;
      if (s.contains("client")) scan.client = static_cast<std::size_t>(integer(s, "client", "scan"));
      if (s.contains("points")) scan.points = static_cast<int>(integer(s, "points", "scan"));
      if (scan.client >= spec.network.n() || scan.points < 2) {
        throw Error(ErrorCode::InvalidConfig, "scan needs a valid client index and at least 2 points");
      }
      spec.scan = scan;
    }
    if (doc.contains("output")) {
      check_keys(doc.at("output"), "output", {"dir"});
      if (doc.at("output").contains("dir")) spec.output_dir = text(doc.at("output"), "dir", "output");
    }
  } catch (const json::exception& e) {
    fail("spec", e.what());
  }
  if (spec.routing.kind == RoutingKind::Explicit) check_compatible(spec.network, RoutingVector(spec.routing.values));
  if (spec.optimizer.init == OptimizerInit::Explicit) {
    check_compatible(spec.network, RoutingVector(spec.optimizer.init_values));
  }
  return spec;
}

ExperimentSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::SpecParse, "cannot open spec file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::SpecParse, path.string() + ": " + e.what());
  }
  return parse_spec(doc);
}

RoutingVector optimizer_start(const ExperimentSpec& spec) {
  switch (spec.optimizer.init) {
    case OptimizerInit::Uniform: return RoutingVector::uniform(spec.network.n());
    case OptimizerInit::Balanced: return RoutingVector::balanced(spec.network.mu);
    case OptimizerInit::Explicit: return RoutingVector(spec.optimizer.init_values);
  }
  return RoutingVector::uniform(spec.network.n());
}

RoutingVector resolve_routing(const ExperimentSpec& spec, std::optional<routing::OptResult>* opt) {
  switch (spec.routing.kind) {
    case RoutingKind::Uniform: return routing::baseline_routing(routing::Baseline::Uniform, spec.network);
    case RoutingKind::Balanced: return routing::baseline_routing(routing::Baseline::Balanced, spec.network);
    case RoutingKind::Explicit: return RoutingVector(spec.routing.values);
    case RoutingKind::Optimize: {
      routing::OptimizerConfig oc = spec.optimizer.config;
      oc.objective = spec.routing.objective;
      oc.init = optimizer_start(spec);
      routing::OptResult result = routing::optimize_routing(spec.network, spec.learning, oc);
      RoutingVector p = result.p_star;
      if (opt) *opt = std::move(result);
      return p;
    }
  }
  return RoutingVector::uniform(spec.network.n());
}

}  // namespace asyncfl::cli
