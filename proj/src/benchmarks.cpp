#include "bistro/benchmarks.hpp"

#include "bistro/trajectory.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

namespace bistro {

using nlohmann::json;

namespace {

const std::vector<std::pair<OptimizerKind, std::string_view>> kKindNames = {
    {OptimizerKind::sgd, "sgd"},
    {OptimizerKind::sgd_switch, "sgd_switch"},
    {OptimizerKind::mlmc_sgd, "mlmc_sgd"},
    {OptimizerKind::mlmc_switch, "mlmc_switch"},
    {OptimizerKind::mlmc_switch_wslf, "mlmc_switch_wslf"},
    {OptimizerKind::mlmc_switch_wshf, "mlmc_switch_wshf"},
    {OptimizerKind::bistro, "bistro"},
};

bool uses_mlmc(OptimizerKind k) {
  return k != OptimizerKind::sgd && k != OptimizerKind::sgd_switch;
}

bool holds_rate(OptimizerKind k) {
  return k == OptimizerKind::sgd_switch || k == OptimizerKind::mlmc_switch ||
         k == OptimizerKind::mlmc_switch_wslf || k == OptimizerKind::mlmc_switch_wshf;
}

std::vector<std::uint64_t> seed_range(std::uint64_t first, std::uint64_t count) {
  std::vector<std::uint64_t> s(count);
  std::iota(s.begin(), s.end(), first);
  return s;
}

OptimizerConfig make_optimizer(std::string name, OptimizerKind kind, ScheduleConfig schedule,
                               SampleSizes sizes) {
  OptimizerConfig c;
  c.name = std::move(name);
  c.kind = kind;
  c.schedule = schedule;
  c.sizes = sizes;
  return c;
}

ExperimentSpec quadratic20() {
  ExperimentSpec s;
  s.name = "quadratic20";
  s.problem = {"quadratic", {{"dim", 20.0}, {"sigma2", 0.01}}, ""};
  const ScheduleConfig opt{true, 0.0, 0.0};
  const SampleSizes sizes{1, 10, 10};
  s.optimizers = {
      make_optimizer("SGD", OptimizerKind::sgd, opt, sizes),
      make_optimizer("SGD-Switch", OptimizerKind::sgd_switch, opt, sizes),
      make_optimizer("MLMC-SGD", OptimizerKind::mlmc_sgd, opt, sizes),
      make_optimizer("MLMC-Switch-WSLF", OptimizerKind::mlmc_switch_wslf, opt, sizes),
      make_optimizer("MLMC-Switch-WSHF", OptimizerKind::mlmc_switch_wshf, opt, sizes),
      make_optimizer("BISTRO", OptimizerKind::bistro, opt, sizes),
  };
  s.optimizers.back().delta = 100.0;
  s.seeds = seed_range(1, 100);
  s.budget = 1000.0;
  s.trace_stride = 10;
  s.x0 = {3.0};
  return s;
}

ExperimentSpec forretal() {
  ExperimentSpec s;
  s.name = "forretal";
  s.problem = {"forretal", {{"kappa", 0.1}}, ""};
  s.sweep = Sweep{"kappa", {0.1, 0.9}};
  const ScheduleConfig sched{false, 0.001, 2000.0};
  const SampleSizes sizes{1, 2, 1};
  s.optimizers = {
      make_optimizer("BISTRO", OptimizerKind::bistro, sched, sizes),
      make_optimizer("SGD", OptimizerKind::sgd, sched, sizes),
      make_optimizer("MLMC-SGD", OptimizerKind::mlmc_sgd, sched, sizes),
  };
  s.optimizers[0].delta = 0.5;
  s.optimizers[0].lambda = 1.0;
  s.seeds = seed_range(1, 20);
  s.budget = 300.0;
  s.trace_stride = 1;
  s.x0 = {0.6};
  s.threshold = 0.5;
  s.golden = "forretal";
  return s;
}

ExperimentSpec trajectory_spec() {
  ExperimentSpec s;
  s.name = "trajectory";
  s.problem = {"trajectory", {{"relative_stddev", 0.1}}, "glider"};
  const ScheduleConfig sched{false, 0.01, 100.0};
  const SampleSizes sizes{1, 10, 10};
  s.optimizers = {
      make_optimizer("BISTRO", OptimizerKind::bistro, sched, sizes),
      make_optimizer("SGD", OptimizerKind::sgd, sched, sizes),
      make_optimizer("MLMC-SGD", OptimizerKind::mlmc_sgd, sched, sizes),
  };
  s.optimizers[0].delta = 100.0;
  s.optimizers[0].lambda = 1.0;
  s.seeds = seed_range(1, 10);
  s.budget = 40.0;
  s.trace_stride = 1;
  return s;
}

// ---- JSON helpers ---------------------------------------------------------

std::string child(const std::string& ptr, const std::string& key) {
  return ptr + "/" + key;
}

void check_keys(const json& obj, const std::string& ptr, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(ptr, "expected an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(child(ptr, key), "unknown key '" + key + "'");
  }
}

template <typename T>
T read(const json& obj, const std::string& key, const std::string& ptr) {
  const json& v = obj.at(key);
  try {
    if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ConfigError(child(ptr, key), "'" + key + "' must be a number");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(child(ptr, key), "'" + key + "' must be true or false");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(child(ptr, key), "'" + key + "' must be a string");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer())
        throw ConfigError(child(ptr, key), "'" + key + "' must be an integer");
    }
    return v.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(child(ptr, key), e.what());
  }
}

std::vector<double> read_numbers(const json& v, const std::string& ptr, bool allow_scalar) {
  if (allow_scalar && v.is_number()) return {v.get<double>()};
  if (!v.is_array()) throw ConfigError(ptr, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number())
      throw ConfigError(ptr + "/" + std::to_string(i), "expected a number");
    out.push_back(v[i].get<double>());
  }
  return out;
}

OptimizerConfig optimizer_at(const json& doc, const std::string& ptr) {
  check_keys(doc, ptr,
             {"name", "kind", "schedule", "sizes", "delta", "lambda", "warm_start_fraction",
              "strict_switch"});
  OptimizerConfig c;
  if (!doc.contains("kind")) throw ConfigError(ptr, "optimizer needs a 'kind'");
  try {
    c.kind = optimizer_kind_from_string(read<std::string>(doc, "kind", ptr));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(child(ptr, "kind"), e.what());
  }
  c.name = doc.contains("name") ? read<std::string>(doc, "name", ptr)
                                : std::string(to_string(c.kind));
  if (doc.contains("schedule")) {
    const std::string sp = child(ptr, "schedule");
    const json& s = doc.at("schedule");
    if (s.is_string()) {
      if (s.get<std::string>() != "optimal")
        throw ConfigError(sp, "schedule must be \"optimal\" or {alpha0, gamma}");
      c.schedule.optimal = true;
    } else {
      check_keys(s, sp, {"optimal", "alpha0", "gamma"});
      if (s.contains("optimal")) c.schedule.optimal = read<bool>(s, "optimal", sp);
      if (s.contains("alpha0")) c.schedule.alpha0 = read<double>(s, "alpha0", sp);
      if (s.contains("gamma")) c.schedule.gamma = read<double>(s, "gamma", sp);
    }
  }
  if (doc.contains("sizes")) {
    const std::string sp = child(ptr, "sizes");
    const json& s = doc.at("sizes");
    check_keys(s, sp, {"N", "M", "K"});
    if (s.contains("N")) c.sizes.n = read<long>(s, "N", sp);
    if (s.contains("M")) c.sizes.m = read<long>(s, "M", sp);
    if (s.contains("K")) c.sizes.k = read<long>(s, "K", sp);
  }
  if (doc.contains("delta")) c.delta = read<double>(doc, "delta", ptr);
  if (doc.contains("lambda")) {
    if (doc.at("lambda").is_string() && doc.at("lambda").get<std::string>() == "optimal")
      c.lambda.reset();
    else
      c.lambda = read<double>(doc, "lambda", ptr);
  }
  if (doc.contains("warm_start_fraction"))
    c.warm_start_fraction = read<double>(doc, "warm_start_fraction", ptr);
  if (doc.contains("strict_switch")) c.strict_switch = read<bool>(doc, "strict_switch", ptr);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(ptr, e.what());
  }
  return c;
}

ProblemConfig problem_at(const json& doc, const std::string& ptr) {
  if (!doc.is_object()) throw ConfigError(ptr, "expected an object");
  if (!doc.contains("name")) throw ConfigError(ptr, "problem needs a 'name'");
  ProblemConfig c;
  c.name = read<std::string>(doc, "name", ptr);
  for (const auto& [key, v] : doc.items()) {
    if (key == "name") continue;
    if (key == "dynamics") {
      c.dynamics = read<std::string>(doc, "dynamics", ptr);
      continue;
    }
    if (!v.is_number()) throw ConfigError(child(ptr, key), "problem parameters must be numbers");
    c.params[key] = v.get<double>();
  }
  try {
    (void)make_problem(c);  // rejects unknown names and parameters early
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(ptr, e.what());
  }
  return c;
}

// Parameters a problem accepts, with the value used when the config omits it.
using ParamTable = std::vector<std::pair<const char*, double>>;

std::map<std::string, double> resolve_params(const ProblemConfig& c, const ParamTable& table) {
  std::map<std::string, double> out;
  for (const auto& [k, v] : table) out[k] = v;
  for (const auto& [k, v] : c.params) {
    if (!out.count(k))
      throw ConfigError("/problem/" + k, "unknown parameter '" + k + "' for problem " + c.name);
    out[k] = v;
  }
  return out;
}

std::string format_value_label(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

std::string_view to_string(OptimizerKind kind) {
  for (const auto& [k, n] : kKindNames)
    if (k == kind) return n;
  return "unknown";
}

OptimizerKind optimizer_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  std::string known;
  for (const auto& [k, n] : kKindNames) known += (known.empty() ? "" : ", ") + std::string(n);
  throw std::invalid_argument("unknown optimizer kind '" + std::string(name) +
                              "' (known: " + known + ")");
}

void OptimizerConfig::validate() const {
  if (name.empty()) throw std::invalid_argument("optimizer: empty name");
  if (uses_mlmc(kind)) {
    sizes.validate();
  } else if (sizes.n < 1) {
    throw std::invalid_argument("optimizer " + name + ": N must be >= 1");
  }
  if (!schedule.optimal && !(schedule.alpha0 > 0.0 && schedule.gamma > 0.0))
    throw std::invalid_argument("optimizer " + name + ": alpha0 and gamma must be > 0");
  if (kind == OptimizerKind::bistro) {
    if (!(delta > 0.0)) throw std::invalid_argument("optimizer " + name + ": delta must be > 0");
    if (lambda && !(*lambda >= 0.0 && *lambda <= 1.0))
      throw std::invalid_argument("optimizer " + name + ": lambda must lie in [0, 1]");
  }
  if (!(warm_start_fraction > 0.0 && warm_start_fraction <= 1.0))
    throw std::invalid_argument("optimizer " + name + ": warm_start_fraction must lie in (0, 1]");
}

void ExperimentSpec::validate() const {
  if (name.empty()) throw ConfigError("/name", "experiment needs a name");
  if (seeds.empty()) throw ConfigError("/seeds", "seed list is empty");
  if (!(budget > 0.0)) throw ConfigError("/budget", "budget must be > 0");
  if (trace_stride < 1) throw ConfigError("/trace_stride", "trace_stride must be >= 1");
  if (optimizers.empty()) throw ConfigError("/optimizers", "no optimizers configured");
  std::set<std::string> names;
  for (std::size_t i = 0; i < optimizers.size(); ++i) {
    const std::string ptr = "/optimizers/" + std::to_string(i);
    try {
      optimizers[i].validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(ptr, e.what());
    }
    if (!names.insert(optimizers[i].name).second)
      throw ConfigError(ptr + "/name", "duplicate optimizer name '" + optimizers[i].name + "'");
  }
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("/seeds", "duplicate seeds");
  for (double q : quantiles)
    if (!(q > 0.0 && q < 1.0)) throw ConfigError("/quantiles", "quantiles must lie in (0, 1)");
  if (cost_grid_points < 2) throw ConfigError("/cost_grid_points", "need at least 2 grid points");
  if (sweep && sweep->values.empty()) throw ConfigError("/sweep", "sweep has no values");
}

std::vector<std::string> builtin_names() { return {"quadratic20", "forretal", "trajectory"}; }

ExperimentSpec builtin(const std::string& name) {
  if (name == "quadratic20") return quadratic20();
  if (name == "forretal") return forretal();
  if (name == "trajectory") return trajectory_spec();
  std::string known;
  for (const auto& n : builtin_names()) known += (known.empty() ? "" : ", ") + n;
  throw std::invalid_argument("unknown experiment '" + name + "' (available: " + known + ")");
}

std::vector<ExperimentSpec> expand(const ExperimentSpec& spec) {
  if (!spec.sweep) return {spec};
  std::vector<ExperimentSpec> out;
  for (double v : spec.sweep->values) {
    ExperimentSpec s = spec;
    s.sweep.reset();
    s.problem.params[spec.sweep->param] = v;
    s.name = spec.name + "-" + spec.sweep->param + format_value_label(v);
    out.push_back(std::move(s));
  }
  return out;
}

json to_json(const OptimizerConfig& c) {
  json j;
  j["name"] = c.name;
  j["kind"] = std::string(to_string(c.kind));
  if (c.schedule.optimal)
    j["schedule"] = "optimal";
  else
    j["schedule"] = {{"alpha0", c.schedule.alpha0}, {"gamma", c.schedule.gamma}};
  j["sizes"] = {{"N", c.sizes.n}, {"M", c.sizes.m}, {"K", c.sizes.k}};
  j["delta"] = c.delta;
  if (c.lambda)
    j["lambda"] = *c.lambda;
  else
    j["lambda"] = "optimal";
  j["warm_start_fraction"] = c.warm_start_fraction;
  j["strict_switch"] = c.strict_switch;
  return j;
}

json to_json(const ProblemConfig& c) {
  json j;
  j["name"] = c.name;
  if (!c.dynamics.empty()) j["dynamics"] = c.dynamics;
  for (const auto& [k, v] : c.params) j[k] = v;
  return j;
}

json to_json(const ExperimentSpec& s) {
  json j;
  j["name"] = s.name;
  j["problem"] = to_json(s.problem);
  j["optimizers"] = json::array();
  for (const auto& o : s.optimizers) j["optimizers"].push_back(to_json(o));
  j["seeds"] = s.seeds;
  j["budget"] = s.budget;
  j["trace_stride"] = s.trace_stride;
  j["x0"] = s.x0;
  j["quantiles"] = s.quantiles;
  j["cost_grid_points"] = s.cost_grid_points;
  if (s.threshold) j["threshold"] = *s.threshold;
  if (s.sweep) j["sweep"] = {{"param", s.sweep->param}, {"values", s.sweep->values}};
  if (!s.golden.empty()) j["golden"] = s.golden;
  return j;
}

ExperimentSpec spec_from_json(const json& doc, const ExperimentSpec& base) {
  check_keys(doc, "",
             {"name", "problem", "optimizers", "seeds", "budget", "trace_stride", "x0",
              "quantiles", "cost_grid_points", "threshold", "sweep", "golden"});
  ExperimentSpec s = base;
  if (doc.contains("name")) s.name = read<std::string>(doc, "name", "");
  if (doc.contains("problem")) s.problem = problem_at(doc.at("problem"), "/problem");
  if (doc.contains("optimizers")) {
    const json& arr = doc.at("optimizers");
    if (!arr.is_array()) throw ConfigError("/optimizers", "expected an array");
    s.optimizers.clear();
    for (std::size_t i = 0; i < arr.size(); ++i)
      s.optimizers.push_back(optimizer_at(arr[i], "/optimizers/" + std::to_string(i)));
  }
  if (doc.contains("seeds")) {
    const json& arr = doc.at("seeds");
    if (!arr.is_array()) throw ConfigError("/seeds", "expected an array of seeds");
    s.seeds.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      if (!arr[i].is_number_unsigned() && !(arr[i].is_number_integer() && arr[i].get<long long>() >= 0))
        throw ConfigError("/seeds/" + std::to_string(i), "seeds must be non-negative integers");
      s.seeds.push_back(arr[i].get<std::uint64_t>());
    }
  }
  if (doc.contains("budget")) s.budget = read<double>(doc, "budget", "");
  if (doc.contains("trace_stride")) s.trace_stride = read<long>(doc, "trace_stride", "");
  if (doc.contains("x0")) s.x0 = read_numbers(doc.at("x0"), "/x0", true);
  if (doc.contains("quantiles")) s.quantiles = read_numbers(doc.at("quantiles"), "/quantiles", false);
  if (doc.contains("cost_grid_points"))
    s.cost_grid_points = read<long>(doc, "cost_grid_points", "");
  if (doc.contains("threshold")) s.threshold = read<double>(doc, "threshold", "");
  if (doc.contains("sweep")) {
    const json& sw = doc.at("sweep");
    if (sw.is_null()) {
      s.sweep.reset();
    } else {
      check_keys(sw, "/sweep", {"param", "values"});
      if (!sw.contains("param") || !sw.contains("values"))
        throw ConfigError("/sweep", "sweep needs 'param' and 'values'");
      s.sweep = Sweep{read<std::string>(sw, "param", "/sweep"),
                      read_numbers(sw.at("values"), "/sweep/values", false)};
    }
  }
  if (doc.contains("golden")) s.golden = read<std::string>(doc, "golden", "");
  s.validate();
  return s;
}

OptimizerConfig optimizer_from_json(const json& doc) { return optimizer_at(doc, ""); }
ProblemConfig problem_from_json(const json& doc) { return problem_at(doc, ""); }

BiFidelityProblem make_problem(const ProblemConfig& c) {
  if (c.name == "quadratic") {
    const auto p = resolve_params(c, {{"dim", 20.0}, {"sigma2", 0.01}});
    if (p.at("dim") < 1 || p.at("dim") != std::floor(p.at("dim")))
      throw ConfigError("/problem/dim", "dim must be a positive integer");
    BiFidelityProblem prob = make_quadratic(static_cast<Eigen::Index>(p.at("dim")), p.at("sigma2"));
    return prob;
  }
  if (c.name == "forretal") {
    ForretalOptions defaults;
    const auto p = resolve_params(
        c, {{"kappa", 0.1},
            {"finite_difference", defaults.finite_difference_gradients ? 1.0 : 0.0},
            {"fd_step", defaults.fd_step},
            {"cost_high", defaults.cost_high},
            {"cost_low", defaults.cost_low},
            {"oracle_grid_points", static_cast<double>(defaults.oracle_grid_points)}});
    ForretalOptions o;
    o.finite_difference_gradients = p.at("finite_difference") != 0.0;
    o.fd_step = p.at("fd_step");
    o.cost_high = p.at("cost_high");
    o.cost_low = p.at("cost_low");
    o.oracle_grid_points = static_cast<Eigen::Index>(p.at("oracle_grid_points"));
    return make_forretal(p.at("kappa"), o);
  }
  if (c.name == "trajectory") {
    trajectory::TrajectoryOptions d;
    ParamTable table = {{"nodes_per_signal", static_cast<double>(d.nodes_per_signal)},
                        {"horizon", d.horizon},
                        {"dt_high", d.dt_high},
                        {"dt_low", d.dt_low},
                        {"penalty_weight", d.penalty_weight},
                        {"reference_samples", static_cast<double>(d.reference_samples)},
                        {"reference_seed", static_cast<double>(d.reference_seed)},
                        {"relative_stddev", 0.1}};
    const std::string dyn = c.dynamics.empty() ? "glider" : c.dynamics;
    if (dyn == "linear_decay") {
      table.push_back({"initial_state", 1.0});
      table.push_back({"decay_rate", 0.01});
      table.push_back({"control_gain", 0.0});
    } else if (dyn != "glider") {
      throw ConfigError("/problem/dynamics",
                        "unknown dynamics '" + dyn + "' (available: glider, linear_decay)");
    }
    const auto p = resolve_params(c, table);
    trajectory::TrajectoryOptions o = d;
    o.nodes_per_signal = static_cast<Eigen::Index>(p.at("nodes_per_signal"));
    o.horizon = p.at("horizon");
    o.dt_high = p.at("dt_high");
    o.dt_low = p.at("dt_low");
    o.penalty_weight = p.at("penalty_weight");
    o.reference_samples = static_cast<Eigen::Index>(p.at("reference_samples"));
    o.reference_seed = static_cast<std::uint64_t>(p.at("reference_seed"));
    trajectory::DynamicsSpec spec =
        dyn == "glider" ? trajectory::glider_dynamics(p.at("relative_stddev"))
                        : trajectory::linear_decay_dynamics(p.at("initial_state"),
                                                            p.at("decay_rate"),
                                                            p.at("relative_stddev"),
                                                            p.at("control_gain"));
    BiFidelityProblem prob = trajectory::make_trajectory(std::move(spec), o);
    prob.parameters["relative_stddev"] = p.at("relative_stddev");
    return prob;
  }
  throw ConfigError("/problem/name",
                    "unknown problem '" + c.name + "' (available: quadratic, forretal, trajectory)");
}

DesignPoint resolve_start(const ExperimentSpec& spec, const BiFidelityProblem& problem) {
  if (spec.x0.empty()) {
    if (problem.default_start) return *problem.default_start;
    return Vector::Zero(problem.dim_x);
  }
  if (spec.x0.size() == 1) return Vector::Constant(problem.dim_x, spec.x0[0]);
  if (static_cast<Eigen::Index>(spec.x0.size()) != problem.dim_x)
    throw ConfigError("/x0", "x0 has " + std::to_string(spec.x0.size()) +
                                 " entries, problem dimension is " +
                                 std::to_string(problem.dim_x));
  return Eigen::Map<const Vector>(spec.x0.data(), problem.dim_x);
}

RunResult run_cell(const ExperimentSpec& spec, const BiFidelityProblem& problem,
                   const OptimizerConfig& config, std::uint64_t seed,
                   const RunControl& control_in) {
  const DesignPoint x0 = resolve_start(spec, problem);
  const auto [main_stream, aux_stream] = split(RngStream(seed, 0));
  RunControl control = control_in;
  control.trace_stride = spec.trace_stride;
  control.strict_switch = config.strict_switch;

  const ScheduleMode mode =
      holds_rate(config.kind) ? ScheduleMode::constant_then_decay : ScheduleMode::decay_from_start;
  std::optional<LearningRateSchedule> schedule;
  if (config.schedule.optimal) {
    if (!problem.declared_constants)
      throw std::invalid_argument("optimizer " + config.name +
                                  ": optimal schedule needs declared problem constants");
    const RegularityConstants& k = *problem.declared_constants;
    schedule = optimal_schedule(k.c_H, k.L_H, uses_mlmc(config.kind) ? k.W_V_ml : k.W_V, mode);
  } else {
    schedule = LearningRateSchedule::from_initial_rate(config.schedule.alpha0,
                                                       config.schedule.gamma, mode);
  }

  CostLedger ledger(spec.budget, problem.costs);
  SgdOptions sgd;
  sgd.sizes = config.sizes;
  sgd.estimator = uses_mlmc(config.kind) ? GradientSource::mlmc : GradientSource::high;
  sgd.switch_mode = holds_rate(config.kind);

  switch (config.kind) {
    case OptimizerKind::sgd:
    case OptimizerKind::sgd_switch:
    case OptimizerKind::mlmc_sgd:
    case OptimizerKind::mlmc_switch:
      return sgd_run(problem, x0, *schedule, sgd, std::move(ledger), main_stream, control);
    case OptimizerKind::mlmc_switch_wslf:
    case OptimizerKind::mlmc_switch_wshf: {
      const Fidelity f = config.kind == OptimizerKind::mlmc_switch_wslf ? Fidelity::low
                                                                        : Fidelity::high;
      const WarmStartResult ws =
          warm_start(problem, f, x0, config.warm_start_fraction, aux_stream, ledger);
      RunResult r = sgd_run(problem, ws.x, *schedule, sgd, std::move(ledger), main_stream, control);
      r.log.insert(r.log.begin(), "warm start: " + std::to_string(ws.iterations) +
                                      " iterations, converged=" + (ws.converged ? "yes" : "no"));
      return r;
    }
    case OptimizerKind::bistro: {
      TrustRegionConfig cfg;
      cfg.delta = config.delta;
      if (config.lambda)
        cfg.lambda = *config.lambda;
      else if (problem.declared_constants)
        cfg.lambda = trust_lambda(*problem.declared_constants);
      else
        cfg.lambda = 1.0;
      return bistro_run(problem, x0, cfg, *schedule, config.sizes, std::move(ledger),
                        main_stream, control);
    }
  }
  throw std::logic_error("unhandled optimizer kind");
}

ExperimentResult run_experiment(const ExperimentSpec& spec, const RunOptions& options) {
  if (spec.sweep) throw std::invalid_argument("run_experiment: expand the sweep first");
  spec.validate();
  const BiFidelityProblem problem = make_problem(spec.problem);
  (void)resolve_start(spec, problem);

  ExperimentResult result;
  result.name = spec.name;
  struct Cell {
    const OptimizerConfig* config;
    std::size_t seed_index;
  };
  std::vector<Cell> cells;
  for (const auto& o : spec.optimizers) {
    result.cells[o.name].resize(spec.seeds.size());
    for (std::size_t i = 0; i < spec.seeds.size(); ++i) cells.push_back({&o, i});
  }
  if (options.output_dir)
    for (const auto& o : spec.optimizers)
      std::filesystem::create_directories(*options.output_dir / spec.name / o.name);

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const Cell& cell = cells[i];
      const std::uint64_t seed = spec.seeds[cell.seed_index];
      try {
        RunControl control;
        std::optional<TraceCsvWriter> writer;
        if (options.output_dir) {
          writer.emplace(*options.output_dir / spec.name / cell.config->name /
                         ("seed-" + std::to_string(seed) + ".csv"));
          control.sink = [&writer](const TraceRow& row) { writer->write(row); };
        }
        CellResult& out = result.cells[cell.config->name][cell.seed_index];
        out.seed = seed;
        out.run = run_cell(spec, problem, *cell.config, seed, control);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  unsigned threads = options.threads ? options.threads : std::thread::hardware_concurrency();
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(cells.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return result;
}

double plotted_objective(const TraceRow& row) {
  return row.true_objective ? *row.true_objective : row.objective_estimate;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

QuantileTable aggregate(const std::map<std::string, std::vector<std::vector<TraceRow>>>& traces,
                        const std::vector<double>& quantiles, long grid_points) {
  if (traces.empty()) throw std::invalid_argument("aggregate: no traces");
  if (grid_points < 2) throw std::invalid_argument("aggregate: need at least 2 grid points");
  for (double q : quantiles)
    if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("aggregate: quantiles must lie in (0, 1)");
  double max_cost = 0.0;
  for (const auto& [name, list] : traces) {
    if (list.empty()) throw std::invalid_argument("aggregate: optimizer " + name + " has no traces");
    for (const auto& t : list)
      if (!t.empty()) max_cost = std::max(max_cost, t.back().cumulative_cost);
  }
  QuantileTable table;
  table.quantiles = quantiles;
  table.cost_grid.resize(static_cast<std::size_t>(grid_points));
  for (long g = 0; g < grid_points; ++g)
    table.cost_grid[g] = max_cost * static_cast<double>(g) / static_cast<double>(grid_points - 1);

  for (const auto& [name, list] : traces) {
    // Step interpolation: value of the last finite row at or before each grid cost.
    std::vector<std::vector<double>> sampled(list.size());
    for (std::size_t t = 0; t < list.size(); ++t) {
      const auto& rows = list[t];
      double first = std::numeric_limits<double>::quiet_NaN();
      for (const auto& r : rows)
        if (std::isfinite(plotted_objective(r))) {
          first = plotted_objective(r);
          break;
        }
      double current = first;
      std::size_t r = 0;
      for (double c : table.cost_grid) {
        while (r < rows.size() && rows[r].cumulative_cost <= c) {
          if (std::isfinite(plotted_objective(rows[r]))) current = plotted_objective(rows[r]);
          ++r;
        }
        sampled[t].push_back(current);
      }
    }
    auto& out = table.values[name];
    out.assign(quantiles.size(), std::vector<double>(table.cost_grid.size()));
    for (std::size_t g = 0; g < table.cost_grid.size(); ++g) {
      std::vector<double> column;
      for (const auto& s : sampled)
        if (std::isfinite(s[g])) column.push_back(s[g]);
      for (std::size_t q = 0; q < quantiles.size(); ++q)
        out[q][g] = column.empty() ? std::numeric_limits<double>::quiet_NaN()
                                   : quantile(column, quantiles[q]);
    }
  }
  return table;
}

QuantileTable aggregate(const ExperimentResult& result, const std::vector<double>& quantiles,
                        long grid_points) {
  std::map<std::string, std::vector<std::vector<TraceRow>>> traces;
  for (const auto& [name, cells] : result.cells)
    for (const auto& c : cells) traces[name].push_back(c.run.trace);
  return aggregate(traces, quantiles, grid_points);
}

std::optional<double> budget_to_threshold(const std::vector<TraceRow>& trace,
                                          double optimum_value, double threshold) {
  for (const auto& r : trace)
    if (r.true_objective && *r.true_objective - optimum_value <= threshold)
      return r.cumulative_cost;
  return std::nullopt;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_row(const TraceRow& row) {
  std::string s = std::to_string(row.iteration);
  s += ',';
  s += format_number(row.cumulative_cost);
  s += ',';
  s += to_string(row.phase);
  s += ',';
  s += format_number(row.objective_estimate);
  s += ',';
  if (row.true_objective) s += format_number(*row.true_objective);
  s += ',';
  s += format_number(row.grad_norm_estimate);
  s += ',';
  s += format_number(row.learning_rate);
  return s;
}

TraceCsvWriter::TraceCsvWriter(const std::filesystem::path& path) : out_(path) {
  if (!out_) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out_ << kTraceHeader << '\n';
}

void TraceCsvWriter::write(const TraceRow& row) { out_ << format_row(row) << '\n'; }

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& trace) {
  TraceCsvWriter w(path);
  for (const auto& r : trace) w.write(r);
}

void write_quantiles_csv(const std::filesystem::path& path, const QuantileTable& table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "optimizer,cumulative_cost";
  for (double q : table.quantiles) {
    char label[32];
    std::snprintf(label, sizeof label, "q%g", q);
    out << ',' << label;
  }
  out << '\n';
  for (const auto& [name, values] : table.values)
    for (std::size_t g = 0; g < table.cost_grid.size(); ++g) {
      out << name << ',' << format_number(table.cost_grid[g]);
      for (const auto& qv : values) out << ',' << format_number(qv[g]);
      out << '\n';
    }
}

std::vector<BoundRow> bound_overlay(const ExperimentSpec& spec, const BiFidelityProblem& problem,
                                    const ExperimentResult& result) {
  if (!problem.declared_constants || !problem.reference || !problem.reference->true_risk ||
      !problem.reference->optimum_value)
    return {};
  const OptimizerConfig* target = nullptr;
  for (const auto& o : spec.optimizers)
    if (o.kind == OptimizerKind::mlmc_sgd) {
      target = &o;
      break;
    }
  if (!target) return {};
  const auto it = result.cells.find(target->name);
  if (it == result.cells.end() || it->second.empty()) return {};

  const double gap0 =
      problem.reference->true_risk(resolve_start(spec, problem)) - *problem.reference->optimum_value;
  const BoundCurve curve = convergence_bound(*problem.declared_constants, std::max(0.0, gap0));
  std::vector<BoundRow> rows;
  for (const auto& r : it->second.front().run.trace)
    rows.push_back({r.iteration, r.cumulative_cost, curve.value(static_cast<double>(r.iteration + 1))});
  return rows;
}

void write_bounds_csv(const std::filesystem::path& path, const std::vector<BoundRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "iteration,cumulative_cost,bound_value\n";
  for (const auto& r : rows)
    out << r.iteration << ',' << format_number(r.cumulative_cost) << ','
        << format_number(r.bound) << '\n';
}

}  // namespace bistro
