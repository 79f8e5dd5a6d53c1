#include "bistro/benchmarks.hpp"
#include "bistro/diagnostics.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#ifndef BISTRO_VERSION
#define BISTRO_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bistro;

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kConfigError = 2;

// Byte offsets of every value in a JSON text, keyed by JSON pointer, so
// semantic errors can be reported at a line and column.
class PositionIndex {
 public:
  explicit PositionIndex(const std::string& text) : text_(text) {
    skip_ws();
    if (pos_ < text_.size()) value("");
  }

  std::size_t offset_of(std::string pointer) const {
    while (true) {
      auto it = offsets_.find(pointer);
      if (it != offsets_.end()) return it->second;
      if (pointer.empty()) return 0;
      pointer.erase(pointer.rfind('/'));
    }
  }

 private:
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  std::string string_token() {
    std::string out;
    ++pos_;
    while (pos_ < text_.size() && text_[pos_] != '"') {
      if (text_[pos_] == '\\') {
        out += text_[pos_++];
      }
      out += text_[pos_++];
    }
    ++pos_;
    return out;
  }

  static std::string escape(const std::string& key) {
    std::string out;
    for (char c : key) {
      if (c == '~')
        out += "~0";
      else if (c == '/')
        out += "~1";
      else
        out += c;
    }
    return out;
  }

  void value(const std::string& pointer) {
    offsets_[pointer] = pos_;
    const char c = text_[pos_];
    if (c == '{') {
      ++pos_;
      skip_ws();
      while (pos_ < text_.size() && text_[pos_] != '}') {
        const std::string key = string_token();
        skip_ws();
        ++pos_;  // ':'
        skip_ws();
        value(pointer + "/" + escape(key));
        skip_ws();
        if (text_[pos_] == ',') ++pos_;
        skip_ws();
      }
      ++pos_;
    } else if (c == '[') {
      ++pos_;
      skip_ws();
      std::size_t i = 0;
      while (pos_ < text_.size() && text_[pos_] != ']') {
        value(pointer + "/" + std::to_string(i++));
        skip_ws();
        if (text_[pos_] == ',') ++pos_;
        skip_ws();
      }
      ++pos_;
    } else if (c == '"') {
      string_token();
    } else {
      while (pos_ < text_.size() && !std::strchr(",]} \t\r\n", text_[pos_])) ++pos_;
    }
  }

  const std::string& text_;
  std::size_t pos_ = 0;
  std::map<std::string, std::size_t> offsets_;
};

std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t offset) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

struct ConfigFailure {
  std::string message;
};

struct EmitFlags {
  bool traces = true;
  bool quantiles = true;
  bool bounds = true;
  bool diagnostics = false;
};

struct RunConfig {
  ExperimentSpec spec;
  fs::path output_dir = "results";
  EmitFlags emit;
  unsigned threads = 0;
  DiagnosticOptions diagnostics;
  bool has_problem = false;
};

DiagnosticOptions diagnostic_options(const json& d, const std::string& ptr,
                                     DiagnosticOptions opt) {
  if (!d.is_object()) throw ConfigError(ptr, "expected an object");
  for (const auto& [key, v] : d.items()) {
    const std::string p = ptr + "/" + key;
    auto number = [&] {
      if (!v.is_number()) throw ConfigError(p, "'" + key + "' must be a number");
      return v.get<double>();
    };
    auto vector = [&](const json& arr, const std::string& vp) {
      if (!arr.is_array()) throw ConfigError(vp, "expected an array of numbers");
      Vector out(static_cast<Eigen::Index>(arr.size()));
      for (std::size_t i = 0; i < arr.size(); ++i) {
        if (!arr[i].is_number()) throw ConfigError(vp + "/" + std::to_string(i), "expected a number");
        out(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
      }
      return out;
    };
    if (key == "replicates") {
      opt.replicates = static_cast<long>(number());
    } else if (key == "radius") {
      opt.radius = number();
    } else if (key == "hessian_samples") {
      opt.hessian_samples = static_cast<long>(number());
    } else if (key == "risk_gradient_samples") {
      opt.risk_gradient_samples = static_cast<long>(number());
    } else if (key == "N") {
      opt.sizes.n = static_cast<Eigen::Index>(number());
    } else if (key == "M") {
      opt.sizes.m = static_cast<Eigen::Index>(number());
    } else if (key == "K") {
      opt.sizes.k = static_cast<Eigen::Index>(number());
    } else if (key == "center") {
      opt.center = vector(v, p);
    } else if (key == "probe_points") {
      if (!v.is_array()) throw ConfigError(p, "expected an array of points");
      opt.probe_points.clear();
      for (std::size_t i = 0; i < v.size(); ++i)
        opt.probe_points.push_back(vector(v[i], p + "/" + std::to_string(i)));
    } else {
      throw ConfigError(p, "unknown key '" + key + "'");
    }
  }
  if (opt.replicates < 2) throw ConfigError(ptr + "/replicates", "need at least 2 replicates");
  if (!(opt.radius > 0.0)) throw ConfigError(ptr + "/radius", "radius must be > 0");
  return opt;
}

RunConfig parse_config(const fs::path& path, bool diagnose_only) {
  std::ifstream in(path);
  if (!in) throw ConfigFailure{path.string() + ": cannot open config file"};
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_col(text, e.byte > 0 ? e.byte - 1 : 0);
    throw ConfigFailure{path.string() + ":" + std::to_string(line) + ":" + std::to_string(col) +
                        ": invalid JSON: " + e.what()};
  }

  try {
    if (!doc.is_object()) throw ConfigError("", "config must be a JSON object");
    RunConfig cfg;
    ExperimentSpec base;
    json spec_doc = json::object();
    for (const auto& [key, v] : doc.items()) {
      if (key == "experiment") {
        if (!v.is_string()) throw ConfigError("/experiment", "'experiment' must be a string");
        try {
          base = builtin(v.get<std::string>());
        } catch (const std::invalid_argument& e) {
          throw ConfigError("/experiment", e.what());
        }
        cfg.has_problem = true;
      } else if (key == "output_dir") {
        if (!v.is_string()) throw ConfigError("/output_dir", "'output_dir' must be a string");
        cfg.output_dir = v.get<std::string>();
      } else if (key == "threads") {
        if (!v.is_number_unsigned()) throw ConfigError("/threads", "'threads' must be >= 0");
        cfg.threads = v.get<unsigned>();
      } else if (key == "emit") {
        if (!v.is_object()) throw ConfigError("/emit", "expected an object");
        for (const auto& [flag, fv] : v.items()) {
          if (!fv.is_boolean()) throw ConfigError("/emit/" + flag, "emit flags must be booleans");
          const bool on = fv.get<bool>();
          if (flag == "traces")
            cfg.emit.traces = on;
          else if (flag == "quantiles")
            cfg.emit.quantiles = on;
          else if (flag == "bounds")
            cfg.emit.bounds = on;
          else if (flag == "diagnostics")
            cfg.emit.diagnostics = on;
          else
            throw ConfigError("/emit/" + flag, "unknown emit flag '" + flag + "'");
        }
        if (!(cfg.emit.traces || cfg.emit.quantiles || cfg.emit.bounds || cfg.emit.diagnostics))
          throw ConfigError("/emit", "at least one emit flag must be set");
      } else if (key != "diagnostics") {
        spec_doc[key] = v;
        if (key == "problem") cfg.has_problem = true;
      }
    }
    if (!cfg.has_problem) throw ConfigError("", "config needs an 'experiment' or a 'problem' section");
    if (doc.contains("diagnostics"))
      cfg.diagnostics = diagnostic_options(doc.at("diagnostics"), "/diagnostics", cfg.diagnostics);
    if (!doc.contains("experiment")) {
      if (!spec_doc.contains("name")) base.name = path.stem().string();
      if (diagnose_only) {
        // Only the problem matters here; fill the run fields so the experiment validates.
        base.seeds = {1};
        base.budget = 1.0;
        OptimizerConfig placeholder;
        placeholder.name = "unused";
        base.optimizers = {placeholder};
      }
    }
    cfg.spec = spec_from_json(spec_doc, base);
    return cfg;
  } catch (const ConfigError& e) {
    const PositionIndex index(text);
    const auto [line, col] = line_col(text, index.offset_of(e.pointer()));
    throw ConfigFailure{path.string() + ":" + std::to_string(line) + ":" +
                        std::to_string(col) + ": " + e.what()};
  }
}

fs::path output_root(const RunConfig& cfg, const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("BISTRO_OUTPUT_ROOT"); env && *env) return env;
  return cfg.output_dir;
}

json constants_json(const RegularityConstants& k) {
  return {{"L_H", k.L_H},   {"c_H", k.c_H},   {"L_L", k.L_L},       {"c_L", k.c_L},
          {"W", k.W},       {"W_V", k.W_V},   {"W_ML", k.W_ML},     {"W_V_ml", k.W_V_ml},
          {"source", k.source == ConstantsSource::analytic ? "analytic" : "estimated"}};
}

json fit_json(const NoiseFit& f) {
  json probes = json::array();
  for (const auto& p : f.probes)
    probes.push_back({{"x_norm", p.x.norm()},
                      {"grad_norm_sq", p.grad_norm_sq},
                      {"trace_var", p.trace_var},
                      {"trace_var_se", p.trace_var_se}});
  return {{"intercept", f.intercept},
          {"slope", f.slope},
          {"raw_intercept", f.raw_intercept},
          {"raw_slope", f.raw_slope},
          {"probes", probes}};
}

json diagnostic_json(const DiagnosticReport& r, const DiagnosticOptions& opt) {
  json j;
  j["estimated"] = constants_json(r.estimated);
  j["declared"] = r.declared ? constants_json(*r.declared) : json(nullptr);
  j["high_fit"] = fit_json(r.high_fit);
  j["mlmc_fit"] = fit_json(r.mlmc_fit);
  j["cost_sgd_iter"] = r.cost_sgd_iter;
  j["cost_mlmc_iter"] = r.cost_mlmc_iter;
  j["dominance"] = r.dominance;
  j["switch_gap"] = r.switch_gap;
  j["trust_lambda"] = r.lambda;
  j["settings"] = {{"replicates", opt.replicates},
                   {"radius", opt.radius},
                   {"hessian_samples", opt.hessian_samples},
                   {"risk_gradient_samples", opt.risk_gradient_samples},
                   {"sizes", {{"N", opt.sizes.n}, {"M", opt.sizes.m}, {"K", opt.sizes.k}}},
                   {"hessian_step", "1e-4 * (1 + |x_i|), central"},
                   {"center", std::vector<double>(r.center.data(), r.center.data() + r.center.size())}};
  return j;
}

json defaults_json() {
  const TrustRegionConfig tr;
  return {{"norm", "euclidean"},
          {"subsolver_max_iters", tr.subsolver_max_iters},
          {"subsolver_grad_tol", tr.subsolver_grad_tol},
          {"subsolver_step_tol", tr.subsolver_step_tol},
          {"subsolver_armijo", 1e-4},
          {"warm_start_max_iters", 200},
          {"fd_hessian_step", "1e-4 * (1 + |x_i|), central"},
          {"gradient_audit_step", "1e-6 * (1 + |x_i|), central"},
          {"switch_inequality", "strict unless strict_switch=false"},
          {"cost_grid", "uniform over [0, largest final cost], step interpolation"},
          {"quantile_convention", "linear between order statistics, h = (n - 1) q"},
          {"rng", "counter-based 64-bit stream per (seed, stream), Box-Muller normals"}};
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

int cmd_run(const fs::path& config_path, const std::string& output_flag, int threads_flag) {
  RunConfig cfg;
  try {
    cfg = parse_config(config_path, false);
  } catch (const ConfigFailure& f) {
    std::cerr << "error: " << f.message << '\n';
    return kConfigError;
  }
  const fs::path root = output_root(cfg, output_flag);
  const unsigned threads = threads_flag >= 0 ? static_cast<unsigned>(threads_flag) : cfg.threads;

  bool any_aborted = false;
  try {
    for (const ExperimentSpec& spec : expand(cfg.spec)) {
      const BiFidelityProblem problem = make_problem(spec.problem);
      const fs::path dir = root / spec.name;
      fs::create_directories(dir);

      RunOptions ropt;
      ropt.threads = threads;
      if (cfg.emit.traces) ropt.output_dir = root;
      std::cout << spec.name << ": " << spec.optimizers.size() << " optimizers x "
                << spec.seeds.size() << " seeds, budget " << spec.budget << std::endl;
      const ExperimentResult result = run_experiment(spec, ropt);

      json summary = json::object();
      for (const auto& [name, cells] : result.cells) {
        long aborted = 0, switched = 0;
        std::vector<double> finals, reach;
        for (const auto& c : cells) {
          if (c.run.state.aborted) {
            ++aborted;
            std::cerr << spec.name << "/" << name << "/seed-" << c.seed
                      << ": aborted: " << c.run.state.abort_reason << '\n';
          }
          if (c.run.state.switched_at) ++switched;
          if (!c.run.trace.empty()) finals.push_back(plotted_objective(c.run.trace.back()));
          if (spec.threshold && problem.reference && problem.reference->optimum_value) {
            const auto b = budget_to_threshold(c.run.trace, *problem.reference->optimum_value,
                                               *spec.threshold);
            reach.push_back(b ? *b : std::numeric_limits<double>::infinity());
          }
        }
        any_aborted = any_aborted || aborted > 0;
        json s = {{"aborted", aborted}, {"switched", switched}};
        if (!finals.empty()) s["median_final_objective"] = quantile(finals, 0.5);
        if (!reach.empty()) {
          const double m = quantile(reach, 0.5);
          s["median_budget_to_threshold"] = std::isfinite(m) ? json(m) : json("not reached");
        }
        summary[name] = s;
      }

      if (cfg.emit.quantiles)
        write_quantiles_csv(dir / "quantiles.csv",
                            aggregate(result, spec.quantiles, spec.cost_grid_points));
      if (cfg.emit.bounds) {
        const auto rows = bound_overlay(spec, problem, result);
        if (!rows.empty()) write_bounds_csv(dir / "bounds.csv", rows);
      }
      if (cfg.emit.diagnostics) {
        const DiagnosticOptions& dopt = cfg.diagnostics;
        const DiagnosticReport rep = diagnose(problem, dopt, RngStream(spec.seeds.front(), 1));
        write_json(dir / "diagnostics.json", diagnostic_json(rep, dopt));
      }

      json manifest;
      manifest["version"] = BISTRO_VERSION;
      manifest["config_file"] = config_path.string();
      manifest["experiment"] = to_json(spec);
      manifest["problem_parameters"] = problem.parameters;
      const DesignPoint x0 = resolve_start(spec, problem);
      manifest["x0"] = std::vector<double>(x0.data(), x0.data() + x0.size());
      manifest["costs"] = {{"high_eval", problem.costs.high_eval},
                           {"low_eval", problem.costs.low_eval},
                           {"high_grad", problem.costs.high_grad},
                           {"low_grad", problem.costs.low_grad}};
      if (problem.declared_constants)
        manifest["declared_constants"] = constants_json(*problem.declared_constants);
      manifest["defaults"] = defaults_json();
      manifest["emit"] = {{"traces", cfg.emit.traces},
                          {"quantiles", cfg.emit.quantiles},
                          {"bounds", cfg.emit.bounds},
                          {"diagnostics", cfg.emit.diagnostics}};
      manifest["summary"] = summary;
      write_json(dir / "manifest.json", manifest);
      std::cout << "  wrote " << dir.string() << std::endl;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << config_path.string() << ": " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return any_aborted ? kRuntimeError : kOk;
}

int cmd_diagnose(const fs::path& config_path, const std::string& output_flag) {
  RunConfig cfg;
  try {
    cfg = parse_config(config_path, true);
  } catch (const ConfigFailure& f) {
    std::cerr << "error: " << f.message << '\n';
    return kConfigError;
  }
  const fs::path root = output_root(cfg, output_flag);
  try {
    for (const ExperimentSpec& spec : expand(cfg.spec)) {
      const BiFidelityProblem problem = make_problem(spec.problem);
      const DiagnosticOptions& opt = cfg.diagnostics;
      const DiagnosticReport rep = diagnose(problem, opt, RngStream(spec.seeds.front(), 1));
      const fs::path dir = root / spec.name;
      fs::create_directories(dir);
      json j = diagnostic_json(rep, opt);
      j["version"] = BISTRO_VERSION;
      j["problem"] = to_json(spec.problem);
      j["problem_parameters"] = problem.parameters;
      write_json(dir / "diagnostics.json", j);

      const auto& e = rep.estimated;
      std::cout << spec.name << " (" << problem.name << ")\n"
                << "  L_H " << e.L_H << "  c_H " << e.c_H << "  L_L " << e.L_L << "  c_L " << e.c_L
                << "\n  W " << e.W << "  W_V " << e.W_V << "  W_ML " << e.W_ML << "  W_V_ml "
                << e.W_V_ml << "\n  raw fits: high (" << rep.high_fit.raw_intercept << ", "
                << rep.high_fit.raw_slope << ")  mlmc (" << rep.mlmc_fit.raw_intercept << ", "
                << rep.mlmc_fit.raw_slope << ")\n";
      if (rep.declared) {
        const auto& d = *rep.declared;
        std::cout << "  declared: L_H " << d.L_H << "  c_H " << d.c_H << "  L_L " << d.L_L
                  << "  c_L " << d.c_L << "  W " << d.W << "  W_V " << d.W_V << "  W_ML "
                  << d.W_ML << "  W_V_ml " << d.W_V_ml << "\n";
      }
      std::cout << "  per-iteration cost: sgd " << rep.cost_sgd_iter << ", mlmc "
                << rep.cost_mlmc_iter << "\n  mlmc dominates: " << (rep.dominance ? "yes" : "no")
                << "\n  switch gap " << rep.switch_gap << "\n  trust lambda " << rep.lambda
                << "\n  wrote " << (dir / "diagnostics.json").string() << std::endl;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << config_path.string() << ": " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}

int cmd_list() {
  for (const auto& name : builtin_names()) {
    const ExperimentSpec spec = builtin(name);
    std::cout << name << "  problem=" << spec.problem.name << "  seeds=" << spec.seeds.size()
              << "  budget=" << spec.budget << "  optimizers=";
    for (std::size_t i = 0; i < spec.optimizers.size(); ++i)
      std::cout << (i ? "," : "") << spec.optimizers[i].name;
    if (spec.sweep) {
      std::cout << "  sweep " << spec.sweep->param << "=";
      for (std::size_t i = 0; i < spec.sweep->values.size(); ++i)
        std::cout << (i ? "," : "") << spec.sweep->values[i];
    }
    std::cout << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bi-fidelity stochastic optimization experiments"};
  app.set_version_flag("--version", std::string(BISTRO_VERSION));
  app.require_subcommand(1);

  std::string run_config, diag_config, output;
  int threads = -1;
  auto* run = app.add_subcommand("run", "Run an experiment and write traces");
  run->add_option("config", run_config, "Config JSON")->required();
  run->add_option("-o,--output", output, "Output root (overrides BISTRO_OUTPUT_ROOT)");
  run->add_option("-j,--threads", threads, "Worker threads (0: all cores)");

  auto* diag = app.add_subcommand("diagnose", "Estimate problem constants");
  diag->add_option("config", diag_config, "Config JSON")->required();
  diag->add_option("-o,--output", output, "Output root (overrides BISTRO_OUTPUT_ROOT)");

  app.add_subcommand("list-experiments", "List built-in experiments");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  if (*run) return cmd_run(run_config, output, threads);
  if (*diag) return cmd_diagnose(diag_config, output);
  return cmd_list();
}
