#pragma once

#include "bistro/diagnostics.hpp"
#include "bistro/optimizers.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace bistro {

enum class OptimizerKind {
  sgd,               // decaying rate, high-fidelity gradients
  sgd_switch,        // held rate until the empirical switching test fires
  mlmc_sgd,          // decaying rate, MLMC gradients
  mlmc_switch,       // held rate, MLMC gradients
  mlmc_switch_wslf,  // mlmc_switch from a one-sample low-fidelity SAA solution
  mlmc_switch_wshf,  // same, high-fidelity SAA solution
  bistro,
};

std::string_view to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(std::string_view name);

struct ScheduleConfig {
  // Derive beta and gamma from the problem's declared constants.
  bool optimal = false;
  double alpha0 = 0.01;
  double gamma = 100.0;
};

struct OptimizerConfig {
  std::string name;
  OptimizerKind kind = OptimizerKind::sgd;
  ScheduleConfig schedule;
  SampleSizes sizes;
  double delta = 1.0;
  std::optional<double> lambda;  // unset: from declared constants, else 1
  double warm_start_fraction = 0.05;
  bool strict_switch = true;

  void validate() const;
};

struct ProblemConfig {
  std::string name;  // quadratic | forretal | trajectory
  std::map<std::string, double> params;
  std::string dynamics;  // trajectory only: glider | linear_decay
};

// One parameter of the problem swept over a list of values; each value is run
// as its own experiment named "<name>-<param><value>".
struct Sweep {
  std::string param;
  std::vector<double> values;
};

struct ExperimentSpec {
  std::string name;
  ProblemConfig problem;
  std::vector<OptimizerConfig> optimizers;
  std::vector<std::uint64_t> seeds;
  double budget = 0.0;
  long trace_stride = 1;
  std::vector<double> x0;  // one value is broadcast; empty uses the problem default
  std::vector<double> quantiles{0.2, 0.5, 0.8};
  long cost_grid_points = 101;
  // Distance to the known optimum used for the budget-to-threshold metric.
  std::optional<double> threshold;
  std::optional<Sweep> sweep;
  std::string golden;

  void validate() const;
};

/// Invalid configuration document. `pointer` is the JSON pointer of the
/// offending value (or of its parent object when a key is missing).
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string pointer, const std::string& message)
      : std::invalid_argument(message), pointer_(std::move(pointer)) {}
  const std::string& pointer() const { return pointer_; }

 private:
  std::string pointer_;
};

std::vector<std::string> builtin_names();
ExperimentSpec builtin(const std::string& name);

// Sweeps resolved into one spec per value; a spec without a sweep maps to itself.
std::vector<ExperimentSpec> expand(const ExperimentSpec& spec);

nlohmann::json to_json(const ExperimentSpec& spec);
nlohmann::json to_json(const OptimizerConfig& config);
nlohmann::json to_json(const ProblemConfig& config);
// `base` supplies every field the document leaves out.
ExperimentSpec spec_from_json(const nlohmann::json& doc, const ExperimentSpec& base = {});
OptimizerConfig optimizer_from_json(const nlohmann::json& doc);
ProblemConfig problem_from_json(const nlohmann::json& doc);

BiFidelityProblem make_problem(const ProblemConfig& config);
DesignPoint resolve_start(const ExperimentSpec& spec, const BiFidelityProblem& problem);

struct CellResult {
  std::uint64_t seed = 0;
  RunResult run;
};

struct ExperimentResult {
  std::string name;
  // Keyed by optimizer name, cells in seed order.
  std::map<std::string, std::vector<CellResult>> cells;
};

struct RunOptions {
  unsigned threads = 0;  // 0: hardware concurrency
  // When set, every cell streams its trace to
  // <output_dir>/<experiment>/<optimizer>/seed-<s>.csv as it runs.
  std::optional<std::filesystem::path> output_dir;
};

RunResult run_cell(const ExperimentSpec& spec, const BiFidelityProblem& problem,
                   const OptimizerConfig& config, std::uint64_t seed,
                   const RunControl& control = {});

ExperimentResult run_experiment(const ExperimentSpec& spec, const RunOptions& options = {});

struct QuantileTable {
  std::vector<double> cost_grid;
  std::vector<double> quantiles;
  // optimizer -> [quantile index][grid index]
  std::map<std::string, std::vector<std::vector<double>>> values;
};

// Objective used for plotting a row: the reference value when present.
double plotted_objective(const TraceRow& row);

/// Step-interpolates every trace onto a shared uniform cost grid over
/// [0, largest final cost] and takes per-point quantiles with linear
/// interpolation between order statistics.
QuantileTable aggregate(const std::map<std::string, std::vector<std::vector<TraceRow>>>& traces,
                        const std::vector<double>& quantiles, long grid_points = 101);
QuantileTable aggregate(const ExperimentResult& result, const std::vector<double>& quantiles,
                        long grid_points = 101);

// Linear interpolation between order statistics, h = (n - 1) q.
double quantile(std::vector<double> values, double q);

/// Cumulative cost of the first row whose reference objective is within
/// `threshold` of `optimum_value`, or nullopt if the trace never gets there.
std::optional<double> budget_to_threshold(const std::vector<TraceRow>& trace,
                                          double optimum_value, double threshold);

inline constexpr const char* kTraceHeader =
    "iteration,cumulative_cost,phase,objective_estimate,true_objective,"
    "grad_norm_estimate,learning_rate";

std::string format_number(double v);
std::string format_row(const TraceRow& row);

class TraceCsvWriter {
 public:
  explicit TraceCsvWriter(const std::filesystem::path& path);
  void write(const TraceRow& row);

 private:
  std::ofstream out_;
};

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& trace);
void write_quantiles_csv(const std::filesystem::path& path, const QuantileTable& table);

struct BoundRow {
  long iteration;
  double cumulative_cost;
  double bound;
};

/// Bound curve over the rows of the first MLMC-gradient optimizer; row j of
/// a trace is the iterate after j updates, which the bound indexes as j + 1.
std::vector<BoundRow> bound_overlay(const ExperimentSpec& spec, const BiFidelityProblem& problem,
                                    const ExperimentResult& result);
void write_bounds_csv(const std::filesystem::path& path, const std::vector<BoundRow>& rows);

}  // namespace bistro
