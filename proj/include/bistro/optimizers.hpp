#pragma once

#include "bistro/trust_region.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace bistro {

enum class ScheduleMode { decay_from_start, constant_then_decay };

/// alpha_t = beta / (gamma + t). The counter t starts at 1 and only
/// advances while the schedule is decaying; in constant_then_decay mode the
/// rate is held at alpha_1 until `start_decay()`.
class LearningRateSchedule {
 public:
  LearningRateSchedule(double beta, double gamma,
                       ScheduleMode mode = ScheduleMode::decay_from_start);

  // beta chosen so that beta / gamma == alpha0.
  static LearningRateSchedule from_initial_rate(
      double alpha0, double gamma, ScheduleMode mode = ScheduleMode::decay_from_start);

  double beta() const { return beta_; }
  double gamma() const { return gamma_; }
  long counter() const { return counter_; }
  ScheduleMode mode() const { return mode_; }
  bool decaying() const { return decaying_; }

  double rate() const { return rate_at(counter_); }
  double rate_at(long t) const { return beta_ / (gamma_ + static_cast<double>(t)); }

  void advance() {
    if (decaying_) ++counter_;
  }
  void start_decay() { decaying_ = true; }

 private:
  double beta_;
  double gamma_;
  ScheduleMode mode_;
  long counter_ = 1;
  bool decaying_;
};

/// beta = 2 / c_H, gamma = 2 L_H (W_V_ml + 1) / c_H - 1, so that
/// alpha_1 = 1 / (L_H (W_V_ml + 1)).
LearningRateSchedule optimal_schedule(double c_H, double L_H, double W_V_ml,
                                      ScheduleMode mode = ScheduleMode::decay_from_start);

struct TraceRow {
  long iteration = 0;
  double cumulative_cost = 0.0;
  Phase phase = Phase::setup;
  double objective_estimate = 0.0;  // NaN when no risk estimate was formed
  std::optional<double> true_objective;
  double grad_norm_estimate = 0.0;  // NaN when no gradient was formed
  double learning_rate = 0.0;
};

using TraceSink = std::function<void(const TraceRow&)>;

struct OptimizerState {
  DesignPoint x;
  long k = 0;
  Phase phase = Phase::sgd;
  LearningRateSchedule lr{1.0, 1.0};
  std::optional<RiskEstimate> last_mlmc_risk;
  CostLedger ledger{1.0, CostModel{}};
  std::optional<long> switched_at;
  bool aborted = false;
  std::string abort_reason;
};

struct RunResult {
  OptimizerState state;
  std::vector<TraceRow> trace;
  std::vector<std::string> log;
};

struct RunControl {
  long trace_stride = 1;  // rows every stride iterations, plus first and last
  TraceSink sink;
  bool strict_switch = true;  // '>' in the switching test; false gives '>='
};

enum class GradientSource { high, mlmc };

struct SgdOptions {
  GradientSource estimator = GradientSource::high;
  bool switch_mode = false;
  SampleSizes sizes{};
};

/// True iff the new MLMC risk estimate exceeds the previous one.
bool switching_test(const RiskEstimate& prev, const RiskEstimate& next,
                    bool strict = true);

/// x_{k+1} = x_k - alpha_t * g_k with a fresh gradient estimate every
/// iteration (N high-fidelity samples, or the MLMC combination with N and M).
/// With switch_mode the rate is held until a fresh risk estimate at the new
/// iterate exceeds the previous one, after which it decays.
/// `ledger` may already carry spending (e.g. from a warm start).
RunResult sgd_run(const BiFidelityProblem& problem, const DesignPoint& x0,
                  LearningRateSchedule schedule, const SgdOptions& options,
                  CostLedger ledger, const RngStream& stream,
                  const RunControl& control = {});
RunResult sgd_run(const BiFidelityProblem& problem, const DesignPoint& x0,
                  LearningRateSchedule schedule, const SgdOptions& options,
                  double budget, const RngStream& stream,
                  const RunControl& control = {});

/// Trust-region warm start followed by MLMC-SGD.
///
/// Trust phase: each iteration minimizes the corrected surrogate anchored at
/// x_k over the Delta-ball, steps x_{k+1} = x_k + lambda s_k, draws fresh
/// estimators at x_{k+1} and switches permanently to MLMC-SGD when
/// R_ML^(k+1)(x_{k+1}) > R_ML^(k)(x_k). The SGD phase uses
/// alpha_t = beta / (gamma + t) with t counted from 1 at the switch.
RunResult bistro_run(const BiFidelityProblem& problem, const DesignPoint& x0,
                     const TrustRegionConfig& cfg, LearningRateSchedule schedule,
                     const SampleSizes& sizes, CostLedger ledger,
                     const RngStream& stream, const RunControl& control = {});
RunResult bistro_run(const BiFidelityProblem& problem, const DesignPoint& x0,
                     const TrustRegionConfig& cfg, LearningRateSchedule schedule,
                     const SampleSizes& sizes, double budget,
                     const RngStream& stream, const RunControl& control = {});

struct WarmStartResult {
  DesignPoint x;
  double value = 0.0;  // J_fid(x, xi) at the returned point
  int iterations = 0;
  bool converged = false;
};

/// Minimizes J_fid(., xi) for a single draw xi (a one-sample SAA problem)
/// by gradient descent with Barzilai-Borwein steps and backtracking,
/// spending at most budget_fraction * ledger.budget(). Returns the best
/// iterate found.
WarmStartResult warm_start(const BiFidelityProblem& problem, Fidelity fidelity,
                           const DesignPoint& x0, double budget_fraction,
                           const RngStream& stream, CostLedger& ledger,
                           int max_iters = 200);

}  // namespace bistro
