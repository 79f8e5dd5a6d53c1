#include "bistro/optimizers.hpp"

#include <cmath>
#include <limits>

namespace bistro {

LearningRateSchedule::LearningRateSchedule(double beta, double gamma,
                                           ScheduleMode mode)
    : beta_(beta),
      gamma_(gamma),
      mode_(mode),
      decaying_(mode == ScheduleMode::decay_from_start) {
  if (!(beta > 0.0)) throw std::invalid_argument("schedule: beta must be > 0");
  if (!(gamma >= 0.0)) throw std::invalid_argument("schedule: gamma must be >= 0");
}

LearningRateSchedule LearningRateSchedule::from_initial_rate(double alpha0,
                                                             double gamma,
                                                             ScheduleMode mode) {
  if (!(alpha0 > 0.0) || !(gamma > 0.0))
    throw std::invalid_argument("schedule: alpha0 and gamma must be > 0");
  return LearningRateSchedule(alpha0 * gamma, gamma, mode);
}

LearningRateSchedule optimal_schedule(double c_H, double L_H, double W_V_ml,
                                      ScheduleMode mode) {
  if (!(c_H > 0.0)) throw std::invalid_argument("optimal_schedule: c_H must be > 0");
  if (!(L_H >= c_H)) throw std::invalid_argument("optimal_schedule: need L_H >= c_H");
  if (!(W_V_ml >= 0.0)) throw std::invalid_argument("optimal_schedule: W_V_ml must be >= 0");
  const double beta = 2.0 / c_H;
  const double gamma = 2.0 * L_H * (W_V_ml + 1.0) / c_H - 1.0;
  return LearningRateSchedule(beta, gamma, mode);
}

bool switching_test(const RiskEstimate& prev, const RiskEstimate& next,
                    bool strict) {
  return strict ? next.value > prev.value : next.value >= prev.value;
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Emits every stride-th row immediately and holds the latest skipped row so
// the final iterate is always recorded.
class Recorder {
 public:
  Recorder(const BiFidelityProblem& problem, const RunControl& control,
           std::vector<TraceRow>& trace)
      : problem_(problem), control_(control), trace_(trace) {}

  void offer(TraceRow row, const DesignPoint& x) {
    const long stride = std::max(1L, control_.trace_stride);
    if (row.iteration % stride == 0) {
      emit(row, x);
      pending_.reset();
    } else {
      pending_ = std::make_pair(row, x);
    }
  }

  void finish() {
    if (pending_) emit(pending_->first, pending_->second);
    pending_.reset();
  }

 private:
  void emit(TraceRow row, const DesignPoint& x) {
    if (problem_.reference && problem_.reference->true_risk) {
      row.true_objective = problem_.reference->true_risk(x);
    }
    trace_.push_back(row);
    if (control_.sink) control_.sink(row);
  }

  const BiFidelityProblem& problem_;
  const RunControl& control_;
  std::vector<TraceRow>& trace_;
  std::optional<std::pair<TraceRow, DesignPoint>> pending_;
};

bool abort_if_bad(OptimizerState& state, const DesignPoint& x,
                  std::vector<std::string>& log) {
  if (x.allFinite()) return false;
  state.aborted = true;
  state.abort_reason = "non-finite iterate at k=" + std::to_string(state.k);
  log.push_back(state.abort_reason);
  return true;
}

RiskEstimate fresh_risk(const BiFidelityProblem& problem, GradientSource src,
                        const DesignPoint& x, const SampleSizes& sizes,
                        const RngStream& stream, CostLedger& ledger) {
  RngStream sn = stream.substream(2);
  RngStream sm = stream.substream(3);
  const SampleBatch bn = draw(sn, sizes.n, problem.dim_xi, problem.xi_distribution);
  if (src == GradientSource::high)
    return estimate_risk(problem, Fidelity::high, x, bn, ledger);
  const SampleBatch bm = draw(sm, sizes.m, problem.dim_xi, problem.xi_distribution);
  return mlmc_risk(problem, x, bn, bm, ledger);
}

GradientEstimate fresh_gradient(const BiFidelityProblem& problem,
                                GradientSource src, const DesignPoint& x,
                                const SampleSizes& sizes, const RngStream& stream,
                                CostLedger& ledger) {
  RngStream sn = stream.substream(0);
  RngStream sm = stream.substream(1);
  const SampleBatch bn = draw(sn, sizes.n, problem.dim_xi, problem.xi_distribution);
  if (src == GradientSource::high)
    return estimate_gradient(problem, Fidelity::high, x, bn, ledger);
  const SampleBatch bm = draw(sm, sizes.m, problem.dim_xi, problem.xi_distribution);
  return mlmc_gradient(problem, x, bn, bm, ledger);
}

}  // namespace

RunResult sgd_run(const BiFidelityProblem& problem, const DesignPoint& x0,
                  LearningRateSchedule schedule, const SgdOptions& options,
                  CostLedger ledger, const RngStream& stream,
                  const RunControl& control) {
  if (options.estimator == GradientSource::mlmc) options.sizes.validate();
  if (options.sizes.n < 1) throw std::invalid_argument("sgd_run: N must be >= 1");
  if (x0.size() != problem.dim_x) throw std::invalid_argument("sgd_run: x0 has wrong size");

  RunResult result;
  OptimizerState& st = result.state;
  st.x = problem.project(x0);
  st.phase = Phase::sgd;
  st.lr = schedule;
  st.ledger = std::move(ledger);
  CostLedger& led = st.ledger;
  led.set_phase(Phase::sgd);
  Recorder rec(problem, control, result.trace);

  const bool hold = options.switch_mode;
  if (!hold) st.lr.start_decay();
  std::optional<RiskEstimate> prev_risk;
  double last_estimate = kNaN;

  try {
    if (hold) {
      prev_risk = fresh_risk(problem, options.estimator, st.x, options.sizes,
                             stream.substream(0), led);
      last_estimate = prev_risk->value;
    }
    rec.offer({0, led.spent(), Phase::sgd, last_estimate, std::nullopt, kNaN,
               st.lr.rate()},
              st.x);

    while (!led.exhausted()) {
      const RngStream it = stream.substream(static_cast<std::uint64_t>(st.k) + 1);
      const GradientEstimate g =
          fresh_gradient(problem, options.estimator, st.x, options.sizes, it, led);
      const double alpha = st.lr.rate();
      const DesignPoint x_next = problem.project(st.x - alpha * g.vector);
      st.lr.advance();
      if (abort_if_bad(st, x_next, result.log)) break;
      st.x = x_next;
      ++st.k;

      last_estimate = kNaN;
      if (hold && !st.switched_at) {
        const RiskEstimate next =
            fresh_risk(problem, options.estimator, st.x, options.sizes, it, led);
        last_estimate = next.value;
        if (switching_test(*prev_risk, next, control.strict_switch)) {
          st.lr.start_decay();
          st.switched_at = st.k;
          result.log.push_back("learning-rate decay starts at k=" + std::to_string(st.k));
        }
        prev_risk = next;
        if (options.estimator == GradientSource::mlmc) st.last_mlmc_risk = next;
      }
      rec.offer({st.k, led.spent(), Phase::sgd, last_estimate, std::nullopt,
                 g.vector.norm(), alpha},
                st.x);
    }
  } catch (const EstimationError& e) {
    st.aborted = true;
    st.abort_reason = e.what();
    result.log.push_back(st.abort_reason);
  }
  rec.finish();
  return result;
}

RunResult sgd_run(const BiFidelityProblem& problem, const DesignPoint& x0,
                  LearningRateSchedule schedule, const SgdOptions& options,
                  double budget, const RngStream& stream,
                  const RunControl& control) {
  return sgd_run(problem, x0, schedule, options, CostLedger(budget, problem.costs),
                 stream, control);
}

RunResult bistro_run(const BiFidelityProblem& problem, const DesignPoint& x0,
                     const TrustRegionConfig& cfg, LearningRateSchedule schedule,
                     const SampleSizes& sizes, CostLedger ledger,
                     const RngStream& stream, const RunControl& control) {
  cfg.validate();
  sizes.validate();
  if (x0.size() != problem.dim_x) throw std::invalid_argument("bistro_run: x0 has wrong size");

  RunResult result;
  OptimizerState& st = result.state;
  st.x = problem.project(x0);
  st.phase = Phase::trust;
  st.lr = schedule;
  st.lr.start_decay();
  st.ledger = std::move(ledger);
  CostLedger& led = st.ledger;
  led.set_phase(Phase::trust);
  Recorder rec(problem, control, result.trace);

  try {
    IterateEstimates cur = draw_iterate_estimates(
        problem, st.x, sizes, stream.substream(0), led, cfg.alias_surrogate_batch);
    st.last_mlmc_risk = cur.mlmc_value;
    rec.offer({0, led.spent(), Phase::trust, cur.mlmc_value->value, std::nullopt,
               cur.high_grad.vector.norm(), cfg.lambda},
              st.x);

    while (!led.exhausted()) {
      const std::uint64_t next_id = static_cast<std::uint64_t>(st.k) + 1;
      if (st.phase == Phase::trust) {
        const TrustStepResult ts = trust_step_from(problem, cur, cfg, led);
        for (const auto& w : ts.diagnostics.report.warnings)
          result.log.push_back("k=" + std::to_string(st.k) + ": " + w);
        if (abort_if_bad(st, ts.x_next, result.log)) break;
        IterateEstimates nxt = draw_iterate_estimates(
            problem, ts.x_next, sizes, stream.substream(next_id), led,
            cfg.alias_surrogate_batch);
        const bool switch_now =
            switching_test(*cur.mlmc_value, *nxt.mlmc_value, control.strict_switch);
        const double used_grad_norm = cur.high_grad.vector.norm();
        st.x = ts.x_next;
        ++st.k;
        st.last_mlmc_risk = nxt.mlmc_value;
        rec.offer({st.k, led.spent(), Phase::trust, nxt.mlmc_value->value,
                   std::nullopt, used_grad_norm, cfg.lambda},
                  st.x);
        cur = std::move(nxt);
        if (switch_now) {
          st.phase = Phase::sgd;
          st.switched_at = st.k;
          led.set_phase(Phase::sgd);
          result.log.push_back(st.k == 1
                                   ? "switched after the first trust step"
                                   : "switched to MLMC-SGD at k=" + std::to_string(st.k));
        }
      } else {
        const GradientEstimate g = fresh_gradient(
            problem, GradientSource::mlmc, st.x, sizes, stream.substream(next_id), led);
        const double alpha = st.lr.rate();
        const DesignPoint x_next = problem.project(st.x - alpha * g.vector);
        st.lr.advance();
        if (abort_if_bad(st, x_next, result.log)) break;
        st.x = x_next;
        ++st.k;
        rec.offer({st.k, led.spent(), Phase::sgd, kNaN, std::nullopt,
                   g.vector.norm(), alpha},
                  st.x);
      }
    }
  } catch (const EstimationError& e) {
    st.aborted = true;
    st.abort_reason = e.what();
    result.log.push_back(st.abort_reason);
  }
  rec.finish();
  return result;
}

RunResult bistro_run(const BiFidelityProblem& problem, const DesignPoint& x0,
                     const TrustRegionConfig& cfg, LearningRateSchedule schedule,
                     const SampleSizes& sizes, double budget,
                     const RngStream& stream, const RunControl& control) {
  return bistro_run(problem, x0, cfg, schedule, sizes,
                    CostLedger(budget, problem.costs), stream, control);
}

WarmStartResult warm_start(const BiFidelityProblem& problem, Fidelity fidelity,
                           const DesignPoint& x0, double budget_fraction,
                           const RngStream& stream, CostLedger& ledger,
                           int max_iters) {
  if (!(budget_fraction > 0.0 && budget_fraction <= 1.0))
    throw std::invalid_argument("warm_start: budget_fraction must lie in (0, 1]");
  if (fidelity == Fidelity::mlmc)
    throw std::invalid_argument("warm_start: fidelity must be high or low");
  const Phase saved_phase = ledger.phase();
  ledger.set_phase(Phase::warm_start);
  const double cap = ledger.spent() + budget_fraction * ledger.budget();

  RngStream s = stream;
  const SampleBatch one = draw(s, 1, problem.dim_xi, problem.xi_distribution);
  const Vector xi = one.draws.row(0).transpose();
  auto value_grad = [&](const DesignPoint& x) {
    ledger.charge(fidelity, EvalKind::eval, 1);
    ledger.charge(fidelity, EvalKind::grad, 1);
    return std::make_pair(problem.eval(fidelity, x, xi), problem.grad(fidelity, x, xi));
  };

  WarmStartResult out;
  out.x = problem.project(x0);
  auto [f, g] = value_grad(out.x);
  out.value = f;
  if (!std::isfinite(f) || !g.allFinite()) {
    ledger.set_phase(saved_phase);
    return out;
  }
  double t = 1.0 / std::max(1.0, g.norm());
  for (out.iterations = 0; out.iterations < max_iters; ++out.iterations) {
    if (g.norm() < 1e-9) {
      out.converged = true;
      break;
    }
    if (ledger.spent() >= cap) break;
    bool accepted = false;
    DesignPoint trial;
    double ft = 0.0;
    Vector gt;
    for (int bt = 0; bt < 60 && ledger.spent() < cap; ++bt) {
      trial = problem.project(out.x - t * g);
      std::tie(ft, gt) = value_grad(trial);
      if (std::isfinite(ft) && gt.allFinite() &&
          ft <= out.value + 1e-4 * g.dot(trial - out.x)) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    const Vector move = trial - out.x;
    const Vector y = gt - g;
    const double sy = move.dot(y);
    if (move.squaredNorm() == 0.0) break;
    t = sy > 0.0 ? move.squaredNorm() / sy : 2.0 * t;
    out.x = trial;
    out.value = ft;
    g = gt;
  }
  ledger.set_phase(saved_phase);
  return out;
}

}  // namespace bistro
