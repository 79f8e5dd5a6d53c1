#include "bistro/trust_region.hpp"

#include <cmath>
#include <limits>

namespace bistro {

void TrustRegionConfig::validate() const {
  if (!(delta > 0.0)) throw std::invalid_argument("trust region: delta must be > 0");
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw std::invalid_argument("trust region: lambda must lie in [0, 1]");
  if (subsolver_max_iters < 1 || !(subsolver_grad_tol > 0.0) || !(subsolver_step_tol >= 0.0))
    throw std::invalid_argument("trust region: bad subsolver settings");
}

namespace {

constexpr double kArmijo = 1e-4;
constexpr int kMaxBacktracks = 60;

}  // namespace

SubproblemSolution solve_subproblem(const CorrectedSurrogate& surrogate,
                                    const BiFidelityProblem& problem,
                                    const DesignPoint& center,
                                    const TrustRegionConfig& cfg,
                                    CostLedger& ledger) {
  cfg.validate();
  SubproblemSolution out;
  SubproblemReport& rep = out.report;
  const Eigen::Index d = center.size();
  const long per_query = static_cast<long>(surrogate.low_batch.size());

  auto query = [&](const Vector& s) {
    ++rep.surrogate_queries;
    rep.low_evaluations += per_query;
    return query_surrogate(surrogate, problem, center + s, ledger);
  };
  auto fall_back = [&](const std::string& why) {
    rep.fell_back = true;
    rep.warnings.push_back(why);
    out.step = Vector::Zero(d);
    rep.value_at_step = rep.value_at_center;
    return out;
  };

  // At s = 0 the surrogate equals the stored high-fidelity anchor estimates.
  Vector s = Vector::Zero(d);
  SurrogateValue cur{surrogate.high_value_at_anchor, surrogate.high_grad_at_anchor};
  rep.value_at_center = cur.value;
  if (!std::isfinite(cur.value) || !cur.gradient.allFinite())
    return fall_back("surrogate not finite at center");

  const double gnorm0 = cur.gradient.norm();
  double t = gnorm0 > 0.0 ? std::min(1.0, cfg.delta / gnorm0) : 1.0;

  for (rep.iterations = 0; rep.iterations < cfg.subsolver_max_iters; ++rep.iterations) {
    rep.projected_grad_norm = (s - clip_to_ball(s - cur.gradient, cfg.delta)).norm();
    if (rep.projected_grad_norm < cfg.subsolver_grad_tol) {
      rep.converged = true;
      break;
    }
    bool accepted = false;
    bool too_short = false;
    Vector trial, move;
    SurrogateValue next;
    for (int bt = 0; bt < kMaxBacktracks; ++bt) {
      trial = clip_to_ball(s - t * cur.gradient, cfg.delta);
      move = trial - s;
      if (move.norm() <= cfg.subsolver_step_tol * (1.0 + s.norm())) {
        too_short = true;
        break;
      }
      try {
        next = query(trial);
      } catch (const EstimationError&) {
        t *= 0.5;
        continue;
      }
      if (std::isfinite(next.value) && next.gradient.allFinite() &&
          next.value <= cur.value + kArmijo * cur.gradient.dot(move)) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (too_short) {
      rep.converged = true;
      break;
    }
    if (!accepted) {
      rep.warnings.push_back("line search stalled");
      break;
    }
    const Vector y = next.gradient - cur.gradient;
    const double sy = move.dot(y);
    t = sy > 0.0 ? move.squaredNorm() / sy : 2.0 * t;
    t = std::clamp(t, 1e-12, 1e12);
    s = trial;
    cur = next;
  }

  if (!(cur.value <= rep.value_at_center + 1e-12))
    return fall_back("subsolver ended above the center value");
  out.step = s;
  rep.value_at_step = cur.value;
  return out;
}

IterateEstimates draw_iterate_estimates(const BiFidelityProblem& problem,
                                        const DesignPoint& x,
                                        const SampleSizes& sizes,
                                        const RngStream& stream,
                                        CostLedger& ledger,
                                        bool alias_surrogate_batch,
                                        bool with_mlmc) {
  sizes.validate();
  IterateEstimates e;
  e.x = x;
  RngStream sn = stream.substream(0);
  RngStream sk = stream.substream(1);
  RngStream sm = stream.substream(2);
  e.batch_n = draw(sn, sizes.n, problem.dim_xi, problem.xi_distribution);
  e.batch_k = alias_surrogate_batch
                  ? e.batch_n
                  : draw(sk, sizes.k, problem.dim_xi, problem.xi_distribution);
  e.high_value = estimate_risk(problem, Fidelity::high, x, e.batch_n, ledger);
  e.high_grad = estimate_gradient(problem, Fidelity::high, x, e.batch_n, ledger);
  e.low_value_k = estimate_risk(problem, Fidelity::low, x, e.batch_k, ledger);
  e.low_grad_k = estimate_gradient(problem, Fidelity::low, x, e.batch_k, ledger);
  if (with_mlmc) {
    const SampleBatch batch_m =
        draw(sm, sizes.m, problem.dim_xi, problem.xi_distribution);
    const RiskEstimate low_n =
        estimate_risk(problem, Fidelity::low, x, e.batch_n, ledger);
    const RiskEstimate low_m =
        estimate_risk(problem, Fidelity::low, x, batch_m, ledger);
    e.mlmc_value = combine_mlmc(e.high_value, low_n, low_m);
  }
  return e;
}

TrustStepResult trust_step_from(const BiFidelityProblem& problem,
                                const IterateEstimates& anchor,
                                const TrustRegionConfig& cfg, CostLedger& ledger) {
  TrustStepResult r;
  r.diagnostics.surrogate =
      make_corrected_surrogate(anchor.x, anchor.high_value, anchor.high_grad,
                               anchor.low_value_k, anchor.low_grad_k, anchor.batch_k);
  SubproblemSolution sol =
      solve_subproblem(r.diagnostics.surrogate, problem, anchor.x, cfg, ledger);
  r.diagnostics.step = std::move(sol.step);
  r.diagnostics.report = std::move(sol.report);
  r.x_next = problem.project(anchor.x + cfg.lambda * r.diagnostics.step);
  return r;
}

TrustStepResult trust_step(const BiFidelityProblem& problem,
                           const DesignPoint& x_k, const TrustRegionConfig& cfg,
                           const SampleSizes& sizes, const RngStream& stream,
                           CostLedger& ledger) {
  cfg.validate();
  const IterateEstimates anchor = draw_iterate_estimates(
      problem, x_k, sizes, stream, ledger, cfg.alias_surrogate_batch, false);
  return trust_step_from(problem, anchor, cfg, ledger);
}

}  // namespace bistro
