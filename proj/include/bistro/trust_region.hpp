#pragma once

#include "bistro/estimators.hpp"

#include <optional>
#include <string>
#include <vector>

namespace bistro {

struct TrustRegionConfig {
  double delta = 1.0;   // fixed Euclidean radius for the whole run
  double lambda = 1.0;  // damping of the accepted step
  int subsolver_max_iters = 500;
  double subsolver_grad_tol = 1e-8;
  // Backtracking gives up (as converged) once a trial move is shorter than
  // this, relative to 1 + |s|; below it the surrogate differences are noise.
  double subsolver_step_tol = 1e-10;
  // Reuse the N-sample rows as the K-sample surrogate batch.
  bool alias_surrogate_batch = false;

  void validate() const;
};

struct SubproblemReport {
  int iterations = 0;
  long surrogate_queries = 0;
  long low_evaluations = 0;
  double value_at_center = 0.0;
  double value_at_step = 0.0;
  double projected_grad_norm = 0.0;
  bool converged = false;
  bool fell_back = false;
  std::vector<std::string> warnings;
};

struct SubproblemSolution {
  Vector step;
  SubproblemReport report;
};

/// min_{|s| <= delta} R_C(center + s) by projected gradient descent with
/// Barzilai-Borwein trial steps and Armijo backtracking; the projection is the
/// radial clip onto the ball. The returned step never increases the surrogate.
/// Non-finite surrogate values fall back to s = 0 with a warning.
SubproblemSolution solve_subproblem(const CorrectedSurrogate& surrogate,
                                    const BiFidelityProblem& problem,
                                    const DesignPoint& center,
                                    const TrustRegionConfig& cfg,
                                    CostLedger& ledger);

template <typename Derived>
Vector clip_to_ball(const Eigen::MatrixBase<Derived>& s, double radius) {
  const double n = s.norm();
  if (n <= radius) return s;
  return s * (radius / n);
}

/// Fresh estimators at one iterate: R_H^N, grad R_H^N and R_L^N on the
/// N batch, R_L^K, grad R_L^K on the K batch and R_L^M on the M batch,
/// combined into the MLMC risk estimate.
struct IterateEstimates {
  DesignPoint x;
  SampleBatch batch_n;
  SampleBatch batch_k;
  RiskEstimate high_value;
  GradientEstimate high_grad;
  RiskEstimate low_value_k;
  GradientEstimate low_grad_k;
  std::optional<RiskEstimate> mlmc_value;
};

/// Batch streams are substreams 0 (N), 1 (K) and 2 (M) of `stream`.
IterateEstimates draw_iterate_estimates(const BiFidelityProblem& problem,
                                        const DesignPoint& x,
                                        const SampleSizes& sizes,
                                        const RngStream& stream,
                                        CostLedger& ledger,
                                        bool alias_surrogate_batch = false,
                                        bool with_mlmc = true);

struct TrustStepDiagnostics {
  Vector step;  // s_k before damping
  CorrectedSurrogate surrogate;
  SubproblemReport report;
};

struct TrustStepResult {
  DesignPoint x_next;
  TrustStepDiagnostics diagnostics;
};

// Surrogate anchored at `anchor.x`, sub-problem solve, and
// x_next = project(x + lambda * s).
TrustStepResult trust_step_from(const BiFidelityProblem& problem,
                                const IterateEstimates& anchor,
                                const TrustRegionConfig& cfg, CostLedger& ledger);

/// One trust-phase iteration with fresh batches drawn from `stream`.
TrustStepResult trust_step(const BiFidelityProblem& problem,
                           const DesignPoint& x_k, const TrustRegionConfig& cfg,
                           const SampleSizes& sizes, const RngStream& stream,
                           CostLedger& ledger);

}  // namespace bistro
