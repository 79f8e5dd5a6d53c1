#pragma once

#include "bistro/problem.hpp"

namespace bistro {

// Per-iteration sample sizes: N high-fidelity samples, M > N low-fidelity
// samples for the MLMC correction, K low-fidelity samples per surrogate.
struct SampleSizes {
  Eigen::Index n = 1;
  Eigen::Index m = 10;
  Eigen::Index k = 10;

  void validate() const;
};

struct RiskEstimate {
  double value = 0.0;
  Eigen::Index n_samples = 0;
  Fidelity fidelity = Fidelity::high;
  StreamTag batch_tag;
};

struct GradientEstimate {
  Vector vector;
  Eigen::Index n_samples = 0;
  Fidelity fidelity = Fidelity::high;
  StreamTag batch_tag;
};

// Sample means of J_fid(x, xi_i) and grad_x J_fid(x, xi_i) over `batch`.
// Each call bills batch.size() evaluations (or gradients) at the fidelity.
RiskEstimate estimate_risk(const BiFidelityProblem& problem, Fidelity fidelity,
                           const DesignPoint& x, const SampleBatch& batch,
                           CostLedger& ledger);
GradientEstimate estimate_gradient(const BiFidelityProblem& problem,
                                   Fidelity fidelity, const DesignPoint& x,
                                   const SampleBatch& batch, CostLedger& ledger);

/// R_H^N(x) - (R_L^N(x) - R_L^M(x)). The low-fidelity N-sample term reuses
/// the rows of batch_n; batch_m must be larger and drawn on another stream.
RiskEstimate mlmc_risk(const BiFidelityProblem& problem, const DesignPoint& x,
                       const SampleBatch& batch_n, const SampleBatch& batch_m,
                       CostLedger& ledger);
GradientEstimate mlmc_gradient(const BiFidelityProblem& problem,
                               const DesignPoint& x, const SampleBatch& batch_n,
                               const SampleBatch& batch_m, CostLedger& ledger);

// Same combination from already-computed pieces, no billing.
RiskEstimate combine_mlmc(const RiskEstimate& high_n, const RiskEstimate& low_n,
                          const RiskEstimate& low_m);
GradientEstimate combine_mlmc(const GradientEstimate& high_n,
                              const GradientEstimate& low_n,
                              const GradientEstimate& low_m);

/// Low-fidelity risk estimate shifted so that its value and gradient match
/// the high-fidelity estimates at the anchor:
///
///   R_C(x) = R_L^K(x) + (R_H^N(x0) - R_L^K(x0))
///            + (grad R_H^N(x0) - grad R_L^K(x0))^T (x - x0)
///
/// The K-sample batch is frozen, so R_C is a deterministic function.
struct CorrectedSurrogate {
  DesignPoint anchor;
  double high_value_at_anchor = 0.0;
  Vector high_grad_at_anchor;
  double low_value_at_anchor = 0.0;
  Vector low_grad_at_anchor;
  SampleBatch low_batch;
};

struct SurrogateValue {
  double value;
  Vector gradient;
};

/// Bills N high evals + N high grads and K low evals + K low grads.
/// batch_n and batch_k must come from distinct streams unless
/// `allow_aliased_batches` is set.
CorrectedSurrogate build_corrected_surrogate(const BiFidelityProblem& problem,
                                             const DesignPoint& anchor,
                                             const SampleBatch& batch_n,
                                             const SampleBatch& batch_k,
                                             CostLedger& ledger,
                                             bool allow_aliased_batches = false);

// From estimates already formed at the anchor, no billing.
CorrectedSurrogate make_corrected_surrogate(const DesignPoint& anchor,
                                            const RiskEstimate& high_value,
                                            const GradientEstimate& high_grad,
                                            const RiskEstimate& low_value,
                                            const GradientEstimate& low_grad,
                                            SampleBatch low_batch);

/// Value and gradient of the surrogate at x; bills K low evals + K low grads.
SurrogateValue query_surrogate(const CorrectedSurrogate& s,
                               const BiFidelityProblem& problem,
                               const DesignPoint& x, CostLedger& ledger);

}  // namespace bistro
