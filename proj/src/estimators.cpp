#include "bistro/estimators.hpp"

#include <cmath>
#include <string>

namespace bistro {

namespace {

void check_batch(const BiFidelityProblem& problem, const SampleBatch& batch) {
  if (batch.size() < 1)
    throw std::invalid_argument("estimator: empty sample batch");
  if (batch.dim() != problem.dim_xi)
    throw std::invalid_argument("estimator: batch dimension " +
                                std::to_string(batch.dim()) +
                                " does not match dim_xi " +
                                std::to_string(problem.dim_xi));
}

bool same_stream(const StreamTag& a, const StreamTag& b) {
  return a.seed == b.seed && a.stream_id == b.stream_id;
}

void check_mlmc_batches(const SampleBatch& batch_n, const SampleBatch& batch_m) {
  if (batch_m.size() <= batch_n.size())
    throw std::invalid_argument("mlmc: need |batch_M| > |batch_N|");
  if (same_stream(batch_n.stream_tag, batch_m.stream_tag))
    throw std::invalid_argument("mlmc: batch_M must be drawn on a stream distinct from batch_N");
}

double mean_value(const BiFidelityProblem& problem, Fidelity fidelity,
                  const DesignPoint& x, const SampleBatch& batch) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < batch.size(); ++i)
    acc += problem.eval(fidelity, x, batch.draws.row(i).transpose());
  const double v = acc / static_cast<double>(batch.size());
  if (!std::isfinite(v))
    throw EstimationError("non-finite " + std::string(to_string(fidelity)) +
                          "-fidelity risk estimate");
  return v;
}

Vector mean_gradient(const BiFidelityProblem& problem, Fidelity fidelity,
                     const DesignPoint& x, const SampleBatch& batch) {
  Vector acc = Vector::Zero(problem.dim_x);
  for (Eigen::Index i = 0; i < batch.size(); ++i)
    acc += problem.grad(fidelity, x, batch.draws.row(i).transpose());
  acc /= static_cast<double>(batch.size());
  if (!acc.allFinite())
    throw EstimationError("non-finite " + std::string(to_string(fidelity)) +
                          "-fidelity gradient estimate");
  return acc;
}

}  // namespace

void SampleSizes::validate() const {
  if (n < 1 || k < 1) throw std::invalid_argument("sample sizes: need N, K >= 1");
  if (m <= n) throw std::invalid_argument("sample sizes: need M > N");
}

RiskEstimate estimate_risk(const BiFidelityProblem& problem, Fidelity fidelity,
                           const DesignPoint& x, const SampleBatch& batch,
                           CostLedger& ledger) {
  check_batch(problem, batch);
  ledger.charge(fidelity, EvalKind::eval, static_cast<long>(batch.size()));
  return {mean_value(problem, fidelity, x, batch), batch.size(), fidelity,
          batch.stream_tag};
}

GradientEstimate estimate_gradient(const BiFidelityProblem& problem,
                                   Fidelity fidelity, const DesignPoint& x,
                                   const SampleBatch& batch, CostLedger& ledger) {
  check_batch(problem, batch);
  ledger.charge(fidelity, EvalKind::grad, static_cast<long>(batch.size()));
  return {mean_gradient(problem, fidelity, x, batch), batch.size(), fidelity,
          batch.stream_tag};
}

// (H^N - L^N) + L^M: the paired difference is formed first so identical
// fidelities cancel exactly.
RiskEstimate combine_mlmc(const RiskEstimate& high_n, const RiskEstimate& low_n,
                          const RiskEstimate& low_m) {
  return {(high_n.value - low_n.value) + low_m.value, high_n.n_samples,
          Fidelity::mlmc, high_n.batch_tag};
}

GradientEstimate combine_mlmc(const GradientEstimate& high_n,
                              const GradientEstimate& low_n,
                              const GradientEstimate& low_m) {
  return {(high_n.vector - low_n.vector) + low_m.vector, high_n.n_samples,
          Fidelity::mlmc, high_n.batch_tag};
}

RiskEstimate mlmc_risk(const BiFidelityProblem& problem, const DesignPoint& x,
                       const SampleBatch& batch_n, const SampleBatch& batch_m,
                       CostLedger& ledger) {
  check_mlmc_batches(batch_n, batch_m);
  const RiskEstimate high_n = estimate_risk(problem, Fidelity::high, x, batch_n, ledger);
  const RiskEstimate low_n = estimate_risk(problem, Fidelity::low, x, batch_n, ledger);
  const RiskEstimate low_m = estimate_risk(problem, Fidelity::low, x, batch_m, ledger);
  return combine_mlmc(high_n, low_n, low_m);
}

GradientEstimate mlmc_gradient(const BiFidelityProblem& problem,
                               const DesignPoint& x, const SampleBatch& batch_n,
                               const SampleBatch& batch_m, CostLedger& ledger) {
  check_mlmc_batches(batch_n, batch_m);
  const GradientEstimate high_n =
      estimate_gradient(problem, Fidelity::high, x, batch_n, ledger);
  const GradientEstimate low_n =
      estimate_gradient(problem, Fidelity::low, x, batch_n, ledger);
  const GradientEstimate low_m =
      estimate_gradient(problem, Fidelity::low, x, batch_m, ledger);
  return combine_mlmc(high_n, low_n, low_m);
}

CorrectedSurrogate make_corrected_surrogate(const DesignPoint& anchor,
                                            const RiskEstimate& high_value,
                                            const GradientEstimate& high_grad,
                                            const RiskEstimate& low_value,
                                            const GradientEstimate& low_grad,
                                            SampleBatch low_batch) {
  return {anchor,          high_value.value, high_grad.vector,
          low_value.value, low_grad.vector,  std::move(low_batch)};
}

CorrectedSurrogate build_corrected_surrogate(const BiFidelityProblem& problem,
                                             const DesignPoint& anchor,
                                             const SampleBatch& batch_n,
                                             const SampleBatch& batch_k,
                                             CostLedger& ledger,
                                             bool allow_aliased_batches) {
  if (!allow_aliased_batches && same_stream(batch_n.stream_tag, batch_k.stream_tag))
    throw std::invalid_argument(
        "surrogate: batch_K must be independent of batch_N (or aliasing enabled)");
  const auto hv = estimate_risk(problem, Fidelity::high, anchor, batch_n, ledger);
  const auto hg = estimate_gradient(problem, Fidelity::high, anchor, batch_n, ledger);
  const auto lv = estimate_risk(problem, Fidelity::low, anchor, batch_k, ledger);
  const auto lg = estimate_gradient(problem, Fidelity::low, anchor, batch_k, ledger);
  return make_corrected_surrogate(anchor, hv, hg, lv, lg, batch_k);
}

SurrogateValue query_surrogate(const CorrectedSurrogate& s,
                               const BiFidelityProblem& problem,
                               const DesignPoint& x, CostLedger& ledger) {
  if (!x.allFinite()) throw EstimationError("surrogate queried at non-finite x");
  const double low = estimate_risk(problem, Fidelity::low, x, s.low_batch, ledger).value;
  const Vector low_grad =
      estimate_gradient(problem, Fidelity::low, x, s.low_batch, ledger).vector;
  const Vector shift = s.high_grad_at_anchor - s.low_grad_at_anchor;
  // Grouped so the low-fidelity differences vanish exactly at the anchor.
  SurrogateValue out;
  out.value = s.high_value_at_anchor + (low - s.low_value_at_anchor) +
              shift.dot(x - s.anchor);
  out.gradient = s.high_grad_at_anchor + (low_grad - s.low_grad_at_anchor);
  return out;
}

}  // namespace bistro
