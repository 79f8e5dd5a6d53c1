#pragma once

#include "bistro/estimators.hpp"

#include <functional>
#include <vector>

namespace bistro {

enum class NoiseEstimator { high, mlmc };

struct NoiseProbe {
  DesignPoint x;
  double grad_norm_sq = 0.0;   // |grad R_H(x)|^2
  double trace_var = 0.0;      // empirical Tr Var of the gradient estimator
  double trace_var_se = 0.0;   // Monte Carlo standard error of trace_var
};

struct NoiseFit {
  double intercept = 0.0;  // W (or W_ML), after envelope inflation and clipping
  double slope = 0.0;      // W_V (or W_V_ml)
  double raw_intercept = 0.0;  // plain least-squares fit
  double raw_slope = 0.0;
  std::vector<NoiseProbe> probes;
};

/// Fits Tr Var[grad estimate] <= W + W_V |grad R_H|^2 as an upper envelope
/// over the probe points: least squares first, then the intercept is raised
/// until every probe is covered, and both coefficients are clipped at 0.
/// The reference gradient is a central difference of reference.true_risk when
/// the problem has one, otherwise the replicate mean.
NoiseFit estimate_noise_bounds(const BiFidelityProblem& problem,
                               NoiseEstimator estimator, const SampleSizes& sizes,
                               const std::vector<DesignPoint>& probe_points,
                               long replicates, const RngStream& stream);

struct ConvexityEstimate {
  double c = 0.0;  // smallest Hessian eigenvalue seen
  double L = 0.0;  // largest
};

using RiskFn = std::function<double(const DesignPoint&)>;
using RiskGradientFn = std::function<Vector(const DesignPoint&)>;

// Central-difference Hessians with h_i = 1e-4 (1 + |x_i|).
Matrix fd_hessian(const RiskFn& risk, const DesignPoint& x);
Matrix fd_hessian(const RiskGradientFn& gradient, const DesignPoint& x);

/// Extreme eigenvalues of finite-difference Hessians at `samples` points
/// drawn uniformly from the box (the box center is always included).
/// Differencing a gradient is far more accurate than second differences of
/// values; prefer that overload when a gradient is available.
ConvexityEstimate estimate_convexity_constants(const RiskFn& risk, const BoxBounds& box,
                                               long samples, const RngStream& stream);
ConvexityEstimate estimate_convexity_constants(const RiskGradientFn& gradient,
                                               const BoxBounds& box, long samples,
                                               const RngStream& stream);

struct BoundCurve {
  double nu = 0.0;
  double gamma = 0.0;

  double value(double k) const { return nu / (gamma + k); }
};

/// nu = max{2 L_H W_ML / c_H^2, 2 L_H (W_V_ml + 1) / c_H * gap},
/// gamma = 2 L_H (W_V_ml + 1) / c_H - 1.
BoundCurve convergence_bound(const RegularityConstants& constants, double initial_gap);

/// C_ML * W_ML < C * W.
bool dominance_check(double cost_sgd_iter, double cost_mlmc_iter, double W, double W_ML);

/// W_ML / (c_H (W_V_ml + 1)).
double theoretical_switch_gap(const RegularityConstants& constants);

/// c_L^2 / (L_L L_H (W_V + 1)).
double trust_lambda(const RegularityConstants& constants);

void validate(const RegularityConstants& constants);

struct GradientAudit {
  Vector analytic;
  Vector finite_difference;
  double relative_error = 0.0;  // |analytic - fd| / max(|fd|, 1)
};

// Central differences with h_i = 1e-6 (1 + |x_i|).
GradientAudit gradient_audit(const RiskFn& value, const RiskGradientFn& gradient,
                             const DesignPoint& x);

/// Per-iteration cost of one gradient estimate.
double sgd_iteration_cost(const CostModel& costs, const SampleSizes& sizes);
double mlmc_iteration_cost(const CostModel& costs, const SampleSizes& sizes);

struct DiagnosticOptions {
  SampleSizes sizes{};
  long replicates = 20000;
  std::vector<DesignPoint> probe_points;  // empty: derived from center/radius
  DesignPoint center;                     // empty: optimum point, else zero
  double radius = 1.0;
  long hessian_samples = 5;
  long risk_gradient_samples = 64;
};

struct DiagnosticReport {
  RegularityConstants estimated;
  std::optional<RegularityConstants> declared;
  NoiseFit high_fit;
  NoiseFit mlmc_fit;
  double cost_sgd_iter = 0.0;
  double cost_mlmc_iter = 0.0;
  bool dominance = false;
  double switch_gap = 0.0;
  double lambda = 0.0;
  std::vector<DesignPoint> probe_points;
  DesignPoint center;
};

/// Estimates all regularity constants of a problem and evaluates the derived
/// quantities from them. Convexity constants come from differencing the
/// sample-mean gradient over a fixed batch (common random numbers).
DiagnosticReport diagnose(const BiFidelityProblem& problem,
                          const DiagnosticOptions& options, const RngStream& stream);

}  // namespace bistro
