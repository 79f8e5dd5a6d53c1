#pragma once

#include "bistro/constants.hpp"
#include "bistro/core.hpp"
#include "bistro/stochastics.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace bistro {

// One realization of xi, typically a row of SampleBatch::draws.
using XiRef = Eigen::Ref<const Vector>;

using ValueFn = std::function<double(const DesignPoint&, XiRef)>;
using GradientFn = std::function<Vector(const DesignPoint&, XiRef)>;

struct CostModel {
  double high_eval = 1.0;
  double low_eval = 0.1;
  double high_grad = 1.0;
  double low_grad = 0.1;

  double cost(Fidelity fidelity, EvalKind kind) const;
  void validate() const;
};

struct ReferenceInfo {
  // R_H(x); analytic where available, otherwise a fixed-sample reference
  // estimate that is never billed.
  std::function<double(const DesignPoint&)> true_risk;
  std::optional<double> optimum_value;
  std::optional<DesignPoint> optimum_point;
};

struct BoxBounds {
  Vector lower;
  Vector upper;

  DesignPoint clip(const DesignPoint& x) const {
    return x.cwiseMax(lower).cwiseMin(upper);
  }
};

/// Paired high/low fidelity random objectives J_H(x, xi), J_L(x, xi) with
/// gradients in x, the distribution of xi and per-evaluation costs.
/// Immutable after construction and safe to share between threads.
struct BiFidelityProblem {
  std::string name;
  Eigen::Index dim_x = 0;
  Eigen::Index dim_xi = 0;
  ValueFn eval_high;
  ValueFn eval_low;
  GradientFn grad_high;
  GradientFn grad_low;
  Distribution xi_distribution;
  CostModel costs;
  std::optional<ReferenceInfo> reference;
  std::optional<BoxBounds> bounds;
  std::optional<RegularityConstants> declared_constants;
  // Suggested x0 when a run does not specify one.
  std::optional<DesignPoint> default_start;
  // Construction parameters and defaults, surfaced in run manifests.
  std::map<std::string, double> parameters;

  double eval(Fidelity fidelity, const DesignPoint& x, XiRef xi) const;
  Vector grad(Fidelity fidelity, const DesignPoint& x, XiRef xi) const;
  DesignPoint project(const DesignPoint& x) const {
    return bounds ? bounds->clip(x) : x;
  }
};

struct LedgerEvent {
  Phase phase;
  Fidelity fidelity;
  EvalKind kind;
  long count;
  double cost;
};

/// Running account of fidelity-weighted cost against a budget. Overspend
/// is allowed for the iteration in flight; loops test `exhausted()` before
/// starting the next one.
class CostLedger {
 public:
  CostLedger(double budget, CostModel costs);

  void charge(Fidelity fidelity, EvalKind kind, long count);

  double spent() const { return spent_; }
  double budget() const { return budget_; }
  double remaining() const { return budget_ - spent_; }
  bool exhausted() const { return spent_ >= budget_; }

  Phase phase() const { return phase_; }
  void set_phase(Phase phase) { phase_ = phase; }

  const CostModel& costs() const { return costs_; }
  const std::vector<LedgerEvent>& events() const { return events_; }

 private:
  double budget_;
  double spent_ = 0.0;
  CostModel costs_;
  Phase phase_ = Phase::setup;
  std::vector<LedgerEvent> events_;
};

void charge(CostLedger& ledger, Fidelity fidelity, EvalKind kind, long count);

// J_H = sum x_i^2 + x_i xi_i, J_L = sum (x_i/1.05 + 1)^2 + (x_i/1.05 + 1) xi_i,
// xi_i ~ N(0, sigma2).
BiFidelityProblem make_quadratic(Eigen::Index d, double sigma2);

struct ForretalOptions {
  // Forward differences in place of analytic derivatives, billed as
  // (dim + 1) evaluations per gradient.
  bool finite_difference_gradients = true;
  double fd_step = 1e-6;
  double cost_high = 1.0;
  double cost_low = 0.1;
  Eigen::Index oracle_grid_points = 1'000'001;
};

BiFidelityProblem make_forretal(double kappa, const ForretalOptions& options = {});

struct GridMinimum {
  double x;
  double value;
};

/// Brute-force minimum of f over `points` equally spaced nodes of [lo, hi]
/// (both ends included).
GridMinimum grid_search_minimum(const std::function<double(double)>& f,
                                double lo, double hi, Eigen::Index points);

}  // namespace bistro
