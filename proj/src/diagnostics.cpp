#include "bistro/diagnostics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace bistro {

namespace {

constexpr double kHessianStep = 1e-4;
constexpr double kAuditStep = 1e-6;

Vector central_gradient(const RiskFn& f, const DesignPoint& x, double rel_step) {
  Vector g(x.size());
  DesignPoint xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = rel_step * (1.0 + std::abs(x(i)));
    xp(i) = x(i) + h;
    const double fp = f(xp);
    xp(i) = x(i) - h;
    const double fm = f(xp);
    xp(i) = x(i);
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

ConvexityEstimate extreme_eigenvalues(const std::function<Matrix(const DesignPoint&)>& hess,
                                      const BoxBounds& box, long samples,
                                      const RngStream& stream) {
  if (samples < 1) throw std::invalid_argument("convexity: need at least one sample point");
  if (box.lower.size() != box.upper.size() || (box.upper - box.lower).minCoeff() < 0.0)
    throw std::invalid_argument("convexity: malformed box");
  RngStream s = stream;
  ConvexityEstimate out{std::numeric_limits<double>::infinity(),
                        -std::numeric_limits<double>::infinity()};
  for (long j = 0; j < samples; ++j) {
    DesignPoint x = 0.5 * (box.lower + box.upper);
    if (j > 0)
      for (Eigen::Index i = 0; i < x.size(); ++i)
        x(i) = box.lower(i) + s.next_uniform() * (box.upper(i) - box.lower(i));
    const Matrix H = hess(x);
    if (!H.allFinite()) throw std::runtime_error("convexity: non-finite Hessian entry");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(H, Eigen::EigenvaluesOnly);
    out.c = std::min(out.c, eig.eigenvalues().minCoeff());
    out.L = std::max(out.L, eig.eigenvalues().maxCoeff());
  }
  return out;
}

}  // namespace

NoiseFit estimate_noise_bounds(const BiFidelityProblem& problem,
                               NoiseEstimator estimator, const SampleSizes& sizes,
                               const std::vector<DesignPoint>& probe_points,
                               long replicates, const RngStream& stream) {
  if (probe_points.size() < 5)
    throw std::invalid_argument("noise bounds: need at least 5 probe points");
  if (replicates < 2) throw std::invalid_argument("noise bounds: need at least 2 replicates");
  if (estimator == NoiseEstimator::mlmc) sizes.validate();

  CostLedger scratch(std::numeric_limits<double>::max(), problem.costs);
  NoiseFit fit;
  const double R = static_cast<double>(replicates);
  for (std::size_t p = 0; p < probe_points.size(); ++p) {
    const DesignPoint& x = probe_points[p];
    const RngStream probe_stream = stream.substream(p);
    Matrix grads(problem.dim_x, replicates);
    for (long r = 0; r < replicates; ++r) {
      const RngStream rs = probe_stream.substream(static_cast<std::uint64_t>(r));
      RngStream sn = rs.substream(0);
      const SampleBatch bn = draw(sn, sizes.n, problem.dim_xi, problem.xi_distribution);
      if (estimator == NoiseEstimator::high) {
        grads.col(r) = estimate_gradient(problem, Fidelity::high, x, bn, scratch).vector;
      } else {
        RngStream sm = rs.substream(1);
        const SampleBatch bm = draw(sm, sizes.m, problem.dim_xi, problem.xi_distribution);
        grads.col(r) = mlmc_gradient(problem, x, bn, bm, scratch).vector;
      }
    }
    const Vector mean = grads.rowwise().mean();
    const Eigen::ArrayXd q = (grads.colwise() - mean).colwise().squaredNorm().transpose().array();
    const double q_mean = q.mean();
    const double q_sd = std::sqrt((q - q_mean).square().sum() / (R - 1.0));

    NoiseProbe probe;
    probe.x = x;
    probe.trace_var = q_mean * R / (R - 1.0);
    probe.trace_var_se = q_sd / std::sqrt(R) * R / (R - 1.0);
    const Vector ref = problem.reference && problem.reference->true_risk
                           ? central_gradient(problem.reference->true_risk, x, kHessianStep)
                           : mean;
    probe.grad_norm_sq = ref.squaredNorm();
    fit.probes.push_back(std::move(probe));
  }

  std::set<double> distinct;
  for (const auto& p : fit.probes) distinct.insert(p.grad_norm_sq);
  if (distinct.size() < 2)
    throw std::invalid_argument("noise bounds: degenerate fit, fewer than 2 distinct gradient norms");

  const auto n = static_cast<double>(fit.probes.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& p : fit.probes) {
    sx += p.grad_norm_sq;
    sy += p.trace_var;
    sxx += p.grad_norm_sq * p.grad_norm_sq;
    sxy += p.grad_norm_sq * p.trace_var;
  }
  fit.raw_slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  fit.raw_intercept = (sy - fit.raw_slope * sx) / n;

  double slope = std::max(0.0, fit.raw_slope);
  double intercept = slope > 0.0 ? fit.raw_intercept : -std::numeric_limits<double>::infinity();
  for (const auto& p : fit.probes)
    intercept = std::max(intercept, p.trace_var - slope * p.grad_norm_sq);
  fit.slope = slope;
  fit.intercept = std::max(0.0, intercept);
  return fit;
}

Matrix fd_hessian(const RiskFn& risk, const DesignPoint& x) {
  const Eigen::Index d = x.size();
  Vector h(d);
  for (Eigen::Index i = 0; i < d; ++i) h(i) = kHessianStep * (1.0 + std::abs(x(i)));
  Matrix H(d, d);
  const double f0 = risk(x);
  DesignPoint y = x;
  for (Eigen::Index i = 0; i < d; ++i) {
    y(i) = x(i) + h(i);
    const double fp = risk(y);
    y(i) = x(i) - h(i);
    const double fm = risk(y);
    y(i) = x(i);
    H(i, i) = (fp - 2.0 * f0 + fm) / (h(i) * h(i));
    for (Eigen::Index j = 0; j < i; ++j) {
      auto at = [&](double si, double sj) {
        y(i) = x(i) + si * h(i);
        y(j) = x(j) + sj * h(j);
        const double v = risk(y);
        y(i) = x(i);
        y(j) = x(j);
        return v;
      };
      H(i, j) = H(j, i) =
          (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h(i) * h(j));
    }
  }
  return H;
}

Matrix fd_hessian(const RiskGradientFn& gradient, const DesignPoint& x) {
  const Eigen::Index d = x.size();
  Matrix H(d, d);
  DesignPoint y = x;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double h = kHessianStep * (1.0 + std::abs(x(i)));
    y(i) = x(i) + h;
    const Vector gp = gradient(y);
    y(i) = x(i) - h;
    const Vector gm = gradient(y);
    y(i) = x(i);
    H.col(i) = (gp - gm) / (2.0 * h);
  }
  return 0.5 * (H + H.transpose());
}

ConvexityEstimate estimate_convexity_constants(const RiskFn& risk, const BoxBounds& box,
                                               long samples, const RngStream& stream) {
  return extreme_eigenvalues([&](const DesignPoint& x) { return fd_hessian(risk, x); },
                             box, samples, stream);
}

ConvexityEstimate estimate_convexity_constants(const RiskGradientFn& gradient,
                                               const BoxBounds& box, long samples,
                                               const RngStream& stream) {
  return extreme_eigenvalues([&](const DesignPoint& x) { return fd_hessian(gradient, x); },
                             box, samples, stream);
}

void validate(const RegularityConstants& k) {
  if (!(k.c_H > 0.0)) throw std::invalid_argument("constants: c_H must be > 0");
  if (!(k.L_H >= k.c_H)) throw std::invalid_argument("constants: need L_H >= c_H");
  if (k.c_L > 0.0 && !(k.L_L >= k.c_L))
    throw std::invalid_argument("constants: need L_L >= c_L");
  if (!(k.W >= 0.0 && k.W_V >= 0.0 && k.W_ML >= 0.0 && k.W_V_ml >= 0.0))
    throw std::invalid_argument("constants: noise bounds must be >= 0");
}

BoundCurve convergence_bound(const RegularityConstants& k, double initial_gap) {
  validate(k);
  if (!(initial_gap >= 0.0)) throw std::invalid_argument("convergence bound: gap must be >= 0");
  const double g = 2.0 * k.L_H * (k.W_V_ml + 1.0) / k.c_H;
  BoundCurve b;
  b.nu = std::max(2.0 * k.L_H * k.W_ML / (k.c_H * k.c_H), g * initial_gap);
  b.gamma = g - 1.0;
  return b;
}

bool dominance_check(double cost_sgd_iter, double cost_mlmc_iter, double W, double W_ML) {
  return cost_mlmc_iter * W_ML < cost_sgd_iter * W;
}

double theoretical_switch_gap(const RegularityConstants& k) {
  if (!(k.c_H > 0.0)) throw std::invalid_argument("switch gap: c_H must be > 0");
  return k.W_ML / (k.c_H * (k.W_V_ml + 1.0));
}

double trust_lambda(const RegularityConstants& k) {
  if (!(k.c_L > 0.0 && k.L_L > 0.0 && k.L_H > 0.0 && k.W_V >= 0.0))
    throw std::invalid_argument("trust lambda: constants must be > 0");
  return k.c_L * k.c_L / (k.L_L * k.L_H * (k.W_V + 1.0));
}

GradientAudit gradient_audit(const RiskFn& value, const RiskGradientFn& gradient,
                             const DesignPoint& x) {
  GradientAudit a;
  a.analytic = gradient(x);
  a.finite_difference = central_gradient(value, x, kAuditStep);
  a.relative_error = (a.analytic - a.finite_difference).norm() /
                     std::max(a.finite_difference.norm(), 1.0);
  return a;
}

double sgd_iteration_cost(const CostModel& c, const SampleSizes& s) {
  return static_cast<double>(s.n) * c.high_grad;
}

double mlmc_iteration_cost(const CostModel& c, const SampleSizes& s) {
  return static_cast<double>(s.n) * (c.high_grad + c.low_grad) +
         static_cast<double>(s.m) * c.low_grad;
}

DiagnosticReport diagnose(const BiFidelityProblem& problem,
                          const DiagnosticOptions& opt, const RngStream& stream) {
  DiagnosticReport rep;
  const Eigen::Index d = problem.dim_x;
  if (opt.center.size() == d) {
    rep.center = opt.center;
  } else if (problem.reference && problem.reference->optimum_point) {
    rep.center = *problem.reference->optimum_point;
  } else {
    rep.center = Vector::Zero(d);
  }
  rep.center = problem.project(rep.center);

  rep.probe_points = opt.probe_points;
  if (rep.probe_points.empty()) {
    for (double t : {0.0, 0.25, 0.5, 1.0, 1.5, 2.0})
      rep.probe_points.push_back(
          problem.project(rep.center + t * opt.radius * Vector::Ones(d)));
  }
  const RngStream s_high = stream.substream(0);
  const RngStream s_mlmc = stream.substream(1);
  const RngStream s_hess = stream.substream(2);
  const RngStream s_crn = stream.substream(3);

  rep.high_fit = estimate_noise_bounds(problem, NoiseEstimator::high, opt.sizes,
                                       rep.probe_points, opt.replicates, s_high);
  rep.mlmc_fit = estimate_noise_bounds(problem, NoiseEstimator::mlmc, opt.sizes,
                                       rep.probe_points, opt.replicates, s_mlmc);

  RngStream crn = s_crn;
  const SampleBatch fixed =
      draw(crn, opt.risk_gradient_samples, problem.dim_xi, problem.xi_distribution);
  auto mean_grad = [&](Fidelity f) {
    return [&problem, &fixed, f](const DesignPoint& x) {
      Vector g = Vector::Zero(problem.dim_x);
      for (Eigen::Index i = 0; i < fixed.size(); ++i)
        g += problem.grad(f, x, fixed.draws.row(i).transpose());
      return Vector(g / static_cast<double>(fixed.size()));
    };
  };
  BoxBounds box{rep.center.array() - opt.radius, rep.center.array() + opt.radius};
  if (problem.bounds) {
    box.lower = box.lower.cwiseMax(problem.bounds->lower);
    box.upper = box.upper.cwiseMin(problem.bounds->upper);
  }
  const auto high = estimate_convexity_constants(RiskGradientFn(mean_grad(Fidelity::high)),
                                                 box, opt.hessian_samples, s_hess);
  const auto low = estimate_convexity_constants(RiskGradientFn(mean_grad(Fidelity::low)),
                                                box, opt.hessian_samples, s_hess);

  rep.estimated = {high.L, high.c,
                   low.L,  low.c,
                   rep.high_fit.intercept, rep.high_fit.slope,
                   rep.mlmc_fit.intercept, rep.mlmc_fit.slope,
                   ConstantsSource::estimated};
  rep.declared = problem.declared_constants;

  const RegularityConstants& use = rep.declared ? *rep.declared : rep.estimated;
  rep.cost_sgd_iter = sgd_iteration_cost(problem.costs, opt.sizes);
  rep.cost_mlmc_iter = mlmc_iteration_cost(problem.costs, opt.sizes);
  rep.dominance = dominance_check(rep.cost_sgd_iter, rep.cost_mlmc_iter, use.W, use.W_ML);
  rep.switch_gap = use.c_H > 0.0 ? theoretical_switch_gap(use)
                                 : std::numeric_limits<double>::quiet_NaN();
  rep.lambda = (use.c_L > 0.0 && use.L_L > 0.0 && use.L_H > 0.0)
                   ? trust_lambda(use)
                   : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

}  // namespace bistro
