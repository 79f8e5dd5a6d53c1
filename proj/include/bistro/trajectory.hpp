#pragma once

#include "bistro/problem.hpp"

#include <unsupported/Eigen/AutoDiff>

#include <cmath>
#include <functional>
#include <memory>

namespace bistro::trajectory {

// Forward-mode dual number used to differentiate the integrator with respect
// to the spline node values. Storage is inline up to kMaxDesignDim.
inline constexpr int kMaxDesignDim = 64;
using DualDerivative =
    Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDesignDim, 1>;
using Dual = Eigen::AutoDiffScalar<DualDerivative>;

template <typename Scalar>
using RhsFn = std::function<VectorX<Scalar>(
    double t, const VectorX<Scalar>& state, const VectorX<Scalar>& control,
    const Vector& params)>;

/// Pluggable ODE right-hand side  d(state)/dt = f(t, state, control; params).
///
/// Uncertain parameters are perturbed multiplicatively,
/// params_i = nominal_i * (1 + relative_stddev_i * xi_j) with xi_j ~ N(0, 1),
/// one xi entry per parameter whose relative_stddev is nonzero.
///
/// The terminal output compared against `target` is
/// output_scale .* state[output_indices].
struct DynamicsSpec {
  std::string name;
  Eigen::Index state_dim = 0;
  Eigen::Index n_controls = 0;
  Vector initial_state;
  Vector nominal_params;
  Vector relative_stddev;
  RhsFn<double> rhs;
  RhsFn<Dual> rhs_dual;
  Eigen::VectorXi output_indices;
  Vector output_scale;
  Vector target;
  // Per control signal.
  Vector control_lower;
  Vector control_upper;
  Vector initial_controls;

  Eigen::Index uncertain_count() const;
  Vector perturbed_params(XiRef xi) const;
  void validate() const;
};

/// Installs both the double and the dual instantiation of a generic
/// right-hand side, e.g. `[](double t, const auto& s, const auto& u,
/// const Vector& p) { ... }`.
template <typename F>
void set_rhs(DynamicsSpec& spec, F f) {
  spec.rhs = [f](double t, const Vector& s, const Vector& u,
                 const Vector& p) -> Vector { return f(t, s, u, p); };
  spec.rhs_dual = [f](double t, const VectorX<Dual>& s, const VectorX<Dual>& u,
                      const Vector& p) -> VectorX<Dual> { return f(t, s, u, p); };
}

/// Classical fourth-order Runge-Kutta over `steps` steps of size dt.
/// `control_at(k)` returns the control at time k*dt/2.
template <typename Scalar, typename Rhs, typename ControlAt>
VectorX<Scalar> rk4_integrate(const Rhs& rhs, VectorX<Scalar> state, double dt,
                              long steps, const ControlAt& control_at,
                              const Vector& params) {
  const double half = 0.5 * dt;
  for (long i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) * dt;
    const VectorX<Scalar> u0 = control_at(2 * i);
    const VectorX<Scalar> um = control_at(2 * i + 1);
    const VectorX<Scalar> u1 = control_at(2 * i + 2);
    const VectorX<Scalar> k1 = rhs(t, state, u0, params);
    const VectorX<Scalar> k2 = rhs(t + half, VectorX<Scalar>(state + half * k1), um, params);
    const VectorX<Scalar> k3 = rhs(t + half, VectorX<Scalar>(state + half * k2), um, params);
    const VectorX<Scalar> k4 = rhs(t + dt, VectorX<Scalar>(state + dt * k3), u1, params);
    state += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return state;
}

/// Weights w(i, j) such that the natural cubic spline through equally spaced
/// node values y_j on [0, horizon] evaluates to sum_j w(i, j) y_j at times[i].
Matrix natural_spline_basis(Eigen::Index nodes, double horizon,
                            const Vector& times);

/// Number of steps of size dt covering horizon; throws when dt does not
/// divide horizon to within 1e-9 relative.
long step_count(double horizon, double dt);

struct TrajectoryOptions {
  Eigen::Index nodes_per_signal = 10;
  double horizon = 2000.0;
  double dt_high = 0.2;
  double dt_low = 20.0;
  // Weight on sum_j (node_{j+1} - node_j)^2 / node_spacing, per signal.
  double penalty_weight = 1.0;
  Eigen::Index reference_samples = 100;
  std::uint64_t reference_seed = 20240611;
  // Seconds per call; defaults are the reported shuttle timings.
  CostModel costs{1.70e-2, 3.46e-4, 8.56e-1, 9.55e-3};
};

/// Terminal state of the shot trajectory for a flat design vector
/// (signal-major node values) and fixed parameters.
Vector simulate_terminal_state(const DynamicsSpec& spec,
                               const TrajectoryOptions& options,
                               const DesignPoint& nodes, const Vector& params,
                               double dt);

/// Both fidelities integrate `dynamics` with RK4, at dt_high and dt_low.
/// Gradients are exact derivatives of the discrete integrator (forward-mode
/// automatic differentiation). Non-finite trajectories evaluate to +inf.
BiFidelityProblem make_trajectory(DynamicsSpec dynamics,
                                  const TrajectoryOptions& options);

// x' = -a x + gain * u(t); a is the single uncertain parameter.
DynamicsSpec linear_decay_dynamics(double x0, double a, double relative_stddev,
                                   double control_gain = 0.0);

/// Planar lifting glider on a sphere: state (longitude, latitude, speed,
/// heading), controls (angle of attack, bank angle) in degrees, uncertain
/// lift and drag coefficients. A stand-in for full reentry dynamics with the
/// same interface; terminal output is (longitude, latitude) in degrees.
DynamicsSpec glider_dynamics(double relative_stddev = 0.1);

}  // namespace bistro::trajectory
