#include "bistro/trajectory.hpp"

#include <iostream>
#include <limits>
#include <numbers>

namespace bistro::trajectory {

Eigen::Index DynamicsSpec::uncertain_count() const {
  return (relative_stddev.array() != 0.0).count();
}

Vector DynamicsSpec::perturbed_params(XiRef xi) const {
  Vector p = nominal_params;
  Eigen::Index j = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (relative_stddev[i] != 0.0) p[i] *= 1.0 + relative_stddev[i] * xi[j++];
  }
  return p;
}

void DynamicsSpec::validate() const {
  if (state_dim < 1 || n_controls < 1)
    throw std::invalid_argument("DynamicsSpec: need state_dim, n_controls >= 1");
  if (initial_state.size() != state_dim)
    throw std::invalid_argument("DynamicsSpec: initial_state has wrong size");
  if (relative_stddev.size() != nominal_params.size())
    throw std::invalid_argument("DynamicsSpec: relative_stddev size mismatch");
  if (!rhs || !rhs_dual) throw std::invalid_argument("DynamicsSpec: rhs not set");
  if (output_indices.size() != target.size() ||
      output_scale.size() != target.size() || target.size() == 0)
    throw std::invalid_argument("DynamicsSpec: output/target size mismatch");
  if ((output_indices.array() < 0).any() ||
      (output_indices.array() >= state_dim).any())
    throw std::invalid_argument("DynamicsSpec: output index out of range");
  if (control_lower.size() != n_controls || control_upper.size() != n_controls ||
      initial_controls.size() != n_controls)
    throw std::invalid_argument("DynamicsSpec: control bounds size mismatch");
}

Matrix natural_spline_basis(Eigen::Index nodes, double horizon,
                            const Vector& times) {
  if (nodes < 2) throw std::invalid_argument("spline: need at least 2 nodes");
  const Eigen::Index n = nodes - 1;
  const double h = horizon / static_cast<double>(n);
  Matrix basis(times.size(), nodes);

  for (Eigen::Index j = 0; j < nodes; ++j) {
    Vector y = Vector::Zero(nodes);
    y[j] = 1.0;
    // Second derivatives, M_0 = M_n = 0; tridiagonal (1, 4, 1) system for
    // the interior, solved with the Thomas algorithm.
    Vector m = Vector::Zero(nodes);
    if (n >= 2) {
      const Eigen::Index k = n - 1;
      Vector c(k), d(k);
      for (Eigen::Index i = 0; i < k; ++i)
        d[i] = 6.0 / (h * h) * (y[i + 2] - 2.0 * y[i + 1] + y[i]);
      c[0] = 1.0 / 4.0;
      d[0] /= 4.0;
      for (Eigen::Index i = 1; i < k; ++i) {
        const double denom = 4.0 - c[i - 1];
        c[i] = 1.0 / denom;
        d[i] = (d[i] - d[i - 1]) / denom;
      }
      m[k] = d[k - 1];
      for (Eigen::Index i = k - 2; i >= 0; --i) m[i + 1] = d[i] - c[i] * m[i + 2];
    }
    for (Eigen::Index r = 0; r < times.size(); ++r) {
      const double t = std::clamp(times[r], 0.0, horizon);
      Eigen::Index seg = std::min<Eigen::Index>(
          static_cast<Eigen::Index>(t / h), n - 1);
      const double a = (static_cast<double>(seg + 1) * h - t) / h;
      const double b = 1.0 - a;
      basis(r, j) = a * y[seg] + b * y[seg + 1] +
                    ((a * a * a - a) * m[seg] + (b * b * b - b) * m[seg + 1]) *
                        (h * h) / 6.0;
    }
  }
  return basis;
}

long step_count(double horizon, double dt) {
  if (!(dt > 0.0) || !(horizon > 0.0))
    throw std::invalid_argument("step_count: horizon and dt must be > 0");
  const double ratio = horizon / dt;
  const long steps = std::lround(ratio);
  if (steps < 1 || std::abs(static_cast<double>(steps) * dt - horizon) >
                       1e-9 * horizon)
    throw std::invalid_argument("step_count: dt does not divide the horizon");
  return steps;
}

namespace {

struct Grid {
  long steps = 0;
  double dt = 0.0;
  Matrix basis;  // (2 * steps + 1) x nodes, at half-step times
};

Grid make_grid(const TrajectoryOptions& options, double dt) {
  Grid g;
  g.dt = dt;
  g.steps = step_count(options.horizon, dt);
  Vector times(2 * g.steps + 1);
  for (Eigen::Index k = 0; k < times.size(); ++k)
    times[k] = 0.5 * dt * static_cast<double>(k);
  g.basis = natural_spline_basis(options.nodes_per_signal, options.horizon, times);
  return g;
}

template <typename Scalar>
VectorX<Scalar> shoot(const DynamicsSpec& spec, const RhsFn<Scalar>& rhs,
                      const Grid& grid, const VectorX<Scalar>& nodes,
                      const Vector& params) {
  const Eigen::Index n = grid.basis.cols();
  auto control_at = [&](long k) {
    VectorX<Scalar> u(spec.n_controls);
    for (Eigen::Index s = 0; s < spec.n_controls; ++s) {
      Scalar acc = Scalar(0.0);
      for (Eigen::Index j = 0; j < n; ++j)
        acc += grid.basis(k, j) * nodes[s * n + j];
      u[s] = acc;
    }
    return u;
  };
  VectorX<Scalar> x0 = spec.initial_state.template cast<Scalar>();
  // AutoDiffScalar silently drops terms when an empty derivative vector meets
  // a sized one inside a product, so seed the constant state with zeros.
  if constexpr (std::is_same_v<Scalar, Dual>)
    for (auto& v : x0) v.derivatives() = DualDerivative::Zero(nodes.size());
  return rk4_integrate<Scalar>(rhs, std::move(x0), grid.dt, grid.steps,
                               control_at, params);
}

struct Model {
  DynamicsSpec spec;
  TrajectoryOptions options;
  Grid high;
  Grid low;
  double node_spacing = 0.0;

  double penalty(const DesignPoint& x) const {
    const Eigen::Index n = options.nodes_per_signal;
    double acc = 0.0;
    for (Eigen::Index s = 0; s < spec.n_controls; ++s)
      for (Eigen::Index j = 0; j + 1 < n; ++j) {
        const double d = x[s * n + j + 1] - x[s * n + j];
        acc += d * d;
      }
    return options.penalty_weight * acc / node_spacing;
  }

  Vector penalty_gradient(const DesignPoint& x) const {
    const Eigen::Index n = options.nodes_per_signal;
    Vector g = Vector::Zero(x.size());
    for (Eigen::Index s = 0; s < spec.n_controls; ++s)
      for (Eigen::Index j = 0; j + 1 < n; ++j) {
        const double d = x[s * n + j + 1] - x[s * n + j];
        g[s * n + j + 1] += 2.0 * d;
        g[s * n + j] -= 2.0 * d;
      }
    return options.penalty_weight * g / node_spacing;
  }

  double value(const Grid& grid, const DesignPoint& x, XiRef xi) const {
    const Vector params = spec.perturbed_params(xi);
    const Vector terminal = shoot<double>(spec, spec.rhs, grid, x, params);
    double miss2 = 0.0;
    for (Eigen::Index i = 0; i < spec.target.size(); ++i) {
      const double o = spec.output_scale[i] * terminal[spec.output_indices[i]];
      miss2 += (o - spec.target[i]) * (o - spec.target[i]);
    }
    const double v = std::sqrt(miss2) + penalty(x);
    if (!std::isfinite(v)) {
      std::clog << "trajectory: non-finite state for dt=" << grid.dt << "\n";
      return std::numeric_limits<double>::infinity();
    }
    return v;
  }

  Vector gradient(const Grid& grid, const DesignPoint& x, XiRef xi) const {
    const Eigen::Index d = x.size();
    const Vector params = spec.perturbed_params(xi);
    VectorX<Dual> nodes(d);
    for (Eigen::Index i = 0; i < d; ++i)
      nodes[i] = Dual(x[i], DualDerivative::Unit(d, i));
    const VectorX<Dual> terminal =
        shoot<Dual>(spec, spec.rhs_dual, grid, nodes, params);
    Dual miss2 = Dual(0.0, DualDerivative::Zero(d));
    for (Eigen::Index i = 0; i < spec.target.size(); ++i) {
      const Dual o = spec.output_scale[i] * terminal[spec.output_indices[i]];
      miss2 += (o - spec.target[i]) * (o - spec.target[i]);
    }
    Vector g = Vector::Zero(d);
    const double miss = std::sqrt(miss2.value());
    if (miss > 0.0 && miss2.derivatives().size() == d)
      g = miss2.derivatives() / (2.0 * miss);
    g += penalty_gradient(x);
    if (!g.allFinite()) {
      std::clog << "trajectory: non-finite gradient for dt=" << grid.dt << "\n";
      g.setConstant(std::numeric_limits<double>::infinity());
    }
    return g;
  }
};

}  // namespace

Vector simulate_terminal_state(const DynamicsSpec& spec,
                               const TrajectoryOptions& options,
                               const DesignPoint& nodes, const Vector& params,
                               double dt) {
  spec.validate();
  if (nodes.size() != spec.n_controls * options.nodes_per_signal)
    throw std::invalid_argument("simulate_terminal_state: wrong design size");
  const Grid grid = make_grid(options, dt);
  return shoot<double>(spec, spec.rhs, grid, nodes, params);
}

BiFidelityProblem make_trajectory(DynamicsSpec dynamics,
                                  const TrajectoryOptions& options) {
  dynamics.validate();
  if (options.nodes_per_signal < 2)
    throw std::invalid_argument("make_trajectory: nodes_per_signal must be >= 2");
  if (!(options.dt_high > 0.0) || !(options.dt_low >= options.dt_high))
    throw std::invalid_argument("make_trajectory: need dt_low >= dt_high > 0");
  const Eigen::Index d = dynamics.n_controls * options.nodes_per_signal;
  if (d > kMaxDesignDim)
    throw std::invalid_argument("make_trajectory: at most 64 design variables");

  auto model = std::make_shared<Model>();
  model->spec = std::move(dynamics);
  model->options = options;
  model->high = make_grid(options, options.dt_high);
  model->low = make_grid(options, options.dt_low);
  model->node_spacing =
      options.horizon / static_cast<double>(options.nodes_per_signal - 1);
  const DynamicsSpec& spec = model->spec;

  BiFidelityProblem p;
  p.name = "trajectory";
  p.dim_x = d;
  p.dim_xi = std::max<Eigen::Index>(spec.uncertain_count(), 1);
  p.eval_high = [model](const DesignPoint& x, XiRef xi) {
    return model->value(model->high, x, xi);
  };
  p.eval_low = [model](const DesignPoint& x, XiRef xi) {
    return model->value(model->low, x, xi);
  };
  p.grad_high = [model](const DesignPoint& x, XiRef xi) {
    return model->gradient(model->high, x, xi);
  };
  p.grad_low = [model](const DesignPoint& x, XiRef xi) {
    return model->gradient(model->low, x, xi);
  };
  p.xi_distribution = {0.0, 1.0};
  p.costs = options.costs;

  BoxBounds bounds{Vector(d), Vector(d)};
  for (Eigen::Index s = 0; s < spec.n_controls; ++s) {
    bounds.lower.segment(s * options.nodes_per_signal, options.nodes_per_signal)
        .setConstant(spec.control_lower[s]);
    bounds.upper.segment(s * options.nodes_per_signal, options.nodes_per_signal)
        .setConstant(spec.control_upper[s]);
  }
  p.bounds = std::move(bounds);
  Vector start(d);
  for (Eigen::Index s = 0; s < spec.n_controls; ++s)
    start.segment(s * options.nodes_per_signal, options.nodes_per_signal)
        .setConstant(spec.initial_controls[s]);
  p.default_start = std::move(start);

  if (options.reference_samples > 0) {
    RngStream ref_stream(options.reference_seed, 0x7265666572656e63ULL);
    auto ref_batch = std::make_shared<const SampleBatch>(
        draw_normal(ref_stream, options.reference_samples, p.dim_xi, 0.0, 1.0));
    ReferenceInfo ref;
    ref.true_risk = [model, ref_batch](const DesignPoint& x) {
      double acc = 0.0;
      for (Eigen::Index i = 0; i < ref_batch->size(); ++i)
        acc += model->value(model->high, x, ref_batch->draws.row(i).transpose());
      return acc / static_cast<double>(ref_batch->size());
    };
    p.reference = std::move(ref);
  }

  p.parameters = {{"nodes_per_signal", static_cast<double>(options.nodes_per_signal)},
                  {"n_controls", static_cast<double>(spec.n_controls)},
                  {"horizon", options.horizon},
                  {"dt_high", options.dt_high},
                  {"dt_low", options.dt_low},
                  {"penalty_weight", options.penalty_weight},
                  {"reference_samples", static_cast<double>(options.reference_samples)},
                  {"reference_seed", static_cast<double>(options.reference_seed)}};
  return p;
}

DynamicsSpec linear_decay_dynamics(double x0, double a, double relative_stddev,
                                   double control_gain) {
  DynamicsSpec spec;
  spec.name = "linear_decay";
  spec.state_dim = 1;
  spec.n_controls = 1;
  spec.initial_state = Vector::Constant(1, x0);
  spec.nominal_params = Vector::Constant(1, a);
  spec.relative_stddev = Vector::Constant(1, relative_stddev);
  set_rhs(spec, [control_gain](double, const auto& s, const auto& u,
                               const Vector& p) {
    using S = typename std::decay_t<decltype(s)>::Scalar;
    VectorX<S> out(1);
    out[0] = -p[0] * s[0] + control_gain * u[0];
    return out;
  });
  spec.output_indices = Eigen::VectorXi::Constant(1, 0);
  spec.output_scale = Vector::Ones(1);
  spec.target = Vector::Zero(1);
  spec.control_lower = Vector::Constant(1, -1e3);
  spec.control_upper = Vector::Constant(1, 1e3);
  spec.initial_controls = Vector::Zero(1);
  return spec;
}

namespace {
constexpr double kRadius = 6371.0;  // km
constexpr double kDeg = std::numbers::pi / 180.0;
}  // namespace

DynamicsSpec glider_dynamics(double relative_stddev) {
  DynamicsSpec spec;
  spec.name = "glider";
  spec.state_dim = 4;
  spec.n_controls = 2;
  // longitude, latitude (rad), speed (km/s), heading (rad from east)
  spec.initial_state = (Vector(4) << 0.0, 0.0, 7.0, 30.0 * kDeg).finished();
  // lift, drag coefficients
  spec.nominal_params = (Vector(2) << 1.7e-4, 1.1e-3).finished();
  spec.relative_stddev = Vector::Constant(2, relative_stddev);
  set_rhs(spec, [](double, const auto& s, const auto& u, const Vector& p) {
    using S = typename std::decay_t<decltype(s)>::Scalar;
    using std::cos;
    using std::sin;
    const S alpha = u[0] * kDeg;
    const S bank = u[1] * kDeg;
    const S cl = p[0] * alpha;
    const S cd = p[1] * (0.05 + alpha * alpha);
    const S v = s[2];
    VectorX<S> out(4);
    out[0] = v * cos(s[3]) / (kRadius * cos(s[1]));
    out[1] = v * sin(s[3]) / kRadius;
    out[2] = -cd * v * v;
    out[3] = cl * v * sin(bank);
    return out;
  });
  spec.output_indices = (Eigen::VectorXi(2) << 0, 1).finished();
  spec.output_scale = Vector::Constant(2, 1.0 / kDeg);
  spec.target = (Vector(2) << 55.0, 25.0).finished();
  spec.control_lower = (Vector(2) << 0.0, -80.0).finished();
  spec.control_upper = (Vector(2) << 40.0, 80.0).finished();
  spec.initial_controls = (Vector(2) << 19.0, -40.0).finished();
  return spec;
}

}  // namespace bistro::trajectory
