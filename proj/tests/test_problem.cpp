#include "bistro/diagnostics.hpp"
#include "bistro/problem.hpp"
#include "bistro/trajectory.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace bistro;

namespace {

// Independent scalar evaluation of the Forrester function at 0 and a dense
// numpy grid search over [0, 1] with 10^6 + 1 nodes.
constexpr double kForresterAtZero = 3.027209981231713;
constexpr double kForresterMinX = 0.757249;
constexpr double kForresterMinValue = -6.020740055735769;

Vector xi_row(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double e : v) out[i++] = e;
  return out;
}

}  // namespace

TEST_SUITE("problem") {
  TEST_CASE("quadratic objectives and gradients") {
    const auto p = make_quadratic(3, 0.01);
    CHECK(p.dim_x == 3);
    CHECK(p.dim_xi == 3);
    const Vector x = xi_row({1.0, -2.0, 0.5});
    const Vector xi = xi_row({0.1, 0.2, -0.3});
    CHECK(p.eval(Fidelity::high, x, xi) ==
          doctest::Approx(1 + 4 + 0.25 + 0.1 - 0.4 - 0.15));
    double low = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double y = x[i] / 1.05 + 1.0;
      low += y * y + y * xi[i];
    }
    CHECK(p.eval(Fidelity::low, x, xi) == doctest::Approx(low));
    CHECK((p.grad(Fidelity::high, x, xi) - (2 * x + xi)).norm() < 1e-15);
    const Vector gl = ((2.0 * (x / 1.05).array() + 2.0 + xi.array()) / 1.05).matrix();
    CHECK((p.grad(Fidelity::low, x, xi) - gl).norm() < 1e-14);
    CHECK(p.grad(Fidelity::high, Vector::Zero(3), Vector::Zero(3)).isZero(0.0));
    CHECK(p.reference->true_risk(x) == doctest::Approx(x.squaredNorm()));
    CHECK(*p.reference->optimum_value == 0.0);
    CHECK(p.reference->optimum_point->isZero(0.0));
  }

  TEST_CASE("quadratic declared constants") {
    const auto p = make_quadratic(20, 0.01);
    const auto& k = *p.declared_constants;
    CHECK(k.L_H == 2.0);
    CHECK(k.c_H == 2.0);
    CHECK(k.L_L == 1.81);
    CHECK(k.c_L == 1.81);
    CHECK(k.W == doctest::Approx(0.2));
    CHECK(k.W_ML == doctest::Approx(0.02));
    CHECK(k.W_V == 1.0);
    CHECK(k.W_V_ml == 1.0);
  }

  TEST_CASE("quadratic argument checks") {
    CHECK_THROWS_AS(make_quadratic(0, 0.01), std::invalid_argument);
    CHECK_THROWS_AS(make_quadratic(2, -0.01), std::invalid_argument);
    CHECK_NOTHROW(make_quadratic(2, 0.0));
  }

  TEST_CASE("quadratic sample mean matches |x|^2 at random points") {
    const auto p = make_quadratic(20, 0.01);
    RngStream s(31, 0);
    for (int trial = 0; trial < 10; ++trial) {
      Vector x(20);
      for (auto& v : x) v = 4.0 * s.next_uniform() - 2.0;
      RngStream bs = s.substream(static_cast<std::uint64_t>(trial));
      const auto batch = draw(bs, 100000, 20, p.xi_distribution);
      double sum = 0, sum2 = 0;
      for (Eigen::Index i = 0; i < batch.size(); ++i) {
        const double v = p.eval(Fidelity::high, x, batch.draws.row(i).transpose());
        sum += v;
        sum2 += v * v;
      }
      const double n = static_cast<double>(batch.size());
      const double mean = sum / n;
      const double se = std::sqrt((sum2 / n - mean * mean) / (n - 1));
      CHECK(std::abs(mean - x.squaredNorm()) <= 4.0 * se);
    }
  }

  TEST_CASE("forretal values and oracle") {
    const auto p = make_forretal(0.5);
    CHECK(p.dim_x == 1);
    const Vector zero = Vector::Zero(1);
    CHECK(p.eval(Fidelity::high, zero, zero) == doctest::Approx(kForresterAtZero).epsilon(1e-14));
    CHECK(*p.reference->optimum_value == doctest::Approx(kForresterMinValue).epsilon(1e-12));
    CHECK((*p.reference->optimum_point)[0] == doctest::Approx(kForresterMinX).epsilon(1e-12));
    CHECK(p.costs.high_eval == 1.0);
    CHECK(p.costs.low_eval == 0.1);
    CHECK(p.costs.high_grad == 2.0);
    CHECK(p.costs.low_grad == doctest::Approx(0.2));
  }

  TEST_CASE("forretal low-fidelity coefficient") {
    CHECK(make_forretal(1.0).parameters.at("low_coefficient") == 1.0);
    CHECK(make_forretal(0.1).parameters.at("low_coefficient") == doctest::Approx(-1.61));
    CHECK(make_forretal(0.9).parameters.at("low_coefficient") == doctest::Approx(0.79));
    // With kappa = 1 the fidelities differ by the linear shift only.
    const auto p = make_forretal(1.0);
    const Vector xi = Vector::Constant(1, 0.3);
    for (double x : {0.0, 0.2, 0.7, 1.0}) {
      const Vector v = Vector::Constant(1, x);
      CHECK(p.eval(Fidelity::low, v, xi) - p.eval(Fidelity::high, v, xi) ==
            doctest::Approx(10.0 * (x - 0.5) - 5.0));
    }
    CHECK_THROWS_AS(make_forretal(-0.1), std::invalid_argument);
    CHECK_THROWS_AS(make_forretal(1.1), std::invalid_argument);
  }

  TEST_CASE("forretal bounds clip iterates to the unit interval") {
    const auto p = make_forretal(0.5);
    CHECK(p.project(Vector::Constant(1, 1.7))[0] == 1.0);
    CHECK(p.project(Vector::Constant(1, -0.2))[0] == 0.0);
  }

  TEST_CASE("grid search minimum") {
    const auto m = grid_search_minimum([](double x) { return (x - 0.3) * (x - 0.3); }, 0, 1, 11);
    CHECK(m.x == doctest::Approx(0.3));
    CHECK(m.value == doctest::Approx(0.0));
    CHECK_THROWS_AS(grid_search_minimum([](double x) { return x; }, 0, 1, 1), std::invalid_argument);
  }

  TEST_CASE("ledger charges") {
    const auto p = make_forretal(0.5);
    CostLedger ledger(300, p.costs);
    charge(ledger, Fidelity::high, EvalKind::eval, 3);
    CHECK(ledger.spent() == doctest::Approx(3.0));
    charge(ledger, Fidelity::low, EvalKind::eval, 10);
    CHECK(ledger.spent() == doctest::Approx(4.0));
    CHECK_THROWS_AS(charge(ledger, Fidelity::low, EvalKind::eval, 0), std::invalid_argument);
    CHECK_THROWS_AS(charge(ledger, Fidelity::mlmc, EvalKind::eval, 1), std::invalid_argument);
    REQUIRE(ledger.events().size() == 2);
    CHECK(ledger.events()[1].count == 10);
    CHECK(ledger.events()[1].phase == Phase::setup);
    CHECK_FALSE(ledger.exhausted());
    charge(ledger, Fidelity::high, EvalKind::grad, 200);
    CHECK(ledger.exhausted());
    CHECK(ledger.remaining() < 0);
  }

  TEST_CASE("cost model and ledger validation") {
    CHECK_THROWS_AS(CostLedger(0.0, CostModel{}), std::invalid_argument);
    CHECK_THROWS_AS(CostLedger(1.0, CostModel{-1, 0.1, 1, 0.1}), std::invalid_argument);
  }

  TEST_CASE("analytic gradients agree with central differences") {
    RngStream s(55, 0);
    auto audit = [&](const BiFidelityProblem& p, int pairs, auto sample_x) {
      double worst = 0.0;
      for (int i = 0; i < pairs; ++i) {
        const DesignPoint x = sample_x();
        const Vector xi = draw(s, 1, p.dim_xi, p.xi_distribution).draws.row(0).transpose();
        for (Fidelity f : {Fidelity::high, Fidelity::low}) {
          const auto a = gradient_audit([&](const DesignPoint& y) { return p.eval(f, y, xi); },
                                        [&](const DesignPoint& y) { return p.grad(f, y, xi); }, x);
          worst = std::max(worst, a.relative_error);
        }
      }
      return worst;
    };
    const auto q = make_quadratic(20, 0.01);
    CHECK(audit(q, 100, [&] {
            Vector x(20);
            for (auto& v : x) v = 6.0 * s.next_uniform() - 3.0;
            return x;
          }) < 1e-5);
    ForretalOptions exact;
    exact.finite_difference_gradients = false;
    const auto f = make_forretal(0.5, exact);
    CHECK(audit(f, 100, [&] { return Vector::Constant(1, 0.02 + 0.96 * s.next_uniform()); }) < 1e-5);

    trajectory::TrajectoryOptions opt;
    opt.reference_samples = 0;
    opt.horizon = 400.0;
    const auto g = make_trajectory(trajectory::glider_dynamics(0.1), opt);
    CHECK(audit(g, 20, [&] {
            DesignPoint x = *g.default_start;
            for (auto& v : x) v += 3.0 * (s.next_uniform() - 0.5);
            return x;
          }) < 1e-5);
  }
}

TEST_SUITE("problem") {
  using namespace bistro::trajectory;

  TEST_CASE("trajectory design dimension and bounds") {
    TrajectoryOptions opt;
    opt.reference_samples = 0;
    const auto p = make_trajectory(glider_dynamics(), opt);
    CHECK(p.dim_x == 20);
    CHECK(p.dim_xi == 2);
    REQUIRE(p.bounds);
    REQUIRE(p.default_start);
    CHECK(p.default_start->size() == 20);
    CHECK(p.costs.high_eval == doctest::Approx(1.70e-2));
  }

  TEST_CASE("linear decay terminal state matches the closed form") {
    TrajectoryOptions opt;
    opt.nodes_per_signal = 4;
    opt.horizon = 100.0;
    opt.dt_high = 0.2;
    opt.dt_low = 20.0;
    const auto spec = linear_decay_dynamics(2.0, 0.01, 0.1);
    const Vector state = simulate_terminal_state(spec, opt, Vector::Zero(4), spec.nominal_params, 0.2);
    CHECK(state[0] == doctest::Approx(2.0 * std::exp(-1.0)).epsilon(1e-12));

    opt.reference_samples = 0;
    const auto p = make_trajectory(spec, opt);
    // xi = 0 leaves the decay rate at its nominal value; zero controls add no penalty.
    CHECK(p.eval(Fidelity::high, Vector::Zero(4), Vector::Zero(1)) ==
          doctest::Approx(2.0 * std::exp(-1.0)).epsilon(1e-12));
    // A perturbed rate a (1 + 0.1 xi).
    const double a = 0.01 * (1 + 0.1 * 1.5);
    CHECK(p.eval(Fidelity::high, Vector::Zero(4), Vector::Constant(1, 1.5)) ==
          doctest::Approx(2.0 * std::exp(-a * 100.0)).epsilon(1e-12));
  }

  TEST_CASE("RK4 error shrinks at fourth order") {
    const auto spec = linear_decay_dynamics(1.0, 0.05, 0.0);
    auto terminal = [&](double dt) {
      const Vector u = Vector::Zero(1);
      return rk4_integrate<double>(spec.rhs, spec.initial_state, dt, step_count(100.0, dt),
                                   [&](long) { return u; }, spec.nominal_params)(0);
    };
    const double exact = std::exp(-5.0);
    const double ratio = std::abs(terminal(4.0) - exact) / std::abs(terminal(2.0) - exact);
    CHECK(ratio >= 8.0);
    CHECK(ratio <= 32.0);
  }

  TEST_CASE("equal time steps make the fidelities identical") {
    TrajectoryOptions opt;
    opt.reference_samples = 0;
    opt.horizon = 200.0;
    opt.dt_low = opt.dt_high;
    const auto p = make_trajectory(glider_dynamics(), opt);
    const Vector xi = xi_row({0.7, -1.2});
    DesignPoint x = *p.default_start;
    x[3] += 2.0;
    CHECK(p.eval(Fidelity::high, x, xi) == p.eval(Fidelity::low, x, xi));
    CHECK(p.grad(Fidelity::high, x, xi) == p.grad(Fidelity::low, x, xi));
  }

  TEST_CASE("spline basis reproduces affine node data") {
    const Vector times = Vector::LinSpaced(41, 0.0, 100.0);
    const Matrix w = natural_spline_basis(5, 100.0, times);
    CHECK(w.rows() == 41);
    CHECK(w.cols() == 5);
    const Vector nodes = Vector::LinSpaced(5, 0.0, 100.0) * 0.3 + Vector::Constant(5, 2.0);
    const Vector vals = w * nodes;
    for (Eigen::Index i = 0; i < times.size(); ++i)
      CHECK(vals[i] == doctest::Approx(0.3 * times[i] + 2.0));
    // Interpolates at the nodes.
    const Vector bumpy = xi_row({1.0, -2.0, 0.5, 4.0, 0.0});
    const Vector at_nodes = natural_spline_basis(5, 100.0, Vector::LinSpaced(5, 0.0, 100.0)) * bumpy;
    CHECK((at_nodes - bumpy).norm() < 1e-12);
  }

  TEST_CASE("step count must divide the horizon") {
    CHECK(step_count(2000.0, 0.2) == 10000);
    CHECK(step_count(2000.0, 20.0) == 100);
    CHECK_THROWS_AS(step_count(2000.0, 0.3), std::invalid_argument);
  }

  TEST_CASE("diverging trajectories evaluate to +inf") {
    DynamicsSpec spec = linear_decay_dynamics(1.0, 1.0, 0.0);
    set_rhs(spec, [](double, const auto& s, const auto&, const Vector& p) {
      using S = typename std::decay_t<decltype(s)>::Scalar;
      VectorX<S> out(1);
      out[0] = p[0] * s[0] * s[0];
      return out;
    });
    TrajectoryOptions opt;
    opt.reference_samples = 0;
    opt.nodes_per_signal = 3;
    opt.horizon = 40.0;
    opt.dt_high = 1.0;
    opt.dt_low = 4.0;
    const auto p = make_trajectory(spec, opt);
    CHECK(p.eval(Fidelity::high, Vector::Zero(3), Vector::Zero(1)) ==
          std::numeric_limits<double>::infinity());
  }

  TEST_CASE("trajectory argument checks") {
    TrajectoryOptions opt;
    opt.reference_samples = 0;
    opt.dt_low = 0.1;
    CHECK_THROWS_AS(make_trajectory(glider_dynamics(), opt), std::invalid_argument);
    opt.dt_low = 20.0;
    opt.nodes_per_signal = 40;
    CHECK_THROWS_AS(make_trajectory(glider_dynamics(), opt), std::invalid_argument);
  }
}
