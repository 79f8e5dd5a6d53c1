#pragma once

namespace bistro {

enum class ConstantsSource { analytic, estimated };

// Curvature and gradient-noise constants. Tr Var[grad estimate] is bounded by
// W + W_V * |grad R_H|^2 for the single-fidelity estimator and by
// W_ML + W_V_ml * |grad R_H|^2 for the MLMC estimator.
struct RegularityConstants {
  double L_H = 0.0;
  double c_H = 0.0;
  double L_L = 0.0;
  double c_L = 0.0;
  double W = 0.0;
  double W_V = 0.0;
  double W_ML = 0.0;
  double W_V_ml = 0.0;
  ConstantsSource source = ConstantsSource::analytic;
};

}  // namespace bistro
