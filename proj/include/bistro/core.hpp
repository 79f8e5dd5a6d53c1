#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>
#include <string_view>

namespace bistro {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = VectorX<double>;
using Matrix = MatrixX<double>;

// A point in design space, x in R^d.
using DesignPoint = Vector;

enum class Fidelity { high, low, mlmc };
enum class EvalKind { eval, grad };
enum class Phase { setup, warm_start, trust, sgd };

std::string_view to_string(Fidelity f);
std::string_view to_string(EvalKind k);
std::string_view to_string(Phase p);

// Raised when a model returns a non-finite value or a gradient estimate
// cannot be formed.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bistro
