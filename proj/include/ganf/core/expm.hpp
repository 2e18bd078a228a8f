#pragma once

#include <Eigen/Dense>

namespace ganf::core {

/// Matrix exponential by scaling and squaring around a diagonal Pade core.
///
/// Degree 3/5/7/9/13 is picked from the 1-norm using Higham's thresholds;
/// larger norms are scaled by 2^-s into the degree-13 region and squared
/// back s times. Throws DimensionError for non-square input.
Eigen::MatrixXd expm(const Eigen::MatrixXd& m);

/// Adjoint of the Frechet derivative of exp at `m` applied to `g`:
/// the gradient of <g, e^M> with respect to M.
Eigen::MatrixXd expm_frechet_adjoint(const Eigen::MatrixXd& m, const Eigen::MatrixXd& g);

}  // namespace ganf::core
