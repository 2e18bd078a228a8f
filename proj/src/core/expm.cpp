#include "ganf/core/expm.hpp"

#include <array>
#include <cmath>

#include "ganf/core/errors.hpp"

namespace ganf::core {

namespace {

using Eigen::MatrixXd;

// Higham (2005), Table 2.3: largest 1-norm for which degree m is accurate
// to double precision.
constexpr double kTheta3 = 1.495585217958292e-2;
constexpr double kTheta5 = 2.539398330063230e-1;
constexpr double kTheta7 = 9.504178996162932e-1;
constexpr double kTheta9 = 2.097847961257068e0;
constexpr double kTheta13 = 5.371920351148152e0;

template <std::size_t N>
void pade_low(const MatrixXd& a, const std::array<double, N>& b, MatrixXd& u, MatrixXd& v) {
  const auto n = a.rows();
  const MatrixXd ident = MatrixXd::Identity(n, n);
  const MatrixXd a2 = a * a;
  MatrixXd odd = b[1] * ident;
  MatrixXd even = b[0] * ident;
  MatrixXd power = ident;
  for (std::size_t k = 2; k < N; k += 2) {
    power = power * a2;
    even += b[k] * power;
    if (k + 1 < N) odd += b[k + 1] * power;
  }
  u = a * odd;
  v = even;
}

void pade13(const MatrixXd& a, MatrixXd& u, MatrixXd& v) {
  static constexpr std::array<double, 14> b = {
      64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
      129060195264000.0,   10559470521600.0,    670442572800.0,     33522128640.0,
      1323241920.0,        40840800.0,          960960.0,           16380.0,
      182.0,               1.0};
  const auto n = a.rows();
  const MatrixXd ident = MatrixXd::Identity(n, n);
  const MatrixXd a2 = a * a;
  const MatrixXd a4 = a2 * a2;
  const MatrixXd a6 = a4 * a2;
  MatrixXd tmp = b[13] * a6 + b[11] * a4 + b[9] * a2;
  tmp = a6 * tmp;
  tmp += b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident;
  u = a * tmp;
  tmp = b[12] * a6 + b[10] * a4 + b[8] * a2;
  v = a6 * tmp;
  v += b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident;
}

}  // namespace

MatrixXd expm(const MatrixXd& m) {
  if (m.rows() != m.cols()) {
    throw DimensionError("matrix exponential needs a square matrix, got " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()));
  }
  if (m.size() == 0) return m;
  if (!m.allFinite()) throw NumericError("matrix exponential of a non-finite matrix");

  const double norm = m.cwiseAbs().colwise().sum().maxCoeff();
  MatrixXd u;
  MatrixXd v;
  int squarings = 0;
  if (norm < kTheta3) {
    pade_low<4>(m, {120.0, 60.0, 12.0, 1.0}, u, v);
  } else if (norm < kTheta5) {
    pade_low<6>(m, {30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0}, u, v);
  } else if (norm < kTheta7) {
    pade_low<8>(m, {17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0}, u, v);
  } else if (norm < kTheta9) {
    pade_low<10>(m,
                 {17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0, 2162160.0, 110880.0, 3960.0,
                  90.0, 1.0},
                 u, v);
  } else {
    squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm / kTheta13))));
    const MatrixXd scaled = m * std::ldexp(1.0, -squarings);
    pade13(scaled, u, v);
  }
  MatrixXd result = (v - u).partialPivLu().solve(v + u);
  for (int i = 0; i < squarings; ++i) result = result * result;
  return result;
}

MatrixXd expm_frechet_adjoint(const MatrixXd& m, const MatrixXd& g) {
  if (m.rows() != m.cols() || g.rows() != m.rows() || g.cols() != m.cols()) {
    throw DimensionError("Frechet adjoint needs square operands of equal size");
  }
  // exp([[X, E], [0, X]]) carries L(X, E) in its upper-right block; the
  // adjoint of L(M, .) is L(M^T, .).
  const auto n = m.rows();
  MatrixXd block = MatrixXd::Zero(2 * n, 2 * n);
  block.topLeftCorner(n, n) = m.transpose();
  block.bottomRightCorner(n, n) = m.transpose();
  block.topRightCorner(n, n) = g;
  return expm(block).topRightCorner(n, n);
}

}  // namespace ganf::core
