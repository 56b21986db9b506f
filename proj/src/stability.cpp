#include "kpl/stability.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <unsupported/Eigen/MatrixFunctions>

#include "kpl/error.hpp"

namespace kpl::stability {

namespace {

using Complex = std::complex<double>;

// Reciprocal condition estimate below which a factorization is treated as singular.
constexpr double kSingularRcond = 1e-13;

// Principal log accurate near lambda = 1: log|lambda| via log1p(|lambda|^2 - 1).
Complex principal_log(Complex lambda) {
  const Complex w = lambda - 1.0;
  const double mag_sq_minus_one = 2.0 * w.real() + std::norm(w);
  return {0.5 * std::log1p(mag_sq_minus_one), std::arg(lambda)};
}

Eigen::MatrixXd real_part_checked(const Eigen::MatrixXcd& m, const char* what) {
  const double scale = std::max(1.0, m.real().cwiseAbs().maxCoeff());
  const double residue = m.imag().cwiseAbs().maxCoeff();
  if (residue > 1e-8 * scale) {
    throw NumericalError(std::string("d2c_zoh: ") + what + " has imaginary residue " +
                         std::to_string(residue) + "; no real principal logarithm");
  }
  return m.real();
}

}  // namespace

std::string to_string(LocalVerdict v) {
  switch (v) {
    case LocalVerdict::asymptotically_stable: return "asymptotically_stable";
    case LocalVerdict::marginally_stable: return "marginally_stable";
    case LocalVerdict::unstable: return "unstable";
  }
  return "unknown";
}

EigenReport local_stability(const Eigen::MatrixXd& A, double tol) {
  if (A.rows() != A.cols() || A.rows() == 0) throw InputError("local_stability: A must be square");
  if (!A.allFinite()) throw InputError("local_stability: A has non-finite entries");
  if (!(tol >= 0)) throw InputError("local_stability: negative tolerance");

  Eigen::EigenSolver<Eigen::MatrixXd> es(A, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success) {
    throw NumericalError("local_stability: eigensolver did not converge");
  }
  const Eigen::VectorXcd ev = es.eigenvalues();
  std::vector<Eigen::Index> order(ev.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return std::abs(ev(a)) > std::abs(ev(b)); });

  EigenReport r;
  for (auto i : order) {
    r.eigenvalues.push_back(ev(i));
    r.magnitudes.push_back(std::abs(ev(i)));
  }
  r.max_magnitude = r.magnitudes.front();
  if (r.max_magnitude > 1.0 + tol) {
    r.verdict = LocalVerdict::unstable;
  } else if (r.max_magnitude < 1.0 - tol) {
    r.verdict = LocalVerdict::asymptotically_stable;
  } else {
    r.verdict = LocalVerdict::marginally_stable;
  }

  const double merge = 1e-8 * std::max(1.0, r.max_magnitude);
  for (std::size_t i = 0; i < r.eigenvalues.size(); ++i) {
    bool seen = false;
    for (std::size_t j = 0; j < i && !seen; ++j) {
      seen = std::abs(r.eigenvalues[i] - r.eigenvalues[j]) <= merge;
    }
    if (!seen) {
      ++r.distinct_count;
    } else if (std::abs(r.magnitudes[i] - 1.0) <= std::max(tol, merge)) {
      r.repeated_unit_eigenvalue = true;
    }
  }
  return r;
}

ContinuousSystem d2c_zoh(const Eigen::MatrixXd& A, const Eigen::VectorXd& B, double dt) {
  if (A.rows() != A.cols() || B.size() != A.rows() || A.rows() == 0) {
    throw InputError("d2c_zoh: shape mismatch");
  }
  if (!(dt > 0)) throw InputError("d2c_zoh: dt must be positive");
  if (!A.allFinite() || !B.allFinite()) throw InputError("d2c_zoh: non-finite input");

  Eigen::EigenSolver<Eigen::MatrixXd> es(A);
  if (es.info() != Eigen::Success) throw NumericalError("d2c_zoh: eigensolver did not converge");
  const Eigen::VectorXcd lambda = es.eigenvalues();
  const Eigen::MatrixXcd V = es.eigenvectors();
  const auto n = lambda.size();

  Eigen::VectorXcd mu(n);        // continuous eigenvalues
  Eigen::VectorXcd hold_inv(n);  // 1 / (dt * phi(mu dt)) = mu / (lambda - 1)
  for (Eigen::Index i = 0; i < n; ++i) {
    const Complex l = lambda(i);
    if (std::abs(l) < 1e-12) {
      throw NumericalError("d2c_zoh: eigenvalue " + std::to_string(std::abs(l)) +
                           " near zero; no principal logarithm");
    }
    if (l.real() < 0 && std::abs(l.imag()) <= 1e-12 * std::abs(l)) {
      throw NumericalError("d2c_zoh: eigenvalue " + std::to_string(l.real()) +
                           " on the negative real axis; no principal logarithm");
    }
    const Complex log_l = principal_log(l);
    mu(i) = log_l / dt;
    // phi(x) = (e^x - 1) / x with phi(0) = 1, evaluated as (lambda - 1) / log(lambda).
    const Complex psi = std::abs(log_l) == 0.0 ? Complex(dt) : (l - 1.0) / mu(i);
    if (std::abs(psi) < 1e-300) throw NumericalError("d2c_zoh: hold integral is singular");
    hold_inv(i) = 1.0 / psi;
  }

  Eigen::PartialPivLU<Eigen::MatrixXcd> lu(V);
  if (lu.rcond() < kSingularRcond) {
    throw NumericalError(
        "d2c_zoh: eigenvector matrix is singular (A is defective); no principal logarithm "
        "via eigendecomposition");
  }
  // A_c = V diag(mu) V^-1, computed as (V^-T (V diag(mu))^T)^T.
  Eigen::PartialPivLU<Eigen::MatrixXcd> lu_t(V.transpose());
  const Eigen::MatrixXcd Ac = lu_t.solve((V * mu.asDiagonal()).transpose()).transpose();
  const Eigen::VectorXcd Bc = V * (hold_inv.asDiagonal() * lu.solve(B.cast<Complex>()));

  ContinuousSystem sys;
  sys.A = real_part_checked(Ac, "A_c");
  sys.B = real_part_checked(Bc, "B_c");
  sys.dt_source = dt;
  return sys;
}

std::pair<Eigen::MatrixXd, Eigen::VectorXd> c2d_zoh(const ContinuousSystem& sys, double dt) {
  const auto n = sys.A.rows();
  if (sys.A.cols() != n || sys.B.size() != n) throw InputError("c2d_zoh: shape mismatch");
  if (!(dt > 0)) throw InputError("c2d_zoh: dt must be positive");
  Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(n + 1, n + 1);
  aug.topLeftCorner(n, n) = sys.A * dt;
  aug.topRightCorner(n, 1) = sys.B * dt;
  const Eigen::MatrixXd e = aug.exp();
  return {e.topLeftCorner(n, n), e.topRightCorner(n, 1)};
}

int velocity_index(int n_followers, int follower) {
  if (follower < 1 || follower > n_followers) {
    throw InputError("follower index " + std::to_string(follower) + " outside 1.." +
                     std::to_string(n_followers));
  }
  return n_followers + follower - 1;
}

double transfer_gain(const ContinuousSystem& sys, int output_index, double frequency,
                     FrequencyUnit unit) {
  const auto n = sys.A.rows();
  if (sys.A.cols() != n || sys.B.size() != n) throw InputError("transfer_gain: shape mismatch");
  if (output_index < 0 || output_index >= n) {
    throw InputError("transfer_gain: output index " + std::to_string(output_index) +
                     " outside state of size " + std::to_string(n));
  }
  if (!(frequency > 0)) throw InputError("transfer_gain: frequency must be positive");
  const double omega =
      unit == FrequencyUnit::hertz ? 2.0 * std::numbers::pi * frequency : frequency;
  const Complex s(0.0, omega);
  Eigen::MatrixXcd M = -sys.A.cast<Complex>();
  M.diagonal().array() += s;
  Eigen::PartialPivLU<Eigen::MatrixXcd> lu(M);
  if (lu.rcond() < kSingularRcond) {
    throw NumericalError("transfer_gain: pole on imaginary axis at " + std::to_string(frequency));
  }
  const Eigen::VectorXcd x = lu.solve(sys.B.cast<Complex>());
  const double gain = std::abs(s * x(output_index));
  if (!std::isfinite(gain)) {
    throw NumericalError("transfer_gain: pole on imaginary axis at " + std::to_string(frequency));
  }
  return gain;
}

std::vector<double> log_grid(double lo, double hi, int points) {
  if (!(lo > 0 && hi > lo) || points < 2) throw InputError("log_grid: need 0 < lo < hi, points >= 2");
  std::vector<double> grid(points);
  const double a = std::log10(lo);
  const double b = std::log10(hi);
  for (int i = 0; i < points; ++i) {
    grid[i] = std::pow(10.0, a + (b - a) * i / (points - 1));
  }
  grid.front() = lo;
  grid.back() = hi;
  return grid;
}

std::vector<double> default_grid() { return log_grid(1e-3, 5.0, 400); }

FrequencyResponse string_stability_sweep(const ContinuousSystem& sys, int output_index,
                                         std::span<const double> grid, double tol,
                                         FrequencyUnit unit) {
  if (grid.empty()) throw InputError("sweep: empty frequency grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0)) throw InputError("sweep: frequencies must be positive");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw InputError("sweep: grid must be ascending");
  }
  FrequencyResponse fr;
  fr.unit = unit;
  for (double f : grid) {
    try {
      const double g = transfer_gain(sys, output_index, f, unit);
      fr.frequencies.push_back(f);
      fr.gains.push_back(g);
    } catch (const NumericalError& e) {
      fr.warnings.push_back(std::string("skipped ") + std::to_string(f) + ": " + e.what());
    }
  }
  if (fr.gains.empty()) throw NumericalError("sweep: every grid point hit a pole");
  const auto peak = std::max_element(fr.gains.begin(), fr.gains.end());
  fr.peak_gain = *peak;
  fr.peak_frequency = fr.frequencies[peak - fr.gains.begin()];
  fr.string_stable = fr.peak_gain <= 1.0 + tol;
  return fr;
}

}  // namespace kpl::stability
