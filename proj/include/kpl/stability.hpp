#pragma once

#include <complex>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace kpl::stability {

enum class LocalVerdict { asymptotically_stable, marginally_stable, unstable };

std::string to_string(LocalVerdict v);

struct EigenReport {
  std::vector<std::complex<double>> eigenvalues;  // sorted by magnitude, descending
  std::vector<double> magnitudes;                 // same order
  double max_magnitude = 0.0;
  LocalVerdict verdict = LocalVerdict::asymptotically_stable;
  int distinct_count = 0;
  /// More than one eigenvalue within tolerance of the unit circle coincide;
  /// boundedness then also needs semisimplicity, which is not checked.
  bool repeated_unit_eigenvalue = false;
};

/// Eigenvalue test for z_{k+1} = A z_k:
///   max|lambda| < 1 - tol          -> asymptotically stable
///   |max|lambda| - 1| <= tol       -> marginally stable
///   max|lambda| > 1 + tol          -> unstable
EigenReport local_stability(const Eigen::MatrixXd& A, double tol = 1e-9);

struct ContinuousSystem {
  Eigen::MatrixXd A;  // A_c
  Eigen::VectorXd B;  // B_c
  double dt_source = 0.0;
};

/// Inverse zero-order-hold conversion through the eigendecomposition
/// A = V diag(lambda) V^-1: A_c = V diag(log lambda / dt) V^-1 (principal
/// branch) and B_c = Psi^-1 B with Psi = int_0^dt exp(A_c t) dt.
ContinuousSystem d2c_zoh(const Eigen::MatrixXd& A, const Eigen::VectorXd& B, double dt);

/// Forward zero-order-hold discretization (Pade matrix exponential of the
/// augmented system). Returns (A_d, B_d).
std::pair<Eigen::MatrixXd, Eigen::VectorXd> c2d_zoh(const ContinuousSystem& sys, double dt);

enum class FrequencyUnit { hertz, rad_per_s };

/// Coordinate of the lifted state holding follower i's velocity (1-based i).
int velocity_index(int n_followers, int follower);

/// |s C (sI - A_c)^-1 B_c| with s = j*2*pi*f (hertz) or s = j*f (rad/s), where
/// C selects `output_index`.
double transfer_gain(const ContinuousSystem& sys, int output_index, double frequency,
                     FrequencyUnit unit = FrequencyUnit::hertz);

struct FrequencyResponse {
  std::vector<double> frequencies;
  std::vector<double> gains;
  double peak_gain = 0.0;
  double peak_frequency = 0.0;
  bool string_stable = true;
  FrequencyUnit unit = FrequencyUnit::hertz;
  std::vector<std::string> warnings;  // grid points skipped because they hit a pole
};

/// `points` log-spaced frequencies on [lo, hi].
std::vector<double> log_grid(double lo, double hi, int points);
/// 400 points over [1e-3, 5] Hz.
std::vector<double> default_grid();

/// Evaluates transfer_gain on an ascending, strictly positive grid. The
/// platoon is string stable iff the peak gain is at most 1 + tol.
FrequencyResponse string_stability_sweep(const ContinuousSystem& sys, int output_index,
                                         std::span<const double> grid, double tol = 1e-6,
                                         FrequencyUnit unit = FrequencyUnit::hertz);

}  // namespace kpl::stability
