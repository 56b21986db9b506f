#pragma once

namespace kpl {

/// Intelligent Driver Model parameters.
struct IdmParams {
  double v0 = 30.0;     // desired speed [m/s]
  double T = 1.5;       // time headway [s]
  double s0 = 2.0;      // jam spacing [m]
  double a_max = 1.0;   // maximum acceleration [m/s^2]
  double b = 1.5;       // comfortable deceleration [m/s^2]
  double delta = 4.0;   // acceleration exponent

  /// Throws InputError unless every parameter is positive and delta >= 1.
  void validate() const;
};

/// IDM acceleration for a follower at spacing `s`, speed `v` and approach rate
/// `dv` = v_follower - v_leader. The desired gap s* is floored at s0.
double idm_accel(double s, double v, double dv, const IdmParams& p);

/// Spacing at which idm_accel(s, v, 0, p) == 0. Requires 0 <= v < v0.
double idm_equilibrium_spacing(double v, const IdmParams& p);

}  // namespace kpl
