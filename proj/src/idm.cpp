#include "kpl/idm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kpl/error.hpp"

namespace kpl {

void IdmParams::validate() const {
  if (!(v0 > 0 && T > 0 && s0 > 0 && a_max > 0 && b > 0 && delta >= 1)) {
    throw InputError("invalid IDM parameters: v0=" + std::to_string(v0) +
                     " T=" + std::to_string(T) + " s0=" + std::to_string(s0) +
                     " a_max=" + std::to_string(a_max) +
                     " b=" + std::to_string(b) +
                     " delta=" + std::to_string(delta));
  }
}

double idm_accel(double s, double v, double dv, const IdmParams& p) {
  if (!(s > 0)) {
    throw NumericalError("idm_accel: non-positive spacing " + std::to_string(s));
  }
  const double dynamic = v * p.T + v * dv / (2.0 * std::sqrt(p.a_max * p.b));
  const double s_star = p.s0 + std::max(0.0, dynamic);
  const double ratio = s_star / s;
  return p.a_max * (1.0 - std::pow(v / p.v0, p.delta) - ratio * ratio);
}

double idm_equilibrium_spacing(double v, const IdmParams& p) {
  if (v < 0 || v >= p.v0) {
    throw InputError("no IDM equilibrium for speed " + std::to_string(v));
  }
  return (p.s0 + v * p.T) / std::sqrt(1.0 - std::pow(v / p.v0, p.delta));
}

}  // namespace kpl
