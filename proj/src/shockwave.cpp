#include "cvsig/shockwave.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cvsig/corridor.hpp"
#include "cvsig/units.hpp"

namespace cvsig {

double jam_density(const ShockwaveInput& in) {
  if (!(in.queue_mi > 0.0)) throw ValidationError("queue_mi: must be positive to derive jam density");
  if (in.q_a_vph < 0 || in.k_a_vpm < 0 || in.red_s < 0) throw ValidationError("shockwave input: must be nonnegative");
  return in.k_a_vpm + units::seconds_to_hours(in.red_s) * in.q_a_vph / in.queue_mi;
}

ShockwaveSpeeds shockwave_speeds(const ShockwaveInput& in, double k_j) {
  if (!(k_j > in.k_a_vpm)) throw ValidationError("k_j: must exceed k_a");
  ShockwaveSpeeds s;
  s.v_bf_mph = -in.q_a_vph / (k_j - in.k_a_vpm);
  const double t_sq_h = units::seconds_to_hours(in.start_headway_s * in.n_queued);
  s.v_br_mph = t_sq_h > 0 ? -in.queue_mi / t_sq_h : -std::numeric_limits<double>::infinity();
  return s;
}

Dissipation queue_dissipation_time(double red_s, double v_bf_mph, double v_br_mph, double cycle_s) {
  if (std::isinf(v_br_mph)) return {0.0, false};
  if (std::abs(v_br_mph) <= std::abs(v_bf_mph)) return {cycle_s, true};
  const double t = std::abs(red_s * v_bf_mph / (v_bf_mph - v_br_mph));
  if (t > cycle_s) return {cycle_s, true};
  return {t, false};
}

ShockwaveResult analyze_queue(const ShockwaveInput& in) {
  ShockwaveResult r;
  r.k_j_vpm = in.k_a_vpm;
  if (!(in.queue_mi > 0.0) || in.n_queued <= 0.0 || in.q_a_vph <= 0.0 || in.red_s <= 0.0) return r;
  r.has_queue = true;
  r.k_j_vpm = jam_density(in);
  const auto speeds = shockwave_speeds(in, r.k_j_vpm);
  r.v_bf_mph = speeds.v_bf_mph;
  r.v_br_mph = speeds.v_br_mph;
  const auto d = queue_dissipation_time(in.red_s, speeds.v_bf_mph, speeds.v_br_mph, in.cycle_s);
  r.t_q_s = d.t_q_s;
  r.oversaturated = d.oversaturated;
  return r;
}

}  // namespace cvsig
