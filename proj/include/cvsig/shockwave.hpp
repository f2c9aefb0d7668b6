#pragma once

namespace cvsig {

/// Flows in veh/h, densities in veh/mi, speeds in mph, times in seconds.
struct ShockwaveInput {
  double k_a_vpm = 0.0;        // uncongested density
  double q_a_vph = 0.0;        // uncongested flow
  double red_s = 0.0;          // inter-green R seen by the approach
  double queue_mi = 0.0;       // L_Q
  double n_queued = 0.0;
  double cycle_s = 0.0;
  double start_headway_s = 1.5;  // per queued vehicle, gives T_Sq
};

struct ShockwaveSpeeds {
  double v_bf_mph = 0.0;
  double v_br_mph = 0.0;
};

struct Dissipation {
  double t_q_s = 0.0;
  bool oversaturated = false;  // clamped to the cycle
};

struct ShockwaveResult {
  double k_j_vpm = 0.0;
  double v_bf_mph = 0.0;
  double v_br_mph = 0.0;
  double t_q_s = 0.0;
  bool has_queue = false;
  bool oversaturated = false;
};

/// k_j = k_a + R q_a / L_Q. Throws ValidationError when L_Q <= 0.
double jam_density(const ShockwaveInput& in);

/// Forming and recovery wave speeds, both negative (upstream). The recovery
/// speed is -infinity when nothing is queued. Throws when k_j <= k_a.
ShockwaveSpeeds shockwave_speeds(const ShockwaveInput& in, double k_j);

/// T_Q = |R v_bf / (v_bf - v_br)| clamped to the cycle. A recovery wave no
/// faster than the forming wave never catches it: returns the cycle, flagged.
Dissipation queue_dissipation_time(double red_s, double v_bf_mph, double v_br_mph, double cycle_s);

/// Full chain. No queue (L_Q = 0, n = 0 or q_a = 0 with nothing queued) gives T_Q = 0.
ShockwaveResult analyze_queue(const ShockwaveInput& in);

}  // namespace cvsig
