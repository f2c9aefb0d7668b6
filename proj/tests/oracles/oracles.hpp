#pragma once

// Independent reference implementations. None of these call into the solver
// or model code they check; they re-derive each quantity from its definition.

#include <cstdint>
#include <random>
#include <vector>

#include "cvsig/green_optimizer.hpp"
#include "cvsig/offset_optimizer.hpp"
#include "cvsig/shockwave.hpp"

namespace oracle {

struct TimingOptimum {
  bool feasible = false;
  double objective = 0.0;
  int g = 0;
  std::vector<double> f_r;
};

/// Plain enumeration of every integer green and every f_r grid vector.
TimingOptimum brute_force_timing(const cvsig::TimingProblem& p);

/// Objective of one assignment evaluated from the printed formulas
/// (telescoping sum kept as written).
double timing_objective(const cvsig::TimingProblem& p, const std::vector<double>& f_r, double* t_q_out = nullptr);

struct OffsetOptimum {
  bool found = false;
  int t1 = 0;
  int t2 = 0;
  double delay = 0.0;
};

/// Nested enumeration over (T_1, T_2) pairs keeping those that satisfy the
/// inter-green equality exactly.
OffsetOptimum brute_force_offset(const cvsig::OffsetProblem& p);
double offset_delay(const cvsig::OffsetProblem& p, int t1, int t2);

/// Event-driven queue at a signal: vehicles at fixed headway H (s) reach the
/// stop line region at free speed; they stop behind the queue at `spacing_m`
/// while red and until the start wave (`start_headway_s` per position)
/// reaches them. Returns the time after green start at which the start wave
/// passes the rear of the last stopped vehicle, plus the queue at green start.
struct DiscreteQueue {
  double t_q_s = 0.0;
  int queued_at_green = 0;
  double queue_m_at_green = 0.0;
};
DiscreteQueue discrete_queue(double headway_s, double phase_s, double red_s, double free_speed_mps,
                             double spacing_m, double start_headway_s, double horizon_s);

/// Fine-step RK4 integration of the free-road IDM ODE from rest.
double idm_free_road_distance(double v0_mps, double a_max, double exponent, double duration_s, double h = 1e-3);

// ---------------------------------------------------------------------------
// Randomized cross-checks shared by the tests, the acceptance binary and the CLI.

/// <= 3 platoons, integer greens spanning <= 20 values, default f_r step 0.05.
cvsig::TimingProblem random_timing_problem(std::mt19937_64& gen);
cvsig::OffsetProblem random_offset_problem(std::mt19937_64& gen);

/// Queue at a signal with arrivals at a fixed headway: the analytic input and
/// its discrete reference.
struct ShockwaveCase {
  cvsig::ShockwaveInput input;
  DiscreteQueue reference;
};
ShockwaveCase random_shockwave_case(std::mt19937_64& gen);

struct CrossCheck {
  int trials = 0;
  int compared = 0;    // cases with a reference value
  int mismatches = 0;
  double worst = 0.0;  // largest absolute (timing, offsets) or relative (shockwave) error
  int bound_violations = 0;  // shockwave: T_Q > C
};

CrossCheck check_timing(int trials, std::uint64_t seed);
/// A match is the identical (T_1, T_2) pair with the delay equal to 1e-9 relative.
CrossCheck check_offsets(int trials, std::uint64_t seed);
/// Mismatch: relative error above `tolerance`. References that never clear
/// within the cycle are not compared.
CrossCheck check_shockwave(int trials, std::uint64_t seed, double tolerance = 0.15);

}  // namespace oracle
