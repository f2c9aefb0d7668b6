#pragma once

#include <span>
#include <vector>

#include "cvsig/corridor.hpp"

namespace cvsig {

struct GreenBounds {
  double g_coord_max_s = 0.0;
  double g_noncoord_max_s = 0.0;
  double g_min_s = 4.0;
};

struct NoncoordinatedPhase {
  double min_green_s = 4.0;
  double clearance_s = 0.0;
};

/// C - PC_coord - sum(g_min + PC) over the non-coordinated phases.
/// Throws ValidationError when the result is below g_min.
double max_green_coordinated(double cycle_s, double coord_clearance_s, std::span<const NoncoordinatedPhase> noncoord,
                             double g_min_s = 4.0);

/// min(g_fixed, (C - lost) * VC_noncoord / VC_total); g_min when VC_total is 0.
double max_green_noncoordinated(double g_fixed_s, double cycle_s, double lost_time_s, double vc_noncoord,
                                double vc_total, double g_min_s = 4.0);

/// Optimizer view of one approaching platoon. Distances in miles, speed mph.
struct PlatoonTerm {
  double length_mi = 0.0;         // d_p
  double speed_mph = 0.0;         // V_a
  double head_distance_mi = 0.0;  // head to stop line; gives T_h
  double d_ahead_mi = 0.0;        // used when the platoon is affected by the queue
  int cv_count = 1;
  bool affected = false;          // member of set A
};

struct ObjectiveWeights {
  double w1 = 0.5;  // waiting time
  double w2 = 0.5;  // progression
};

struct TimingProblem {
  std::vector<PlatoonTerm> platoons;  // arrival order
  double segment_count = 0.0;         // N, predicted
  int segment_cv_count = 0;           // CVs seen on the segment; excluded from follower density
  double segment_length_mi = 1.0;     // L
  double h_s = 2.5;
  double ig_cor_s = 0.0;
  double q_d_s = 0.0;                 // pre-existing queue clear time
  double cycle_s = 0.0;
  double g_lo_s = 0.0;                // coordinated green range
  double g_hi_s = 0.0;
  double intergreen_total_s = 0.0;    // both clearances; g_noncor = C - this - g_cor
  ObjectiveWeights weights{};
  double fr_step = 0.05;
  double head_offset_m = 10.0;
  double creep_speed_mph = 1.0;
};

/// [max(g_min, C - IG - g_noncoord_max), min(g_coord_max, C - IG - g_min)].
void set_green_range(TimingProblem& problem, const PhasePlan& plan, const GreenBounds& bounds);

double blocked_wait_time(const TimingProblem& p, std::span<const double> f_r);   // T_s
double queue_clear_time(const TimingProblem& p, std::span<const double> f_r);    // T_q
double nonselected_wait(const TimingProblem& p, std::span<const double> f_r);    // T_p
double progression_score(const TimingProblem& p, std::span<const double> f_r);

/// Analytic per-instance ranges used for min-max normalization.
struct ObjectiveRange {
  double wait_lo = 0.0, wait_hi = 0.0;
  double prog_lo = 0.0, prog_hi = 0.0;
};
ObjectiveRange objective_range(const TimingProblem& p);

/// w1 * norm(T_q + T_s + T_p) - w2 * norm(progression).
double scalarized_objective(const TimingProblem& p, std::span<const double> f_r);

struct TimingSolution {
  std::vector<double> f_r;
  int g_cor = 0;
  int g_noncor = 0;
  int g_required = 0;  // smallest green reaching the optimum
  double t_s = 0.0, t_q = 0.0, t_p = 0.0, progression = 0.0;
  double objective = 0.0;
};

/// Best admission vector for one fixed coordinated green.
struct GreenCandidate {
  int g = 0;
  bool feasible = false;
  double objective = 0.0;
  std::vector<double> f_r;
};

/// Per-green sweep; the OpenMP version and the serial reference return the same vector.
std::vector<GreenCandidate> green_sweep(const TimingProblem& p);
std::vector<GreenCandidate> green_sweep_serial(const TimingProblem& p);
GreenCandidate best_admission(const TimingProblem& p, int g);

/// Exact optimum over integer greens and the f_r grid. Ties go to the larger
/// green, then the lexicographically larger f_r. Throws ValidationError naming
/// the violated constraint when no green is feasible.
TimingSolution optimize_intersection(const TimingProblem& p);
TimingSolution optimize_intersection_serial(const TimingProblem& p);

/// Throws unless T_q <= g_cor, the green bounds and the ring equality hold.
void check_solution(const TimingProblem& p, const TimingSolution& s, double tol = 1e-9);

}  // namespace cvsig
