#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "cvsig/corridor.hpp"

namespace cvsig {

/// Raised when the downstream discharge cannot exceed the upstream inflow.
class OversaturatedError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// One upstream/downstream pair along the coordinated direction. Flows in
/// veh/h, times in seconds, L in miles, speeds in mph (v_bf negative).
struct OffsetProblem {
  double r_n_s = 0.0;   // upstream inter-green, whole seconds
  double r_n1_s = 0.0;  // downstream inter-green, whole seconds
  double q_s1_vph = 0.0;
  double q_s2_vph = 0.0;
  double q_up_vph = 0.0;
  double h_s = 2.5;
  double length_mi = 0.5;
  double v_ffs_mph = 45.0;
  double v_bf_mph = -6.0;
  double alpha = 0.8;
  double cycle_s = 90.0;

  double q_dis_vph() const { return 3600.0 / h_s; }
};

struct DerivedQuantities {
  double t3_s = 0.0;
  double t4_s = 0.0;
  double t_req_s = 0.0;
  double l_w_mi = 0.0;
};

/// Throws OversaturatedError when Q_dis <= Q_up and ValidationError when
/// V_FFS <= |v_bf| or v_bf > 0.
DerivedQuantities derived_quantities(const OffsetProblem& p, int t1, int t2);

/// max(0, T_2 + T_4 - T_3) * T_req * Q_up / 2, with Q_up in veh/s and a
/// negative T_req (no queue to clear) counted as zero.
double triangle_delay(const OffsetProblem& p, int t1, int t2);
double triangle_area(double ab_s, double t_req_s, double q_up_vph);

struct OffsetSolution {
  int t1 = 0;
  int t2 = 0;
  DerivedQuantities derived;
  double delay = 0.0;
};

/// Largest |T_2| allowed: L / (V_FFS * alpha) in seconds, and never beyond C/2.
int t2_limit(const OffsetProblem& p);

/// Inclusive T_1 search range [1, floor(C/2)].
std::pair<int, int> t1_range(const OffsetProblem& p);

/// T_2 implied by T_1 through r_{n+1} = |r_n - T_1| + T_2.
int implied_t2(const OffsetProblem& p, int t1);

/// Exhaustive search over T_1 in [1, C/2]. Ties go to the smaller |T_2|, then
/// the smaller T_1. Empty when no T_1 gives an admissible T_2.
std::optional<OffsetSolution> optimize_offset(const OffsetProblem& p);
std::optional<OffsetSolution> optimize_offset_serial(const OffsetProblem& p);

}  // namespace cvsig
