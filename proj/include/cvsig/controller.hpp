#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cvsig/corridor.hpp"
#include "cvsig/cv_sensing.hpp"
#include "cvsig/green_optimizer.hpp"
#include "cvsig/offset_optimizer.hpp"
#include "cvsig/shockwave.hpp"

namespace cvsig {

/// What the controller of one intersection knows about one approach this second.
struct ApproachView {
  int segment = -1;
  std::vector<Bsm> bsms;          // CVs on the approach
  double predicted_count = 0.0;   // N from the forecaster (or its fallback)
  double arrival_rate_vps = -1.0; // long-run entry rate; negative when unknown
};

struct SensedIntersection {
  double now_s = 0.0;
  ApproachView coordinated;
  std::vector<ApproachView> minors;
};

struct MinorActivationOptions {
  double queued_speed_mph = 5.0;
  double vehicle_spacing_m = 7.0;
};

/// True when a queued CV platoon on the minor approach reaches beyond the
/// allowable queue, or, with no CVs on it, when the vehicles predicted to have
/// accumulated during the red times the spacing exceed it. Accumulation is
/// q * red with the long-run arrival rate when known, otherwise
/// min(N, q * red) with q the predicted density times the free-flow speed.
bool minor_green_activation(const ApproachView& minor, const Segment& segment, double red_elapsed_s,
                            double max_allowable_queue_mi, const MinorActivationOptions& options = {});

/// How the closed loop picks among minimum-delay offset pairs: the optimizer's
/// own order, the pair closest to the offset in force, or the pair whose
/// platoon meets the downstream queue as it clears (T_2 + T_4 nearest T_3).
enum class OffsetTie { Optimizer, Current, QueueClearance };

struct AdaptiveConfig {
  double grace_s = 8.0;
  double recheck_s = 10.0;
  double h_s = 2.5;
  double vehicle_spacing_m = 7.0;
  double start_headway_s = 1.5;
  double queued_speed_mph = 5.0;
  ObjectiveWeights weights{};
  double fr_step = 0.05;
  double head_offset_m = 10.0;
  bool adapt_offsets = true;
  double offset_alpha = 0.8;
  double offset_transition = 0.2;  // max cycle stretch or squeeze while moving to a new offset
  OffsetTie offset_tie = OffsetTie::QueueClearance;
  // Inter-greens for the offset problem: the plan's (cycle minus coordinated
  // split) rather than the last measured reds, which drop to 0 after a rest.
  bool offset_nominal_red = true;
  double minor_extra_s = 2.0;      // minor green = n * h_s + this
  double minor_max_red_s = 120.0;  // minor recall once its red lasts this long
};

enum class ControlMode { Grace, Planned, MonitorSide, Resting };
std::string_view to_string(ControlMode m);

/// One emitted optimization, for the per-cycle decision log.
struct DecisionRecord {
  int intersection = 0;
  long cycle = 0;
  double time_s = 0.0;
  std::string event;  // plan | recheck | infeasible
  ControlMode mode = ControlMode::Planned;
  double q_d_s = 0.0;
  TimingSolution solution;
  double planned_end_s = 0.0;
};

void write_decision_header(std::ostream& out);
void write_decision(std::ostream& out, const DecisionRecord& r);

/// Real-time control of one intersection: grace period, platoon-driven green,
/// 10-s recheck, minor-green activation, and queue-aware minor service.
class AdaptiveController {
 public:
  AdaptiveController(const Corridor& corridor, int intersection, AdaptiveConfig config = {});

  /// Called when the coordinated green starts; estimates Q_d from the queue
  /// seen at that moment.
  void on_coordinated_green_start(const SignalState& s, const SensedIntersection& in);
  void on_minor_green_start(const SignalState& s, const SensedIntersection& in);
  /// Called once per second; may end the active green.
  void tick(SignalState& s, const SensedIntersection& in);

  ControlMode mode() const { return mode_; }
  double q_d_s() const { return q_d_; }
  double planned_end_s() const { return planned_end_; }
  const std::vector<DecisionRecord>& decisions() const { return decisions_; }
  std::vector<DecisionRecord> take_decisions();
  const ShockwaveResult& last_shockwave() const { return wave_; }
  /// Number of solutions checked against T_q <= g, the bounds and the ring equality.
  long verified_solutions() const { return verified_; }

  /// Timing problem for the coordinated approach with time origin `now`.
  TimingProblem build_problem(const SignalState& s, const SensedIntersection& in) const;

 private:
  void optimize(const SignalState& s, const SensedIntersection& in, const char* event);
  bool minor_call(const SignalState& s, const SensedIntersection& in) const;
  double latest_major_end(const SignalState& s) const;

  const Corridor* corridor_;
  int index_;
  AdaptiveConfig cfg_;
  GreenBounds bounds_{};
  ControlMode mode_ = ControlMode::Grace;
  double q_d_ = 0.0;
  double planned_end_ = 0.0;
  bool planned_ = false;
  bool rechecked_ = false;
  double minor_end_ = 0.0;
  ShockwaveResult wave_{};
  std::vector<DecisionRecord> decisions_;
  long verified_ = 0;
};

/// Sensed inputs of an upstream/downstream pair for the offset problem.
struct OffsetInputs {
  double upstream_red_s = 0.0;
  double downstream_red_s = 0.0;
  double side_inflow_vph = 0.0;  // both side streets of the upstream intersection
  double upstream_flow_vph = 0.0;
  double v_bf_mph = -6.0;
};

/// Applies the optimized offset to `downstream` right after its coordinated
/// green started. The next green start moves toward upstream + T_2 but the
/// cycle in between is stretched or squeezed by at most `transition * C`.
/// Returns the solution, or nothing when the problem had no admissible T_2.
std::optional<OffsetSolution> update_offset(SignalState& downstream, const SignalState& upstream,
                                            const Segment& link, const OffsetInputs& in,
                                            const AdaptiveConfig& cfg, double h_s = 2.5);

}  // namespace cvsig
