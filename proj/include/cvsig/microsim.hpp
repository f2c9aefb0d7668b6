#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvsig/corridor.hpp"

namespace cvsig {

/// Intelligent Driver Model parameters (SI units). Acceleration values are
/// m/s^2; the desired speed comes from the segment's free-flow speed.
struct IdmParams {
  double min_gap_m = 2.0;
  double accel_max = 1.0;
  double decel_comfort = 1.7;
  double time_headway_s = 0.5;
  double exponent = 4.0;
  double desired_speed_mps = 20.0;
  double emergency_decel = 9.0;
};

/// Gap passed when there is no leader.
inline constexpr double kNoLeaderGap = 1e9;

struct DynamicsLog {
  long violations = 0;
};

/// Standard IDM acceleration clamped to [-emergency_decel, accel_max].
/// A nonpositive gap returns the emergency value and is counted in `log`.
double idm_acceleration(double speed, double leader_speed, double gap, const IdmParams& p,
                        DynamicsLog* log = nullptr);

struct Vehicle {
  long id = 0;
  double position_m = 0.0;  // front bumper, from segment start
  double speed_mps = 0.0;
  double length_m = 5.0;
  bool is_cv = false;
  std::vector<int> route;  // segment indices; the last entry's stop line is the exit
  std::size_t leg = 0;
  int lane = 0;
  double spawn_time_s = 0.0;
  double cumulative_stopped_s = 0.0;
  bool committed = false;   // chose to run the current yellow
  bool stopping = false;    // chose to stop for the current yellow/red

  int segment() const { return route[leg]; }
  bool last_leg() const { return leg + 1 == route.size(); }
};

/// One scheduled vehicle entry. Routes and the CV flag are fixed at schedule
/// time so paired runs see identical traffic.
struct Arrival {
  double time_s = 0.0;
  long id = 0;
  std::vector<int> route;
  bool is_cv = false;
};

struct EntryDemand {
  int segment = -1;
  double rate_vph = 0.0;
};

/// Poisson arrival times on each entry for [0, duration_s). Deterministic in
/// `seed`; each entry draws from its own stream.
std::vector<std::vector<double>> spawn_demand(std::span<const EntryDemand> entries, double duration_s,
                                              std::uint64_t seed);

/// Route and CV-equipage model used to turn arrival times into `Arrival`s.
struct TurningModel {
  double major_exit_fraction = 0.0;   // arterial vehicles leaving at each intersection
  double minor_turn_fraction = 0.0;   // side-street vehicles turning onto the arterial
};

std::vector<Arrival> build_arrivals(const Corridor& corridor, std::span<const EntryDemand> entries,
                                    double duration_s, const TurningModel& turning, double penetration,
                                    std::uint64_t seed);

struct DetectorReading {
  double time_s = 0.0;  // interval end
  int segment = -1;
  double mean_speed_mph = 0.0;
  double max_queue_len_mi = 0.0;
  double stopped_delay_s = 0.0;
  long samples = 0;   // vehicle-steps behind the mean speed
  long entered = 0;   // vehicles that entered the segment in the interval
};

struct SimConfig {
  double dt_s = 0.5;
  double stop_speed_mph = 5.0;
  double jam_gap_m = 10.0;
  double vehicle_length_m = 5.0;
  // At yellow onset a vehicle stops if it can at this deceleration, else it
  // proceeds. Above IDM's comfortable braking so nobody is still short of the
  // stop line when the conflicting green starts.
  double yellow_decel_mps2 = 3.0;
  IdmParams idm{};
};

class SimulationFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic corridor simulator. Vehicles follow IDM within a lane, obey
/// the downstream signal, and are retired at the stop line ending their route.
class World {
 public:
  World(const Corridor& corridor, SimConfig config);

  void schedule(std::vector<Arrival> arrivals);
  /// Advances the clock by dt. `signals` holds one state per intersection.
  void step(std::span<const SignalState> signals);
  void step(double dt_s, std::span<const SignalState> signals);

  /// Closes the current detector interval and returns one reading per segment.
  std::vector<DetectorReading> read_detectors();

  double time_s() const { return time_s_; }
  const Corridor& corridor() const { return *corridor_; }
  const SimConfig& config() const { return config_; }

  /// Vehicles of segment `s`, lane by lane, front (nearest the stop line) first.
  const std::vector<std::deque<Vehicle>>& lanes(int segment) const { return lanes_[static_cast<std::size_t>(segment)]; }
  int count_on(int segment) const;
  /// Vehicles that crossed the stop line of `segment` since construction.
  long discharged(int segment) const { return discharged_[static_cast<std::size_t>(segment)]; }
  /// Times at which vehicles crossed the stop line of `segment`.
  const std::vector<double>& crossing_times(int segment) const { return crossings_[static_cast<std::size_t>(segment)]; }
  void record_crossings(bool on) { record_crossings_ = on; }

  long spawned() const { return spawned_; }
  long retired() const { return retired_; }
  long waiting() const;
  long in_network() const;
  long cv_spawned() const { return cv_spawned_; }
  double min_gap_m() const { return min_gap_; }
  long dynamics_violations() const { return log_.violations; }
  double total_travel_time_s() const { return travel_time_sum_; }

  /// Places a vehicle directly; used by tests to craft scenes.
  void place(int segment, Vehicle v);

 private:
  struct DetectorAccum {
    double speed_sum_mps = 0.0;
    long samples = 0;
    double stopped_s = 0.0;
    double max_queue_m = 0.0;
    long entered = 0;
  };

  void admit_arrivals();
  void try_insert(int segment);
  double leader_gap(const Vehicle& v, const std::deque<Vehicle>& lane, std::size_t idx, const Segment& seg,
                    double& leader_speed) const;
  const Vehicle* next_lane_tail(const Vehicle& v) const;
  void measure(double dt);
  void insert_back(int segment, Vehicle v);

  const Corridor* corridor_;
  SimConfig config_;
  double time_s_ = 0.0;
  std::vector<std::vector<std::deque<Vehicle>>> lanes_;
  std::vector<std::deque<Vehicle>> entry_queues_;  // vehicles waiting for room at an entry
  std::vector<int> round_robin_;
  std::vector<Arrival> pending_;
  std::size_t next_arrival_ = 0;
  std::vector<DetectorAccum> accum_;
  std::vector<long> discharged_;
  std::vector<std::vector<double>> crossings_;
  bool record_crossings_ = false;
  double interval_start_s_ = 0.0;
  long spawned_ = 0;
  long retired_ = 0;
  long cv_spawned_ = 0;
  double min_gap_ = kNoLeaderGap;
  double travel_time_sum_ = 0.0;
  DynamicsLog log_;
};

}  // namespace cvsig
