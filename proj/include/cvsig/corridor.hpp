#pragma once

#include <array>
#include <filesystem>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace cvsig {

/// Thrown when a scenario description or an argument violates a contract.
/// The message names the offending field.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Direction { MajorEast, MajorWest, Minor };

/// Which side street a minor approach comes from. Traffic from the north
/// approach travels south and turns right onto the westbound arterial; the
/// south approach feeds the eastbound arterial.
enum class MinorSide { None, North, South };

std::string_view to_string(Direction d);
Direction parse_direction(std::string_view s);

struct Segment {
  std::string id;
  double length_mi = 0.0;
  double free_flow_speed_mph = 0.0;
  Direction direction = Direction::MajorEast;
  MinorSide side = MinorSide::None;
  int lane_count = 1;
  double historical_queue_mi = 0.0;
  double max_allowable_queue_mi = 0.0;
  int downstream_intersection = -1;  // stop line sits at the segment end
  int upstream_intersection = -1;    // -1 for corridor entries and side streets

  bool is_major() const { return direction != Direction::Minor; }
  double length_m() const;
};

/// One ring-barrier movement. Phases 2/6 are the arterial, 4/8 the side street.
struct Phase {
  int number = 0;
  double green_s = 0.0;  // nominal split green
  double min_green_s = 4.0;
  double max_green_s = 0.0;
  double yellow_s = 0.0;
  double all_red_s = 0.0;

  double clearance_s() const { return yellow_s + all_red_s; }
};

/// Two-phase plan stored in four slots (2, 4, 6, 8) so additional phases can
/// be populated later without a schema change.
struct PhasePlan {
  double cycle_s = 0.0;
  std::array<Phase, 4> phases{};
  double lost_time_s = 0.0;

  const Phase& phase(int number) const;
  const Phase& coordinated() const { return phase(2); }
  const Phase& noncoordinated() const { return phase(4); }
  double major_clearance_s() const { return coordinated().clearance_s(); }
  double minor_clearance_s() const { return noncoordinated().clearance_s(); }
  /// Shortest cycle that serves both phase pairs at minimum green.
  double min_service_s() const;
};

/// Throws ValidationError unless every ring sums to the cycle and every
/// duration is consistent.
void validate(const PhasePlan& plan, std::string_view where = "phase_plan");

struct Intersection {
  std::string name;
  PhasePlan plan;
  int east_approach = -1;
  int west_approach = -1;
  std::vector<int> minor_approaches;
};

struct Corridor {
  std::vector<Segment> segments;
  std::vector<Intersection> intersections;
  Direction coordinated_direction = Direction::MajorEast;

  int segment_index(std::string_view id) const;
  const Segment& segment(int index) const { return segments.at(static_cast<std::size_t>(index)); }

  /// Approach of `intersection` carrying traffic in major direction `d`.
  int major_approach(int intersection, Direction d) const;
  /// Segment entered after crossing `intersection` travelling in `d`, or -1
  /// when the movement leaves the corridor.
  int major_exit(int intersection, Direction d) const;
  /// Intersection upstream of `intersection` along `d`, or -1.
  int upstream_along(int intersection, Direction d) const;
  /// First intersection met by traffic entering the corridor in `d`.
  int first_along(Direction d) const;
  std::vector<int> segments_of(Direction d) const;
};

/// Parameters of the generated test corridor: identical intersections spaced
/// evenly along an east-west arterial with north and south side streets.
struct SyntheticCorridor {
  int intersections = 4;
  double link_mi = 0.5;         // between neighbouring intersections and on the arterial entries
  double minor_mi = 0.25;
  double major_ffs_mph = 45.0;
  double minor_ffs_mph = 35.0;
  double cycle_s = 90.0;
  double major_green_s = 52.0;
  double yellow_s = 4.0;
  double all_red_s = 2.0;
  double min_green_s = 4.0;
  double major_max_green_s = 70.0;
  double minor_max_green_s = 30.0;
  double major_historical_queue_mi = 0.03;
  double minor_historical_queue_mi = 0.02;
  double minor_max_allowable_queue_mi = 0.03;
};

nlohmann::json synthetic_corridor_json(const SyntheticCorridor& layout);

/// Builds and validates a corridor from the "corridor" node of a scenario.
Corridor build_corridor(const nlohmann::json& config);
Corridor load_corridor(const std::filesystem::path& scenario_file);

enum class Interval { MajorGreen, MajorYellow, MajorAllRed, MinorGreen, MinorYellow, MinorAllRed };
enum class Indication { Green, Yellow, Red };

enum class SignalEvent { None, CoordinatedGreenStart, MinorGreenStart };

/// Dynamic signal state of one intersection. The coordinated green start of
/// the next cycle is `next_green_start_s`; controllers align it with the
/// upstream intersection through `apply_offset`.
struct SignalState {
  Interval interval = Interval::MajorGreen;
  double interval_start_s = 0.0;
  double scheduled_change_s = std::numeric_limits<double>::infinity();
  double cycle_s = 0.0;
  double offset_s = 0.0;
  double upstream_green_start_s = 0.0;
  double next_green_start_s = 0.0;
  double green_start_s = 0.0;
  double last_green_end_s = 0.0;
  double last_minor_end_s = 0.0;
  long cycle_index = 0;

  bool major_green() const { return interval == Interval::MajorGreen; }
  bool minor_green() const { return interval == Interval::MinorGreen; }
  double countdown_s(double now) const { return scheduled_change_s - now; }
  /// Red time seen by the arterial before the current coordinated green.
  double last_red_s() const { return green_start_s - last_green_end_s; }
};

SignalState initial_signal_state(const PhasePlan& plan, double first_green_start_s);

Indication indication(const SignalState& s, Direction d);

/// Shifts the next coordinated green start to `t2_s` after the upstream
/// green start. Cycle length and phase order are untouched.
/// Throws ValidationError when |t2_s| > C/2.
SignalState apply_offset(const SignalState& state, double t2_s);

/// Ends the active green now; the clearance intervals follow automatically.
/// No-op outside a green interval.
void end_green(SignalState& s, const PhasePlan& plan, double now);

/// Advances clearance intervals whose time has come and handles the cycle
/// boundary while the arterial rests in green.
SignalEvent advance_signal(SignalState& s, const PhasePlan& plan, double now);

}  // namespace cvsig
