#pragma once

#include <iosfwd>
#include <limits>
#include <span>
#include <vector>

#include "cvsig/corridor.hpp"
#include "cvsig/microsim.hpp"

namespace cvsig {

/// Subset of an SAE J2735 basic safety message.
struct Bsm {
  double time_s = 0.0;
  long vehicle_id = 0;
  int segment = -1;
  double position_m = 0.0;  // from segment start; the stop line is at the segment length
  double speed_mph = 0.0;
  Direction direction = Direction::MajorEast;
};

/// One record per CV currently on a segment (vehicles still waiting at an
/// entry are not yet broadcasting).
std::vector<Bsm> emit_bsms(const World& world, double time_s);

void write_bsm_csv(std::ostream& out, std::span<const Bsm> bsms, const Corridor& corridor, bool header = true);
std::vector<Bsm> read_bsm_csv(std::istream& in, const Corridor& corridor);

enum class Zone { InsideQueueZone, BeyondQueueZone };

struct QueueZone {
  int segment = -1;
  double extent_mi = 0.0;  // measured upstream from the stop line
};

struct Platoon {
  int segment = -1;
  Zone zone = Zone::BeyondQueueZone;
  double head_position_m = 0.0;  // CV nearest the stop line
  double tail_position_m = 0.0;  // CV farthest from the stop line
  double length_mi = 0.0;
  double avg_speed_mph = 0.0;
  int cv_count = 0;
  double est_total_count = 0.0;
  bool is_queued = false;

  double length_m() const;
};

struct PlatoonOptions {
  double queued_speed_mph = 5.0;
  /// Consecutive CVs farther apart than this start a new platoon. The default
  /// chains every CV of a zone.
  double max_link_gap_m = std::numeric_limits<double>::infinity();
};

/// Chains consecutive CVs of one zone into platoons; platoons never span the
/// zone boundary. Output is ordered from the stop line upstream.
std::vector<Platoon> identify_platoons(std::span<const Bsm> segment_bsms, const Segment& segment, int segment_index,
                                       const QueueZone& zone, const PlatoonOptions& options = {});

struct QueueLengthOptions {
  double queued_speed_mph = 5.0;
  double near_stop_line_m = 15.0;
};

/// L_Q in miles: rear point of a queued platoon whose head is near the stop
/// line, otherwise the segment's historical queue length.
double estimate_queue_length(std::span<const Platoon> platoons, const Segment& segment,
                             const QueueLengthOptions& options = {});

/// max(rear of currently queued CVs, historical queue), clamped to the segment.
QueueZone expected_queue_zone(const Segment& segment, int segment_index, std::span<const Bsm> segment_bsms,
                              double historical_queue_mi, double queued_speed_mph = 5.0);

/// CV count plus the non-CVs implied by the predicted density:
/// cv_count + max(0, d - head_offset) * N_non / L, with d and L in meters.
/// N_non = max(0, N - segment_cv_count); CVs are counted directly, so only the
/// remainder of the prediction is spread over the platoon body.
double estimate_platoon_total(const Platoon& platoon, double predicted_count, double segment_length_mi,
                              double head_offset_m = 10.0, int segment_cv_count = 0);

}  // namespace cvsig
