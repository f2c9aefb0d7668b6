#include "cvsig/cv_sensing.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "cvsig/units.hpp"

namespace cvsig {

std::vector<Bsm> emit_bsms(const World& world, double time_s) {
  std::vector<Bsm> out;
  const Corridor& c = world.corridor();
  for (std::size_t s = 0; s < c.segments.size(); ++s) {
    for (const auto& lane : world.lanes(static_cast<int>(s))) {
      for (const auto& v : lane) {
        if (!v.is_cv) continue;
        out.push_back(Bsm{time_s, v.id, static_cast<int>(s), v.position_m, units::mps_to_mph(v.speed_mps),
                          c.segments[s].direction});
      }
    }
  }
  return out;
}

void write_bsm_csv(std::ostream& out, std::span<const Bsm> bsms, const Corridor& corridor, bool header) {
  if (header) out << "time_s,vehicle_id,segment_id,position_m,speed_mph,direction\n";
  for (const auto& b : bsms) {
    out << b.time_s << ',' << b.vehicle_id << ',' << corridor.segment(b.segment).id << ',' << b.position_m << ','
        << b.speed_mph << ',' << to_string(b.direction) << '\n';
  }
}

std::vector<Bsm> read_bsm_csv(std::istream& in, const Corridor& corridor) {
  std::vector<Bsm> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.rfind("time_s", 0) == 0) continue;
    std::stringstream row(line);
    std::string field[6];
    for (auto& f : field) std::getline(row, f, ',');
    try {
      Bsm b;
      b.time_s = std::stod(field[0]);
      b.vehicle_id = std::stol(field[1]);
      b.segment = corridor.segment_index(field[2]);
      if (b.segment < 0) throw ValidationError("unknown segment '" + field[2] + "'");
      b.position_m = std::stod(field[3]);
      b.speed_mph = std::stod(field[4]);
      b.direction = parse_direction(field[5]);
      out.push_back(b);
    } catch (const std::exception& e) {
      throw ValidationError("bsm csv line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

double Platoon::length_m() const { return units::miles_to_meters(length_mi); }

std::vector<Platoon> identify_platoons(std::span<const Bsm> segment_bsms, const Segment& segment, int segment_index,
                                       const QueueZone& zone, const PlatoonOptions& options) {
  std::vector<Bsm> sorted(segment_bsms.begin(), segment_bsms.end());
  std::sort(sorted.begin(), sorted.end(), [](const Bsm& a, const Bsm& b) {
    return a.position_m != b.position_m ? a.position_m > b.position_m : a.vehicle_id < b.vehicle_id;
  });
  const double boundary_m = segment.length_m() - units::miles_to_meters(zone.extent_mi);
  const auto zone_of = [&](const Bsm& b) {
    return b.position_m >= boundary_m ? Zone::InsideQueueZone : Zone::BeyondQueueZone;
  };

  std::vector<Platoon> out;
  double speed_sum = 0.0;
  const auto close = [&] {
    Platoon& p = out.back();
    p.length_mi = units::meters_to_miles(p.head_position_m - p.tail_position_m);
    p.avg_speed_mph = speed_sum / p.cv_count;
    p.is_queued = p.avg_speed_mph < options.queued_speed_mph;
    p.est_total_count = p.cv_count;
  };
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const Bsm& b = sorted[i];
    const bool extend = !out.empty() && out.back().zone == zone_of(b) &&
                        out.back().tail_position_m - b.position_m <= options.max_link_gap_m;
    if (extend) {
      Platoon& p = out.back();
      p.tail_position_m = b.position_m;
      ++p.cv_count;
      speed_sum += b.speed_mph;
      continue;
    }
    if (!out.empty()) close();
    Platoon p;
    p.segment = segment_index;
    p.zone = zone_of(b);
    p.head_position_m = b.position_m;
    p.tail_position_m = b.position_m;
    p.cv_count = 1;
    speed_sum = b.speed_mph;
    out.push_back(p);
  }
  if (!out.empty()) close();
  return out;
}

double estimate_queue_length(std::span<const Platoon> platoons, const Segment& segment,
                             const QueueLengthOptions& options) {
  const double length_m = segment.length_m();
  double best = -1.0;
  for (const auto& p : platoons) {
    if (p.avg_speed_mph >= options.queued_speed_mph) continue;
    if (length_m - p.head_position_m > options.near_stop_line_m) continue;
    best = std::max(best, units::meters_to_miles(length_m - p.tail_position_m));
  }
  return best >= 0 ? std::min(best, segment.length_mi) : segment.historical_queue_mi;
}

QueueZone expected_queue_zone(const Segment& segment, int segment_index, std::span<const Bsm> segment_bsms,
                              double historical_queue_mi, double queued_speed_mph) {
  double extent = historical_queue_mi;
  for (const auto& b : segment_bsms) {
    if (b.speed_mph < queued_speed_mph) {
      extent = std::max(extent, units::meters_to_miles(segment.length_m() - b.position_m));
    }
  }
  return QueueZone{segment_index, std::clamp(extent, 0.0, segment.length_mi)};
}

double estimate_platoon_total(const Platoon& platoon, double predicted_count, double segment_length_mi,
                              double head_offset_m, int segment_cv_count) {
  const double density_per_m =
      std::max(0.0, predicted_count - segment_cv_count) / units::miles_to_meters(segment_length_mi);
  return platoon.cv_count + std::max(0.0, platoon.length_m() - head_offset_m) * density_per_m;
}

}  // namespace cvsig
