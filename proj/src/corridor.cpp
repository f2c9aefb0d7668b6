#include "cvsig/corridor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "cvsig/units.hpp"

namespace cvsig {

namespace {

constexpr double kTimeEps = 1e-9;

[[noreturn]] void fail(const std::string& field, const std::string& what) {
  throw ValidationError(field + ": " + what);
}

template <typename T>
T require(const nlohmann::json& node, const std::string& key, const std::string& where) {
  if (!node.contains(key)) fail(where + "." + key, "missing");
  try {
    return node.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(where + "." + key, e.what());
  }
}

template <typename T>
T optional(const nlohmann::json& node, const std::string& key, T fallback) {
  if (!node.contains(key) || node.at(key).is_null()) return fallback;
  return node.at(key).get<T>();
}

Phase parse_phase(const nlohmann::json& node, const std::string& where) {
  Phase p;
  p.number = require<int>(node, "number", where);
  p.green_s = require<double>(node, "green_s", where);
  p.min_green_s = optional<double>(node, "min_green_s", 4.0);
  p.max_green_s = require<double>(node, "max_green_s", where);
  p.yellow_s = require<double>(node, "yellow_s", where);
  p.all_red_s = require<double>(node, "all_red_s", where);
  return p;
}

PhasePlan parse_plan(const nlohmann::json& node, const std::string& where) {
  PhasePlan plan;
  plan.cycle_s = require<double>(node, "cycle_s", where);
  plan.lost_time_s = optional<double>(node, "lost_time_s", 0.0);
  const auto& phases = node.at("phases");
  if (!phases.is_array() || phases.size() != 4) fail(where + ".phases", "expected four phases (2, 4, 6, 8)");
  std::array<bool, 4> seen{};
  for (std::size_t i = 0; i < 4; ++i) {
    Phase p = parse_phase(phases[i], where + ".phases[" + std::to_string(i) + "]");
    int slot = -1;
    switch (p.number) {
      case 2: slot = 0; break;
      case 4: slot = 1; break;
      case 6: slot = 2; break;
      case 8: slot = 3; break;
      default: fail(where + ".phases[" + std::to_string(i) + "].number", "must be 2, 4, 6 or 8");
    }
    if (seen[slot]) fail(where + ".phases[" + std::to_string(i) + "].number", "duplicate phase");
    seen[slot] = true;
    plan.phases[slot] = p;
  }
  if (!node.contains("lost_time_s")) {
    plan.lost_time_s = plan.coordinated().clearance_s() + plan.noncoordinated().clearance_s();
  }
  validate(plan, where);
  return plan;
}

}  // namespace

std::string_view to_string(Direction d) {
  switch (d) {
    case Direction::MajorEast: return "major-east";
    case Direction::MajorWest: return "major-west";
    case Direction::Minor: return "minor";
  }
  return "?";
}

Direction parse_direction(std::string_view s) {
  if (s == "major-east" || s == "east") return Direction::MajorEast;
  if (s == "major-west" || s == "west") return Direction::MajorWest;
  if (s == "minor") return Direction::Minor;
  throw ValidationError("direction: unknown value '" + std::string(s) + "'");
}

double Segment::length_m() const { return units::miles_to_meters(length_mi); }

const Phase& PhasePlan::phase(int number) const {
  for (const auto& p : phases) {
    if (p.number == number) return p;
  }
  throw ValidationError("phase_plan: no phase " + std::to_string(number));
}

double PhasePlan::min_service_s() const {
  return coordinated().min_green_s + major_clearance_s() + noncoordinated().min_green_s + minor_clearance_s();
}

void validate(const PhasePlan& plan, std::string_view where) {
  const std::string w(where);
  if (!(plan.cycle_s > 0)) fail(w + ".cycle_s", "must be positive");
  if (plan.lost_time_s < 0) fail(w + ".lost_time_s", "must be nonnegative");
  for (const auto& p : plan.phases) {
    const std::string pw = w + ".phase" + std::to_string(p.number);
    if (p.green_s < 0 || p.min_green_s < 0 || p.max_green_s < 0 || p.yellow_s < 0 || p.all_red_s < 0) {
      fail(pw, "durations must be nonnegative");
    }
    if (p.min_green_s > p.max_green_s) fail(pw + ".min_green_s", "exceeds max_green_s");
  }
  // Ring 1 holds phases 2 and 4, ring 2 holds 6 and 8.
  const auto ring = [&](int a, int b) {
    const Phase& pa = plan.phase(a);
    const Phase& pb = plan.phase(b);
    return pa.green_s + pa.clearance_s() + pb.green_s + pb.clearance_s();
  };
  for (auto [a, b] : {std::pair{2, 4}, std::pair{6, 8}}) {
    if (std::abs(ring(a, b) - plan.cycle_s) > 1e-9) {
      fail(w + ".phases", "ring " + std::to_string(a) + "/" + std::to_string(b) + " sums to " +
                              std::to_string(ring(a, b)) + " instead of the cycle " + std::to_string(plan.cycle_s));
    }
  }
  if (plan.phase(2).green_s != plan.phase(6).green_s || plan.phase(2).clearance_s() != plan.phase(6).clearance_s()) {
    fail(w + ".phase6", "must share the barrier with phase 2");
  }
}

int Corridor::segment_index(std::string_view id) const {
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (segments[i].id == id) return static_cast<int>(i);
  }
  return -1;
}

int Corridor::major_approach(int intersection, Direction d) const {
  const auto& x = intersections.at(static_cast<std::size_t>(intersection));
  return d == Direction::MajorEast ? x.east_approach : x.west_approach;
}

int Corridor::upstream_along(int intersection, Direction d) const {
  const int n = static_cast<int>(intersections.size());
  const int up = d == Direction::MajorEast ? intersection - 1 : intersection + 1;
  return (up >= 0 && up < n) ? up : -1;
}

int Corridor::first_along(Direction d) const {
  return d == Direction::MajorEast ? 0 : static_cast<int>(intersections.size()) - 1;
}

int Corridor::major_exit(int intersection, Direction d) const {
  const int n = static_cast<int>(intersections.size());
  const int next = d == Direction::MajorEast ? intersection + 1 : intersection - 1;
  if (next < 0 || next >= n) return -1;
  return major_approach(next, d);
}

std::vector<int> Corridor::segments_of(Direction d) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (segments[i].direction == d) out.push_back(static_cast<int>(i));
  }
  return out;
}

Corridor build_corridor(const nlohmann::json& config) {
  const nlohmann::json& root = config.contains("corridor") ? config.at("corridor") : config;
  Corridor c;
  c.coordinated_direction = parse_direction(optional<std::string>(root, "coordinated_direction", "major-east"));
  if (c.coordinated_direction == Direction::Minor) fail("corridor.coordinated_direction", "must be a major direction");

  if (!root.contains("intersections") || !root.at("intersections").is_array() || root.at("intersections").empty()) {
    fail("corridor.intersections", "expected a non-empty array");
  }
  const auto& xs = root.at("intersections");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::string where = "corridor.intersections[" + std::to_string(i) + "]";
    Intersection x;
    x.name = optional<std::string>(xs[i], "name", "I" + std::to_string(i + 1));
    if (!xs[i].contains("phase_plan")) fail(where + ".phase_plan", "missing");
    x.plan = parse_plan(xs[i].at("phase_plan"), where + ".phase_plan");
    c.intersections.push_back(std::move(x));
  }
  const int n = static_cast<int>(c.intersections.size());

  if (!root.contains("segments") || !root.at("segments").is_array()) fail("corridor.segments", "expected an array");
  const auto& segs = root.at("segments");
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const std::string where = "corridor.segments[" + std::to_string(i) + "]";
    const auto& node = segs[i];
    Segment s;
    s.id = require<std::string>(node, "id", where);
    s.direction = parse_direction(require<std::string>(node, "direction", where));
    s.length_mi = require<double>(node, "length_mi", where);
    s.free_flow_speed_mph = require<double>(node, "free_flow_speed_mph", where);
    s.lane_count = optional<int>(node, "lane_count", 1);
    s.historical_queue_mi = require<double>(node, "historical_queue_mi", where);
    s.max_allowable_queue_mi = optional<double>(node, "max_allowable_queue_mi", s.length_mi);
    s.downstream_intersection = require<int>(node, "to", where);
    s.upstream_intersection = optional<int>(node, "from", -1);
    if (s.direction == Direction::Minor) {
      const auto side = require<std::string>(node, "side", where);
      if (side == "north") s.side = MinorSide::North;
      else if (side == "south") s.side = MinorSide::South;
      else fail(where + ".side", "must be 'north' or 'south'");
    }

    if (!(s.length_mi > 0)) fail(where + ".length_mi", "must be positive");
    if (!(s.free_flow_speed_mph > 0)) fail(where + ".free_flow_speed_mph", "must be positive");
    if (s.lane_count < 1) fail(where + ".lane_count", "must be a positive integer");
    if (!(s.historical_queue_mi > 0) || s.historical_queue_mi > s.length_mi) {
      fail(where + ".historical_queue_mi", "must lie in (0, length_mi]");
    }
    if (!(s.max_allowable_queue_mi > 0) || s.max_allowable_queue_mi > s.length_mi) {
      fail(where + ".max_allowable_queue_mi", "must lie in (0, length_mi]");
    }
    if (s.downstream_intersection < 0 || s.downstream_intersection >= n) fail(where + ".to", "unknown intersection");
    if (c.segment_index(s.id) >= 0) fail(where + ".id", "duplicate id '" + s.id + "'");
    c.segments.push_back(std::move(s));
  }

  // Topology: one arterial approach per direction per intersection, chained
  // consecutively; side-street approaches have no upstream intersection.
  for (std::size_t i = 0; i < c.segments.size(); ++i) {
    const Segment& s = c.segments[i];
    const std::string where = "corridor.segments[" + std::to_string(i) + "]";
    auto& x = c.intersections[static_cast<std::size_t>(s.downstream_intersection)];
    const int idx = static_cast<int>(i);
    switch (s.direction) {
      case Direction::MajorEast: {
        if (x.east_approach >= 0) fail(where + ".to", "intersection already has an eastbound approach");
        const int expected = s.downstream_intersection == 0 ? -1 : s.downstream_intersection - 1;
        if (s.upstream_intersection != expected) fail(where + ".from", "eastbound segments must chain consecutively");
        x.east_approach = idx;
        break;
      }
      case Direction::MajorWest: {
        if (x.west_approach >= 0) fail(where + ".to", "intersection already has a westbound approach");
        const int expected = s.downstream_intersection == n - 1 ? -1 : s.downstream_intersection + 1;
        if (s.upstream_intersection != expected) fail(where + ".from", "westbound segments must chain consecutively");
        x.west_approach = idx;
        break;
      }
      case Direction::Minor:
        if (s.upstream_intersection != -1) fail(where + ".from", "side-street approaches have no upstream intersection");
        for (int other : x.minor_approaches) {
          if (c.segments[static_cast<std::size_t>(other)].side == s.side) fail(where + ".side", "duplicate side");
        }
        x.minor_approaches.push_back(idx);
        break;
    }
  }
  for (int i = 0; i < n; ++i) {
    const auto& x = c.intersections[static_cast<std::size_t>(i)];
    const std::string where = "corridor.intersections[" + std::to_string(i) + "]";
    if (x.east_approach < 0) fail(where, "missing eastbound approach segment");
    if (x.west_approach < 0) fail(where, "missing westbound approach segment");
    if (i + 1 < n) {
      const double east = c.segments[static_cast<std::size_t>(c.intersections[static_cast<std::size_t>(i + 1)].east_approach)].length_mi;
      const double west = c.segments[static_cast<std::size_t>(x.west_approach)].length_mi;
      if (std::abs(east - west) > 1e-9) fail(where, "eastbound and westbound links to the next intersection differ in length");
    }
  }
  return c;
}

Corridor load_corridor(const std::filesystem::path& scenario_file) {
  std::ifstream in(scenario_file);
  if (!in) throw ValidationError(scenario_file.string() + ": cannot open");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(scenario_file.string() + ": " + e.what());
  }
  return build_corridor(j);
}

SignalState initial_signal_state(const PhasePlan& plan, double first_green_start_s) {
  SignalState s;
  s.cycle_s = plan.cycle_s;
  s.interval = Interval::MajorGreen;
  s.interval_start_s = first_green_start_s - plan.cycle_s;
  s.green_start_s = s.interval_start_s;
  s.last_green_end_s = s.green_start_s;
  s.last_minor_end_s = s.green_start_s;
  s.next_green_start_s = first_green_start_s;
  s.upstream_green_start_s = first_green_start_s;
  return s;
}

Indication indication(const SignalState& s, Direction d) {
  const bool major = d != Direction::Minor;
  switch (s.interval) {
    case Interval::MajorGreen: return major ? Indication::Green : Indication::Red;
    case Interval::MajorYellow: return major ? Indication::Yellow : Indication::Red;
    case Interval::MinorGreen: return major ? Indication::Red : Indication::Green;
    case Interval::MinorYellow: return major ? Indication::Red : Indication::Yellow;
    case Interval::MajorAllRed:
    case Interval::MinorAllRed: return Indication::Red;
  }
  return Indication::Red;
}

SignalState apply_offset(const SignalState& state, double t2_s) {
  if (std::abs(t2_s) > state.cycle_s / 2 + kTimeEps) {
    throw ValidationError("offset: |" + std::to_string(t2_s) + "| exceeds half the cycle " + std::to_string(state.cycle_s));
  }
  SignalState out = state;
  out.offset_s = t2_s;
  out.next_green_start_s = state.upstream_green_start_s + t2_s;
  return out;
}

void end_green(SignalState& s, const PhasePlan& plan, double now) {
  if (s.interval == Interval::MajorGreen) {
    s.interval = Interval::MajorYellow;
    s.last_green_end_s = now;
    s.scheduled_change_s = now + plan.coordinated().yellow_s;
  } else if (s.interval == Interval::MinorGreen) {
    s.interval = Interval::MinorYellow;
    s.last_minor_end_s = now;
    s.scheduled_change_s = now + plan.noncoordinated().yellow_s;
  } else {
    return;
  }
  s.interval_start_s = now;
}

SignalEvent advance_signal(SignalState& s, const PhasePlan& plan, double now) {
  const auto elapsed = [&] { return now - s.interval_start_s + kTimeEps; };
  const auto begin = [&](Interval next, double duration) {
    s.interval = next;
    s.interval_start_s = now;
    s.scheduled_change_s = now + duration;
  };
  const auto start_coordinated_green = [&] {
    s.green_start_s = now;
    ++s.cycle_index;
    s.next_green_start_s += s.cycle_s;
    while (s.next_green_start_s <= now + kTimeEps) s.next_green_start_s += s.cycle_s;
  };

  switch (s.interval) {
    case Interval::MajorGreen:
      if (now + kTimeEps >= s.next_green_start_s) {
        // Arterial rested in green through the barrier: a new cycle begins
        // with no red in between.
        s.last_green_end_s = now;
        start_coordinated_green();
        return SignalEvent::CoordinatedGreenStart;
      }
      return SignalEvent::None;
    case Interval::MajorYellow:
      if (elapsed() < plan.coordinated().yellow_s) return SignalEvent::None;
      begin(Interval::MajorAllRed, plan.coordinated().all_red_s);
      [[fallthrough]];
    case Interval::MajorAllRed:
      if (elapsed() >= plan.coordinated().all_red_s) {
        begin(Interval::MinorGreen, std::numeric_limits<double>::infinity());
        return SignalEvent::MinorGreenStart;
      }
      return SignalEvent::None;
    case Interval::MinorGreen:
      return SignalEvent::None;
    case Interval::MinorYellow:
      if (elapsed() < plan.noncoordinated().yellow_s) return SignalEvent::None;
      begin(Interval::MinorAllRed, plan.noncoordinated().all_red_s);
      [[fallthrough]];
    case Interval::MinorAllRed:
      if (elapsed() >= plan.noncoordinated().all_red_s) {
        begin(Interval::MajorGreen, std::numeric_limits<double>::infinity());
        start_coordinated_green();
        return SignalEvent::CoordinatedGreenStart;
      }
      return SignalEvent::None;
  }
  return SignalEvent::None;
}

}  // namespace cvsig

namespace cvsig {

nlohmann::json synthetic_corridor_json(const SyntheticCorridor& layout) {
  using nlohmann::json;
  const double minor_green = layout.cycle_s - layout.major_green_s - 2 * (layout.yellow_s + layout.all_red_s);
  const auto phase = [&](int number, double green, double max_green) {
    return json{{"number", number},          {"green_s", green},      {"min_green_s", layout.min_green_s},
                {"max_green_s", max_green},  {"yellow_s", layout.yellow_s}, {"all_red_s", layout.all_red_s}};
  };
  json plan{{"cycle_s", layout.cycle_s},
            {"phases",
             {phase(2, layout.major_green_s, layout.major_max_green_s), phase(4, minor_green, layout.minor_max_green_s),
              phase(6, layout.major_green_s, layout.major_max_green_s), phase(8, minor_green, layout.minor_max_green_s)}}};
  json xs = json::array();
  json segs = json::array();
  const int n = layout.intersections;
  for (int i = 0; i < n; ++i) {
    const std::string k = std::to_string(i + 1);
    xs.push_back({{"name", "I" + k}, {"phase_plan", plan}});
    const auto major = [&](const std::string& id, const char* dir, int from) {
      json s{{"id", id},
             {"direction", dir},
             {"length_mi", layout.link_mi},
             {"free_flow_speed_mph", layout.major_ffs_mph},
             {"historical_queue_mi", layout.major_historical_queue_mi},
             {"to", i}};
      if (from >= 0) s["from"] = from;
      return s;
    };
    segs.push_back(major("E" + k, "major-east", i - 1));
    segs.push_back(major("W" + k, "major-west", i + 1 < n ? i + 1 : -1));
    for (const char* side : {"north", "south"}) {
      segs.push_back({{"id", std::string(side[0] == 'n' ? "N" : "S") + k},
                      {"direction", "minor"},
                      {"side", side},
                      {"length_mi", layout.minor_mi},
                      {"free_flow_speed_mph", layout.minor_ffs_mph},
                      {"historical_queue_mi", layout.minor_historical_queue_mi},
                      {"max_allowable_queue_mi", layout.minor_max_allowable_queue_mi},
                      {"to", i}});
    }
  }
  return json{{"coordinated_direction", "major-east"}, {"intersections", xs}, {"segments", segs}};
}

}  // namespace cvsig
