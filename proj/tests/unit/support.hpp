#pragma once

#include <limits>
#include <vector>

#include "cvsig/corridor.hpp"
#include "cvsig/microsim.hpp"

namespace test {

inline cvsig::Corridor corridor(int intersections = 1) {
  cvsig::SyntheticCorridor layout;
  layout.intersections = intersections;
  return cvsig::build_corridor(cvsig::synthetic_corridor_json(layout));
}

/// Arterial green that never ends.
inline cvsig::SignalState green(const cvsig::PhasePlan& plan) {
  auto s = cvsig::initial_signal_state(plan, 0.0);
  s.next_green_start_s = std::numeric_limits<double>::infinity();
  return s;
}

/// Arterial red (side street green) that never ends.
inline cvsig::SignalState red(const cvsig::PhasePlan& plan) {
  auto s = green(plan);
  s.interval = cvsig::Interval::MinorGreen;
  return s;
}

inline std::vector<cvsig::SignalState> all(const cvsig::Corridor& c, bool major_green) {
  std::vector<cvsig::SignalState> out;
  for (const auto& x : c.intersections) out.push_back(major_green ? green(x.plan) : red(x.plan));
  return out;
}

}  // namespace test
