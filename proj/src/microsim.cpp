#include "cvsig/microsim.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "cvsig/rng.hpp"
#include "cvsig/units.hpp"

namespace cvsig {

double idm_acceleration(double speed, double leader_speed, double gap, const IdmParams& p, DynamicsLog* log) {
  if (!(gap > 0.0)) {
    if (log != nullptr) ++log->violations;
    return -p.emergency_decel;
  }
  const double dv = speed - leader_speed;
  const double desired_gap =
      p.min_gap_m + std::max(0.0, speed * p.time_headway_s + speed * dv / (2.0 * std::sqrt(p.accel_max * p.decel_comfort)));
  const double free_term = std::pow(speed / p.desired_speed_mps, p.exponent);
  const double interaction = (desired_gap / gap) * (desired_gap / gap);
  const double a = p.accel_max * (1.0 - free_term - interaction);
  return std::clamp(a, -p.emergency_decel, p.accel_max);
}

std::vector<std::vector<double>> spawn_demand(std::span<const EntryDemand> entries, double duration_s,
                                              std::uint64_t seed) {
  std::vector<std::vector<double>> out(entries.size());
  for (std::size_t e = 0; e < entries.size(); ++e) {
    const double rate = entries[e].rate_vph;
    if (rate < 0) throw ValidationError("demand.rate_vph: must be nonnegative");
    if (rate == 0) continue;
    std::mt19937_64 gen(derive_seed(seed, 1000 + e));
    std::exponential_distribution<double> gap(units::per_hour_to_per_second(rate));
    for (double t = gap(gen); t < duration_s; t += gap(gen)) out[e].push_back(t);
  }
  return out;
}

namespace {

void continue_along(const Corridor& c, Direction d, int intersection, double exit_fraction, std::mt19937_64& gen,
                    std::vector<int>& route) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int x = intersection;
  while (true) {
    const int next = c.major_exit(x, d);
    const bool leave = u(gen) < exit_fraction;
    if (next < 0 || leave) return;
    route.push_back(next);
    x = c.segment(next).downstream_intersection;
  }
}

}  // namespace

std::vector<Arrival> build_arrivals(const Corridor& corridor, std::span<const EntryDemand> entries,
                                    double duration_s, const TurningModel& turning, double penetration,
                                    std::uint64_t seed) {
  if (penetration < 0 || penetration > 1) throw ValidationError("penetration: must lie in [0, 1]");
  const auto times = spawn_demand(entries, duration_s, seed);
  struct Tagged {
    Arrival a;
    std::size_t entry;
  };
  std::vector<Tagged> all;
  for (std::size_t e = 0; e < entries.size(); ++e) {
    std::mt19937_64 route_gen(derive_seed(seed, 2000 + e));
    std::mt19937_64 cv_gen(derive_seed(seed, 3000 + e));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int seg = entries[e].segment;
    const Segment& s = corridor.segment(seg);
    for (double t : times[e]) {
      Arrival a;
      a.time_s = t;
      a.route.push_back(seg);
      const int x = s.downstream_intersection;
      if (s.is_major()) {
        continue_along(corridor, s.direction, x, turning.major_exit_fraction, route_gen, a.route);
      } else {
        if (u(route_gen) < turning.minor_turn_fraction) {
          const Direction d = s.side == MinorSide::South ? Direction::MajorEast : Direction::MajorWest;
          const int next = corridor.major_exit(x, d);
          if (next >= 0) {
            a.route.push_back(next);
            continue_along(corridor, d, corridor.segment(next).downstream_intersection, turning.major_exit_fraction,
                           route_gen, a.route);
          }
        }
      }
      a.is_cv = u(cv_gen) < penetration;
      all.push_back({std::move(a), e});
    }
  }
  std::stable_sort(all.begin(), all.end(), [](const Tagged& l, const Tagged& r) {
    return l.a.time_s != r.a.time_s ? l.a.time_s < r.a.time_s : l.entry < r.entry;
  });
  std::vector<Arrival> out;
  out.reserve(all.size());
  long id = 1;
  for (auto& t : all) {
    t.a.id = id++;
    out.push_back(std::move(t.a));
  }
  return out;
}

World::World(const Corridor& corridor, SimConfig config) : corridor_(&corridor), config_(config) {
  const std::size_t n = corridor.segments.size();
  lanes_.resize(n);
  for (std::size_t i = 0; i < n; ++i) lanes_[i].resize(static_cast<std::size_t>(corridor.segments[i].lane_count));
  entry_queues_.resize(n);
  round_robin_.assign(n, 0);
  accum_.resize(n);
  discharged_.assign(n, 0);
  crossings_.resize(n);
}

void World::schedule(std::vector<Arrival> arrivals) {
  std::stable_sort(arrivals.begin(), arrivals.end(),
                   [](const Arrival& a, const Arrival& b) { return a.time_s < b.time_s; });
  pending_ = std::move(arrivals);
  next_arrival_ = 0;
}

int World::count_on(int segment) const {
  int n = 0;
  for (const auto& lane : lanes(segment)) n += static_cast<int>(lane.size());
  return n;
}

long World::waiting() const {
  long n = 0;
  for (const auto& q : entry_queues_) n += static_cast<long>(q.size());
  return n;
}

long World::in_network() const {
  long n = waiting();
  for (std::size_t s = 0; s < lanes_.size(); ++s) n += count_on(static_cast<int>(s));
  return n;
}

void World::place(int segment, Vehicle v) {
  if (v.route.empty()) v.route = {segment};
  v.lane = std::clamp(v.lane, 0, corridor_->segment(segment).lane_count - 1);
  ++spawned_;
  if (v.is_cv) ++cv_spawned_;
  insert_back(segment, std::move(v));
}

void World::insert_back(int segment, Vehicle v) {
  auto& lane = lanes_[static_cast<std::size_t>(segment)][static_cast<std::size_t>(v.lane)];
  auto it = lane.end();
  while (it != lane.begin() && std::prev(it)->position_m < v.position_m) --it;
  lane.insert(it, std::move(v));
  ++accum_[static_cast<std::size_t>(segment)].entered;
}

void World::admit_arrivals() {
  while (next_arrival_ < pending_.size() && pending_[next_arrival_].time_s <= time_s_) {
    Arrival& a = pending_[next_arrival_++];
    Vehicle v;
    v.id = a.id;
    v.is_cv = a.is_cv;
    v.route = std::move(a.route);
    v.spawn_time_s = a.time_s;
    v.length_m = config_.vehicle_length_m;
    ++spawned_;
    if (v.is_cv) ++cv_spawned_;
    entry_queues_[static_cast<std::size_t>(v.route.front())].push_back(std::move(v));
  }
}

void World::try_insert(int segment) {
  auto& queue = entry_queues_[static_cast<std::size_t>(segment)];
  if (queue.empty()) return;
  const Segment& seg = corridor_->segment(segment);
  const int lane_idx = round_robin_[static_cast<std::size_t>(segment)];
  auto& lane = lanes_[static_cast<std::size_t>(segment)][static_cast<std::size_t>(lane_idx)];
  const double v0 = units::mph_to_mps(seg.free_flow_speed_mph);
  double speed = v0;
  if (!lane.empty()) {
    const Vehicle& tail = lane.back();
    const double space = tail.position_m - tail.length_m - config_.idm.min_gap_m;
    if (space < 0.5) return;
    // Fastest entry speed that can still stop behind a braking tail.
    const double b = config_.idm.decel_comfort;
    speed = std::min(v0, std::sqrt(2.0 * b * space + tail.speed_mps * tail.speed_mps));
  }
  Vehicle v = std::move(queue.front());
  queue.pop_front();
  v.position_m = 0.0;
  v.speed_mps = speed;
  v.lane = lane_idx;
  round_robin_[static_cast<std::size_t>(segment)] = (lane_idx + 1) % seg.lane_count;
  insert_back(segment, std::move(v));
}

const Vehicle* World::next_lane_tail(const Vehicle& v) const {
  if (v.last_leg()) return nullptr;
  const int next = v.route[v.leg + 1];
  const auto& next_lanes = lanes_[static_cast<std::size_t>(next)];
  const auto& lane = next_lanes[static_cast<std::size_t>(v.lane) % next_lanes.size()];
  return lane.empty() ? nullptr : &lane.back();
}

double World::leader_gap(const Vehicle& v, const std::deque<Vehicle>& lane, std::size_t idx, const Segment& seg,
                         double& leader_speed) const {
  if (idx > 0) {
    const Vehicle& lead = lane[idx - 1];
    leader_speed = lead.speed_mps;
    return lead.position_m - lead.length_m - v.position_m;
  }
  double gap = kNoLeaderGap;
  leader_speed = v.speed_mps;
  const double to_stop = seg.length_m() - v.position_m;
  if (v.stopping) {
    // Held by the signal: traffic that crossed ahead of it is irrelevant.
    leader_speed = 0.0;
    return to_stop;
  }
  if (const Vehicle* tail = next_lane_tail(v)) {
    const double g = to_stop + tail->position_m - tail->length_m;
    if (g < gap) {
      gap = g;
      leader_speed = tail->speed_mps;
    }
  }
  return gap;
}

void World::step(std::span<const SignalState> signals) { step(config_.dt_s, signals); }

void World::step(double dt, std::span<const SignalState> signals) {
  if (!(dt > 0)) throw ValidationError("dt_s: must be positive");
  if (signals.size() != corridor_->intersections.size()) {
    throw ValidationError("signals: expected one state per intersection");
  }
  admit_arrivals();
  for (std::size_t s = 0; s < lanes_.size(); ++s) try_insert(static_cast<int>(s));

  const std::size_t n_seg = lanes_.size();

  // Stop-line decisions for lane leaders.
  for (std::size_t s = 0; s < n_seg; ++s) {
    const Segment& seg = corridor_->segments[s];
    const Indication ind = indication(signals[static_cast<std::size_t>(seg.downstream_intersection)], seg.direction);
    for (auto& lane : lanes_[s]) {
      for (auto& v : lane) {
        if (ind == Indication::Green) {
          v.committed = false;
          v.stopping = false;
          continue;
        }
        if (v.committed || v.stopping) continue;
        if (ind == Indication::Yellow) {
          const double to_stop = seg.length_m() - v.position_m;
          const double needed = v.speed_mps * v.speed_mps / (2.0 * config_.yellow_decel_mps2);
          if (needed <= to_stop) v.stopping = true;
          else v.committed = true;
        } else {
          v.stopping = true;
        }
      }
    }
  }

  // Synchronous acceleration update.
  std::vector<std::vector<std::vector<double>>> accel(n_seg);
  for (std::size_t s = 0; s < n_seg; ++s) {
    const Segment& seg = corridor_->segments[s];
    IdmParams p = config_.idm;
    p.desired_speed_mps = units::mph_to_mps(seg.free_flow_speed_mph);
    accel[s].resize(lanes_[s].size());
    for (std::size_t l = 0; l < lanes_[s].size(); ++l) {
      const auto& lane = lanes_[s][l];
      accel[s][l].resize(lane.size());
      for (std::size_t i = 0; i < lane.size(); ++i) {
        double leader_speed = 0.0;
        const double gap = leader_gap(lane[i], lane, i, seg, leader_speed);
        accel[s][l][i] = idm_acceleration(lane[i].speed_mps, leader_speed, gap, p, &log_);
      }
    }
  }

  // Semi-implicit Euler with the speed clamped at zero.
  for (std::size_t s = 0; s < n_seg; ++s) {
    for (std::size_t l = 0; l < lanes_[s].size(); ++l) {
      auto& lane = lanes_[s][l];
      for (std::size_t i = 0; i < lane.size(); ++i) {
        Vehicle& v = lane[i];
        v.speed_mps = std::max(0.0, v.speed_mps + accel[s][l][i] * dt);
        v.position_m += v.speed_mps * dt;
      }
    }
  }
  time_s_ += dt;

  // Stop-line crossings: hand over to the next segment or retire.
  for (std::size_t s = 0; s < n_seg; ++s) {
    const double length = corridor_->segments[s].length_m();
    for (auto& lane : lanes_[s]) {
      while (!lane.empty() && lane.front().position_m >= length) {
        Vehicle v = std::move(lane.front());
        lane.pop_front();
        ++discharged_[s];
        if (record_crossings_) {
          // Interpolated within the step.
          const double over = v.position_m - length;
          crossings_[s].push_back(v.speed_mps > 0 ? time_s_ - over / v.speed_mps : time_s_);
        }
        if (v.last_leg()) {
          ++retired_;
          travel_time_sum_ += time_s_ - v.spawn_time_s;
          continue;
        }
        ++v.leg;
        v.position_m -= length;
        v.committed = false;
        v.stopping = false;
        const int next = v.segment();
        v.lane = v.lane % corridor_->segment(next).lane_count;
        insert_back(next, std::move(v));
      }
    }
  }

  // Collision check.
  for (std::size_t s = 0; s < n_seg; ++s) {
    for (const auto& lane : lanes_[s]) {
      for (std::size_t i = 1; i < lane.size(); ++i) {
        const double gap = lane[i - 1].position_m - lane[i - 1].length_m - lane[i].position_m;
        min_gap_ = std::min(min_gap_, gap);
        if (!(gap > 0.0)) {
          std::ostringstream msg;
          msg << "collision at t=" << time_s_ << " on segment " << corridor_->segments[s].id << ": vehicle "
              << lane[i].id << " overlaps leader " << lane[i - 1].id << " (gap " << gap << " m)";
          throw SimulationFault(msg.str());
        }
      }
    }
  }

  measure(dt);
}

void World::measure(double dt) {
  const double stop_mps = units::mph_to_mps(config_.stop_speed_mph);
  for (std::size_t s = 0; s < lanes_.size(); ++s) {
    const double length = corridor_->segments[s].length_m();
    DetectorAccum& acc = accum_[s];
    for (auto& lane : lanes_[s]) {
      double jam_front = -1.0;
      double prev_rear = 0.0;
      for (std::size_t i = 0; i < lane.size(); ++i) {
        Vehicle& v = lane[i];
        acc.speed_sum_mps += v.speed_mps;
        ++acc.samples;
        const bool halted = v.speed_mps < stop_mps;
        if (halted) {
          acc.stopped_s += dt;
          v.cumulative_stopped_s += dt;
        }
        const double rear = std::max(0.0, v.position_m - v.length_m);
        if (halted) {
          const bool joins = jam_front >= 0 && (prev_rear - v.position_m) <= config_.jam_gap_m;
          if (!joins) {
            // A jam touching the stop line is measured from the stop line.
            jam_front = (i == 0 && length - v.position_m <= config_.jam_gap_m) ? length : v.position_m;
          }
          acc.max_queue_m = std::max(acc.max_queue_m, jam_front - rear);
        } else {
          jam_front = -1.0;
        }
        prev_rear = rear;
      }
    }
  }
}

std::vector<DetectorReading> World::read_detectors() {
  std::vector<DetectorReading> out;
  out.reserve(accum_.size());
  for (std::size_t s = 0; s < accum_.size(); ++s) {
    DetectorAccum& acc = accum_[s];
    DetectorReading r;
    r.time_s = time_s_;
    r.segment = static_cast<int>(s);
    r.samples = acc.samples;
    r.mean_speed_mph = acc.samples > 0 ? units::mps_to_mph(acc.speed_sum_mps / static_cast<double>(acc.samples)) : 0.0;
    r.max_queue_len_mi = std::min(units::meters_to_miles(acc.max_queue_m), corridor_->segments[s].length_mi);
    r.stopped_delay_s = acc.stopped_s;
    r.entered = acc.entered;
    out.push_back(r);
    acc = DetectorAccum{};
  }
  interval_start_s_ = time_s_;
  return out;
}

}  // namespace cvsig
