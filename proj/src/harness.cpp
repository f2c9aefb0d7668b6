#include "cvsig/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <iterator>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "cvsig/units.hpp"

namespace cvsig {

namespace {

constexpr double kEps = 1e-9;

[[noreturn]] void fail(const std::string& field, const std::string& what) {
  throw ValidationError("scenario." + field + ": " + what);
}

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(key, e.what());
  }
}

double circular_distance(double a, double b, double c) {
  double d = std::fmod(std::abs(a - b), c);
  return std::min(d, c - d);
}

// Order of intersections met by coordinated-direction traffic.
std::vector<int> along(const Corridor& c, Direction d) {
  std::vector<int> out;
  for (int i = c.first_along(d); i >= 0 && out.size() <= c.intersections.size();) {
    out.push_back(i);
    const int next = c.major_exit(i, d);
    i = next < 0 ? -1 : c.segment(next).downstream_intersection;
  }
  return out;
}

struct Fnv {
  std::uint64_t h = 1469598103934665603ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  }
  template <class T>
  void add(const T& v) {
    bytes(&v, sizeof(T));
  }
};

}  // namespace

std::string_view to_string(ControllerKind k) { return k == ControllerKind::Adaptive ? "adaptive" : "baseline"; }

ControllerKind parse_controller(std::string_view s) {
  if (s == "adaptive") return ControllerKind::Adaptive;
  if (s == "baseline" || s == "actuated-baseline") return ControllerKind::Baseline;
  throw ValidationError("controller: expected adaptive or baseline, got '" + std::string(s) + "'");
}

std::vector<double> two_way_offsets(const Corridor& corridor) {
  std::vector<double> theta(corridor.intersections.size(), 0.0);
  const auto order = along(corridor, Direction::MajorEast);
  for (std::size_t k = 1; k < order.size(); ++k) {
    const int from = order[k - 1], to = order[k];
    const double c = corridor.intersections[static_cast<std::size_t>(to)].plan.cycle_s;
    const Segment& east = corridor.segment(corridor.major_approach(to, Direction::MajorEast));
    const Segment& west = corridor.segment(corridor.major_approach(from, Direction::MajorWest));
    const double tau_e = units::travel_seconds(east.length_mi, east.free_flow_speed_mph);
    const double tau_w = units::travel_seconds(west.length_mi, west.free_flow_speed_mph);
    double best = 0.0, best_cost = std::numeric_limits<double>::infinity();
    for (int delta = 0; delta < static_cast<int>(c); ++delta) {
      const double de = circular_distance(delta, tau_e, c);
      const double dw = circular_distance(-delta, tau_w, c);
      const double cost = de * de + dw * dw;
      if (cost < best_cost - kEps) {
        best_cost = cost;
        best = delta;
      }
    }
    theta[static_cast<std::size_t>(to)] = std::fmod(theta[static_cast<std::size_t>(from)] + best, c);
  }
  return theta;
}

ScenarioConfig parse_scenario(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  ScenarioConfig cfg;
  cfg.name = get_or<std::string>(j, "name", cfg.name);
  if (j.contains("synthetic")) {
    const auto& s = j.at("synthetic");
    SyntheticCorridor sc;
    sc.intersections = get_or(s, "intersections", sc.intersections);
    sc.link_mi = get_or(s, "link_mi", sc.link_mi);
    sc.minor_mi = get_or(s, "minor_mi", sc.minor_mi);
    sc.major_ffs_mph = get_or(s, "major_ffs_mph", sc.major_ffs_mph);
    sc.minor_ffs_mph = get_or(s, "minor_ffs_mph", sc.minor_ffs_mph);
    sc.cycle_s = get_or(s, "cycle_s", sc.cycle_s);
    sc.major_green_s = get_or(s, "major_green_s", sc.major_green_s);
    sc.yellow_s = get_or(s, "yellow_s", sc.yellow_s);
    sc.all_red_s = get_or(s, "all_red_s", sc.all_red_s);
    sc.min_green_s = get_or(s, "min_green_s", sc.min_green_s);
    sc.major_max_green_s = get_or(s, "major_max_green_s", sc.major_max_green_s);
    sc.minor_max_green_s = get_or(s, "minor_max_green_s", sc.minor_max_green_s);
    sc.major_historical_queue_mi = get_or(s, "major_historical_queue_mi", sc.major_historical_queue_mi);
    sc.minor_historical_queue_mi = get_or(s, "minor_historical_queue_mi", sc.minor_historical_queue_mi);
    sc.minor_max_allowable_queue_mi = get_or(s, "minor_max_allowable_queue_mi", sc.minor_max_allowable_queue_mi);
    if (sc.intersections < 1) fail("synthetic.intersections", "must be >= 1");
    cfg.corridor = build_corridor(synthetic_corridor_json(sc));
  } else if (j.contains("corridor")) {
    cfg.corridor = build_corridor(j.at("corridor"));
  } else {
    fail("corridor", "missing (give 'synthetic' or 'corridor')");
  }

  const auto& c = cfg.corridor;
  const nlohmann::json demand = j.value("demand", nlohmann::json::object());
  const double major = get_or(demand, "major_vph", 0.0);
  const double minor = get_or(demand, "minor_vph", 0.0);
  for (const auto& s : c.segments) {
    if (s.upstream_intersection >= 0) continue;
    cfg.demand_vph[s.id] = s.is_major() ? major : minor;
  }
  if (demand.contains("entries")) {
    for (const auto& [id, rate] : demand.at("entries").items()) {
      const int idx = c.segment_index(id);
      if (idx < 0) fail("demand.entries." + id, "unknown segment");
      if (c.segment(idx).upstream_intersection >= 0) fail("demand.entries." + id, "not a corridor entry");
      cfg.demand_vph[id] = rate.get<double>();
    }
  }
  for (const auto& [id, rate] : cfg.demand_vph) {
    if (rate < 0) fail("demand." + id, "must be nonnegative");
  }

  const nlohmann::json turning = j.value("turning", nlohmann::json::object());
  cfg.turning.major_exit_fraction = get_or(turning, "major_exit_fraction", cfg.turning.major_exit_fraction);
  cfg.turning.minor_turn_fraction = get_or(turning, "minor_turn_fraction", cfg.turning.minor_turn_fraction);
  for (double f : {cfg.turning.major_exit_fraction, cfg.turning.minor_turn_fraction}) {
    if (f < 0 || f > 1) fail("turning", "fractions must lie in [0, 1]");
  }

  cfg.penetration = get_or(j, "penetration", cfg.penetration);
  if (cfg.penetration < 0 || cfg.penetration > 1) fail("penetration", "must lie in [0, 1]");
  cfg.controller = parse_controller(get_or<std::string>(j, "controller", "adaptive"));
  if (j.contains("seeds")) {
    const auto& s = j.at("seeds");
    cfg.seeds.clear();
    if (s.is_array()) {
      for (const auto& x : s) cfg.seeds.push_back(x.get<std::uint64_t>());
    } else {
      const auto first = get_or<std::uint64_t>(s, "first", 1);
      const auto count = get_or<std::uint64_t>(s, "count", 1);
      for (std::uint64_t k = 0; k < count; ++k) cfg.seeds.push_back(first + k);
    }
    if (cfg.seeds.empty()) fail("seeds", "must not be empty");
  }
  cfg.duration_s = get_or(j, "duration_s", cfg.duration_s);
  cfg.warmup_s = get_or(j, "warmup_s", cfg.warmup_s);
  cfg.interval_s = get_or(j, "interval_s", cfg.interval_s);
  if (!(cfg.duration_s > cfg.warmup_s)) fail("duration_s", "must exceed warmup_s");
  if (cfg.warmup_s < 0) fail("warmup_s", "must be nonnegative");
  if (!(cfg.interval_s > 0)) fail("interval_s", "must be positive");
  cfg.phase_window_s = get_or(j, "phase_window_s", cfg.phase_window_s);
  cfg.rate_window_s = get_or(j, "rate_window_s", cfg.rate_window_s);
  if (!(cfg.rate_window_s > 0)) fail("rate_window_s", "must be positive");

  const nlohmann::json base = j.value("baseline", nlohmann::json::object());
  if (base.contains("offsets_s")) {
    cfg.baseline.offsets_s = base.at("offsets_s").get<std::vector<double>>();
    if (cfg.baseline.offsets_s.size() != c.intersections.size()) {
      fail("baseline.offsets_s", "needs one offset per intersection");
    }
  } else {
    cfg.baseline.offsets_s = two_way_offsets(c);
  }
  cfg.baseline.passage_s = get_or(base, "passage_s", cfg.baseline.passage_s);
  cfg.baseline.detector_m = get_or(base, "detector_m", cfg.baseline.detector_m);

  const nlohmann::json ad = j.value("adaptive", nlohmann::json::object());
  auto& a = cfg.adaptive;
  a.grace_s = get_or(ad, "grace_s", a.grace_s);
  a.recheck_s = get_or(ad, "recheck_s", a.recheck_s);
  a.h_s = get_or(ad, "h_s", a.h_s);
  a.weights.w1 = get_or(ad, "w1", a.weights.w1);
  a.weights.w2 = get_or(ad, "w2", a.weights.w2);
  a.fr_step = get_or(ad, "fr_step", a.fr_step);
  a.adapt_offsets = get_or(ad, "adapt_offsets", a.adapt_offsets);
  a.offset_alpha = get_or(ad, "offset_alpha", a.offset_alpha);
  a.offset_transition = get_or(ad, "offset_transition", a.offset_transition);
  a.minor_extra_s = get_or(ad, "minor_extra_s", a.minor_extra_s);
  if (a.grace_s < 0 || a.recheck_s < 0) fail("adaptive", "grace_s and recheck_s must be nonnegative");
  if (!(a.fr_step > 0 && a.fr_step <= 1)) fail("adaptive.fr_step", "must lie in (0, 1]");

  if (j.contains("forecaster")) {
    const auto& f = j.at("forecaster");
    if (f.contains("model")) {
      std::filesystem::path p = f.at("model").get<std::string>();
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      cfg.model = std::make_shared<const LstmModel>(LstmModel::load(p));
    }
  }
  return cfg;
}

ScenarioConfig load_scenario(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ValidationError("cannot read scenario " + file.string());
  try {
    return parse_scenario(nlohmann::json::parse(in), file.parent_path());
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(file.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Counts

CountEstimator::CountEstimator(const Corridor& corridor, std::shared_ptr<const LstmModel> model, double penetration,
                               int phase_window_s, double rate_window_s)
    : corridor_(&corridor),
      model_(std::move(model)),
      penetration_(penetration),
      history_(corridor.segments.size()),
      cache_(corridor.segments.size(), 0.0),
      cache_time_(corridor.segments.size(), -1.0),
      rate_window_s_(rate_window_s),
      last_ids_(corridor.segments.size()),
      entries_(corridor.segments.size()) {
  for (const auto& s : corridor.segments) builders_.emplace_back(s.direction, phase_window_s);
}

void CountEstimator::observe(double time_s, const std::vector<std::vector<Bsm>>& by_segment,
                             std::span<const SignalState> signals) {
  now_ = time_s;
  const std::size_t keep = model_ ? static_cast<std::size_t>(model_->lookback()) : 1;
  for (std::size_t s = 0; s < corridor_->segments.size(); ++s) {
    const Segment& seg = corridor_->segments[s];
    std::optional<Indication> ind;
    if (seg.upstream_intersection >= 0) {
      ind = indication(signals[static_cast<std::size_t>(seg.upstream_intersection)], seg.direction);
    }
    auto& h = history_[s];
    h.push_back(builders_[s].push(time_s, by_segment[s], ind));
    if (h.size() > keep) h.erase(h.begin());

    std::vector<long> ids;
    for (const auto& b : by_segment[s]) ids.push_back(b.vehicle_id);
    std::sort(ids.begin(), ids.end());
    auto& e = entries_[s];
    for (long id : ids) {
      if (!std::binary_search(last_ids_[s].begin(), last_ids_[s].end(), id)) e.push_back(time_s);
    }
    while (!e.empty() && e.front() <= time_s - rate_window_s_) e.pop_front();
    last_ids_[s] = std::move(ids);
  }
  if (start_ < 0) start_ = time_s;
}

double CountEstimator::arrival_rate(int segment) const {
  const auto& e = entries_[static_cast<std::size_t>(segment)];
  if (e.empty() || penetration_ <= 0) return -1.0;
  const double span = std::clamp(now_ - start_, 1.0, rate_window_s_);
  return static_cast<double>(e.size()) / span / penetration_;
}

double CountEstimator::predicted(int segment) {
  const auto s = static_cast<std::size_t>(segment);
  if (cache_time_[s] == now_) return cache_[s];
  const auto& h = history_[s];
  double n = 0.0;
  if (model_ && static_cast<int>(h.size()) == model_->lookback()) {
    n = model_->predict(std::span<const FeatureVector>(h));
  } else if (!h.empty() && penetration_ > 0) {
    n = h.back().num_cvs / penetration_;
  }
  cache_[s] = n;
  cache_time_[s] = now_;
  return n;
}

// ---------------------------------------------------------------------------
// Baseline

BaselineController::BaselineController(const Corridor& corridor, int intersection, const BaselinePlan& plan)
    : corridor_(&corridor), index_(intersection), plan_(plan) {}

bool BaselineController::minor_zone_occupied(const World& world) const {
  for (int m : corridor_->intersections[static_cast<std::size_t>(index_)].minor_approaches) {
    const double stop = corridor_->segment(m).length_m();
    for (const auto& lane : world.lanes(m)) {
      if (!lane.empty() && stop - lane.front().position_m <= plan_.detector_m) return true;
    }
  }
  return false;
}

void BaselineController::on_minor_green_start(double now) {
  minor_start_ = now;
  last_actuation_ = now;
}

void BaselineController::tick(SignalState& s, bool minor_occupied, double now) {
  const PhasePlan& plan = corridor_->intersections[static_cast<std::size_t>(index_)].plan;
  if (s.interval == Interval::MajorGreen) {
    const double latest =
        s.next_green_start_s - plan.major_clearance_s() - plan.noncoordinated().min_green_s - plan.minor_clearance_s();
    if (now - s.green_start_s + kEps >= plan.coordinated().green_s && minor_occupied && now <= latest + kEps) {
      end_green(s, plan, now);
    }
  } else if (s.interval == Interval::MinorGreen) {
    if (minor_occupied) last_actuation_ = now;
    const double elapsed = now - minor_start_;
    const double force_off = s.next_green_start_s - plan.minor_clearance_s();
    if (elapsed + kEps < plan.noncoordinated().min_green_s) return;
    if (now - last_actuation_ + kEps >= plan_.passage_s || elapsed + kEps >= plan.noncoordinated().max_green_s ||
        now + kEps >= force_off) {
      end_green(s, plan, now);
    }
  }
}

// ---------------------------------------------------------------------------
// Runs

RunResult run_scenario(const ScenarioConfig& config, std::uint64_t seed, const RunOptions& options) {
  const Corridor& c = config.corridor;
  const std::size_t n_int = c.intersections.size();
  const std::size_t n_seg = c.segments.size();

  std::vector<EntryDemand> entries;
  for (const auto& [id, rate] : config.demand_vph) entries.push_back({c.segment_index(id), rate});
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.segment < b.segment; });
  auto arrivals = build_arrivals(c, entries, config.duration_s, config.turning, config.penetration, seed);

  RunResult r;
  r.scenario = config.name;
  r.controller = config.controller;
  r.penetration = config.penetration;
  r.seed = seed;
  const double dt = config.sim.dt_s;
  const long steps = std::lround(config.duration_s / dt);
  const double end_time = steps * dt;
  // The last admission happens at the start of the last step.
  const double last_admit = (steps - 1) * dt;
  r.scheduled = std::count_if(arrivals.begin(), arrivals.end(),
                              [&](const Arrival& a) { return a.time_s <= last_admit; });

  World world(c, config.sim);
  world.schedule(std::move(arrivals));

  const auto offsets = config.baseline.offsets_s.size() == n_int ? config.baseline.offsets_s : two_way_offsets(c);
  std::vector<SignalState> signals;
  for (std::size_t i = 0; i < n_int; ++i) signals.push_back(initial_signal_state(c.intersections[i].plan, offsets[i]));

  const bool adaptive = config.controller == ControllerKind::Adaptive;
  std::vector<AdaptiveController> actl;
  std::vector<BaselineController> bctl;
  for (std::size_t i = 0; i < n_int; ++i) {
    if (adaptive) actl.emplace_back(c, static_cast<int>(i), config.adaptive);
    else bctl.emplace_back(c, static_cast<int>(i), config.baseline);
  }
  CountEstimator counts(c, adaptive ? config.model : nullptr, config.penetration, config.phase_window_s,
                        config.rate_window_s);
  std::vector<std::vector<Bsm>> by_segment(n_seg);

  const auto sensed = [&](std::size_t i, double now) {
    SensedIntersection in;
    in.now_s = now;
    const int coord = c.major_approach(static_cast<int>(i), c.coordinated_direction);
    in.coordinated = {coord, by_segment[static_cast<std::size_t>(coord)], counts.predicted(coord)};
    for (int m : c.intersections[i].minor_approaches) {
      in.minors.push_back({m, by_segment[static_cast<std::size_t>(m)], counts.predicted(m), counts.arrival_rate(m)});
    }
    return in;
  };
  const auto flow_vph = [&](int seg) {
    const Segment& s = c.segment(seg);
    return counts.predicted(seg) * s.free_flow_speed_mph / s.length_mi;
  };

  // Dataset rows wait one second for their label.
  std::vector<DatasetRow> pending;
  const bool record = options.dataset != nullptr;

  double next_read = config.warmup_s;
  bool warm = false;
  for (long k = 1; k <= steps; ++k) {
    world.step(signals);
    const double now = world.time_s();
    const bool second = std::abs(now - std::round(now)) < kEps;
    if (second) {
      for (auto& v : by_segment) v.clear();
      for (const auto& b : emit_bsms(world, now)) by_segment[static_cast<std::size_t>(b.segment)].push_back(b);
      counts.observe(now, by_segment, signals);
      if (record) {
        for (auto& row : pending) {
          row.label = world.count_on(c.segment_index(row.segment));
          options.dataset->push_back(std::move(row));
        }
        pending.clear();
        if (now + kEps >= config.warmup_s && now + 1.0 <= end_time + kEps) {
          for (std::size_t s = 0; s < n_seg; ++s) {
            pending.push_back({now, c.segments[s].id, counts.latest(static_cast<int>(s)), 0.0});
          }
        }
      }
    }

    for (std::size_t i = 0; i < n_int; ++i) {
      const PhasePlan& plan = c.intersections[i].plan;
      const SignalEvent ev = advance_signal(signals[i], plan, now);
      if (ev == SignalEvent::None) continue;
      if (!adaptive) {
        if (ev == SignalEvent::MinorGreenStart) bctl[i].on_minor_green_start(now);
        continue;
      }
      const auto in = sensed(i, now);
      if (ev == SignalEvent::MinorGreenStart) {
        actl[i].on_minor_green_start(signals[i], in);
        continue;
      }
      actl[i].on_coordinated_green_start(signals[i], in);
      const int u = c.upstream_along(static_cast<int>(i), c.coordinated_direction);
      if (!config.adaptive.adapt_offsets || u < 0) continue;
      const auto& up = signals[static_cast<std::size_t>(u)];
      OffsetInputs oi;
      oi.upstream_red_s = up.last_red_s();
      oi.downstream_red_s = signals[i].last_red_s();
      if (config.adaptive.offset_nominal_red) {
        const auto& pu = c.intersections[static_cast<std::size_t>(u)].plan;
        const auto& pd = c.intersections[i].plan;
        oi.upstream_red_s = pu.cycle_s - pu.coordinated().green_s;
        oi.downstream_red_s = pd.cycle_s - pd.coordinated().green_s;
      }
      for (int m : c.intersections[static_cast<std::size_t>(u)].minor_approaches) oi.side_inflow_vph += flow_vph(m);
      const int link = c.major_approach(static_cast<int>(i), c.coordinated_direction);
      oi.upstream_flow_vph = flow_vph(link);
      const auto& wave = actl[i].last_shockwave();
      oi.v_bf_mph = wave.has_queue ? wave.v_bf_mph : 0.0;
      if (const auto sol = update_offset(signals[i], up, c.segment(link), oi, config.adaptive, config.adaptive.h_s)) {
        r.offsets.push_back({now, static_cast<int>(i), sol->t1, sol->t2, sol->delay, sol->derived.t3_s,
                             sol->derived.t4_s, sol->derived.t_req_s, signals[i].next_green_start_s});
      }
    }

    if (second) {
      for (std::size_t i = 0; i < n_int; ++i) {
        if (adaptive) actl[i].tick(signals[i], sensed(i, now));
        else bctl[i].tick(signals[i], bctl[i].minor_zone_occupied(world), now);
      }
    }

    if (now + kEps >= next_read) {
      auto readings = world.read_detectors();
      if (warm) r.intervals.insert(r.intervals.end(), readings.begin(), readings.end());
      warm = true;
      next_read += config.interval_s;
    }
  }

  r.spawned = world.spawned();
  r.retired = world.retired();
  r.in_network = world.in_network();
  r.min_gap_m = world.min_gap_m();
  r.dynamics_violations = world.dynamics_violations();
  r.mean_travel_time_s = r.retired > 0 ? world.total_travel_time_s() / r.retired : 0.0;
  for (auto& a : actl) {
    r.verified_solutions += a.verified_solutions();
    if (options.keep_decisions) {
      auto d = a.take_decisions();
      r.decisions.insert(r.decisions.end(), d.begin(), d.end());
    }
  }
  std::stable_sort(r.decisions.begin(), r.decisions.end(),
                   [](const DecisionRecord& a, const DecisionRecord& b) { return a.time_s < b.time_s; });

  Fnv f;
  for (const auto& x : r.intervals) {
    f.add(x.time_s);
    f.add(x.segment);
    f.add(x.mean_speed_mph);
    f.add(x.max_queue_len_mi);
    f.add(x.stopped_delay_s);
    f.add(x.samples);
    f.add(x.entered);
  }
  f.add(r.spawned);
  f.add(r.retired);
  f.add(r.in_network);
  f.add(r.min_gap_m);
  f.add(r.mean_travel_time_s);
  for (const auto& d : r.decisions) {
    f.add(d.time_s);
    f.add(d.solution.g_cor);
    f.add(d.solution.objective);
  }
  for (const auto& o : r.offsets) {
    f.add(o.time_s);
    f.add(o.t2);
    f.add(o.next_green_start_s);
  }
  r.digest = f.h;
  return r;
}

std::vector<RunResult> run_replications_serial(const ScenarioConfig& config, std::span<const std::uint64_t> seeds) {
  std::vector<RunResult> out;
  for (const auto s : seeds) out.push_back(run_scenario(config, s));
  return out;
}

std::vector<RunResult> run_replications(const ScenarioConfig& config, std::span<const std::uint64_t> seeds) {
  std::vector<RunResult> out(seeds.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < static_cast<long>(seeds.size()); ++i) {
    out[static_cast<std::size_t>(i)] = run_scenario(config, seeds[static_cast<std::size_t>(i)]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

std::vector<Sample> samples_from_rows(std::vector<DatasetRow> rows, int lookback, int stride) {
  std::stable_sort(rows.begin(), rows.end(),
                   [](const DatasetRow& a, const DatasetRow& b) { return a.segment < b.segment; });
  return make_samples(rows, lookback, stride);
}

std::vector<Sample> samples_from_runs(const ScenarioConfig& config, std::span<const std::uint64_t> seeds,
                                      int lookback, int stride, std::vector<DatasetRow>* rows_out) {
  std::vector<Sample> out;
  for (const auto seed : seeds) {
    std::vector<DatasetRow> rows;
    RunOptions opt;
    opt.dataset = &rows;
    opt.keep_decisions = false;
    run_scenario(config, seed, opt);
    if (rows_out) rows_out->insert(rows_out->end(), rows.begin(), rows.end());
    auto s = samples_from_rows(std::move(rows), lookback, stride);
    out.insert(out.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  }
  return out;
}

std::vector<double> persistence_forecast(std::span<const Sample> samples, double penetration) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(penetration > 0 ? s.num_cvs_last / penetration : 0.0);
  return out;
}

std::map<Direction, DirectionMetrics> summarize(const RunResult& run, const Corridor& corridor) {
  struct Acc {
    double speed = 0, samples = 0, queue = 0, readings = 0, stopped = 0, entered = 0;
  };
  std::map<Direction, Acc> acc;
  for (const auto& x : run.intervals) {
    Acc& a = acc[corridor.segment(x.segment).direction];
    a.speed += x.mean_speed_mph * x.samples;
    a.samples += x.samples;
    a.queue += x.max_queue_len_mi;
    a.readings += 1;
    a.stopped += x.stopped_delay_s;
    a.entered += x.entered;
  }
  std::map<Direction, DirectionMetrics> out;
  for (const auto& [d, a] : acc) {
    DirectionMetrics m;
    m.mean_speed_mph = a.samples > 0 ? a.speed / a.samples : 0.0;
    m.mean_max_queue_mi = a.readings > 0 ? a.queue / a.readings : 0.0;
    m.stopped_delay_s = a.entered > 0 ? a.stopped / a.entered : 0.0;
    out[d] = m;
  }
  return out;
}

double sign_test_p(int k, int n) {
  if (n <= 0) return 1.0;
  double p = 0.0;
  for (int i = k; i <= n; ++i) {
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) - n * std::log(2.0));
  }
  return std::min(1.0, p);
}

namespace {

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

MetricDelta delta_of(const std::vector<double>& b, const std::vector<double>& a) {
  MetricDelta d;
  d.baseline_mean = mean_of(b);
  d.baseline_sd = sd_of(b);
  d.adaptive_mean = mean_of(a);
  d.adaptive_sd = sd_of(a);
  d.percent = d.baseline_mean != 0.0 ? (d.adaptive_mean - d.baseline_mean) / d.baseline_mean * 100.0 : 0.0;
  std::vector<double> diff;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff.push_back(a[i] - b[i]);
    if (a[i] < b[i]) ++d.negative;
    if (a[i] > b[i]) ++d.positive;
  }
  d.paired_mean_delta = mean_of(diff);
  d.sign_test_p = sign_test_p(d.negative, d.negative + d.positive);
  return d;
}

}  // namespace

MetricsReport compare(std::span<const RunResult> baseline, std::span<const RunResult> adaptive,
                      const Corridor& corridor) {
  std::map<std::uint64_t, const RunResult*> b, a;
  for (const auto& r : baseline) b[r.seed] = &r;
  for (const auto& r : adaptive) a[r.seed] = &r;
  if (b.size() != baseline.size() || a.size() != adaptive.size()) throw ValidationError("compare: duplicate seeds");
  std::set<std::uint64_t> sb, sa;
  for (const auto& [s, _] : b) sb.insert(s);
  for (const auto& [s, _] : a) sa.insert(s);
  if (sb != sa) throw ValidationError("compare: baseline and adaptive seed sets differ");
  if (sb.empty()) throw ValidationError("compare: no runs");

  MetricsReport rep;
  rep.scenario = baseline.front().scenario;
  rep.penetration = adaptive.front().penetration;
  rep.seeds.assign(sb.begin(), sb.end());
  for (const Direction d : {Direction::MajorEast, Direction::MajorWest, Direction::Minor}) {
    std::vector<double> bs, as, bq, aq, bd, ad;
    for (const auto s : rep.seeds) {
      const auto mb = summarize(*b[s], corridor);
      const auto ma = summarize(*a[s], corridor);
      if (!mb.count(d) || !ma.count(d)) continue;
      bs.push_back(mb.at(d).mean_speed_mph);
      as.push_back(ma.at(d).mean_speed_mph);
      bq.push_back(mb.at(d).mean_max_queue_mi);
      aq.push_back(ma.at(d).mean_max_queue_mi);
      bd.push_back(mb.at(d).stopped_delay_s);
      ad.push_back(ma.at(d).stopped_delay_s);
    }
    if (bs.empty()) continue;
    rep.directions[d] = {delta_of(bs, as), delta_of(bq, aq), delta_of(bd, ad)};
  }
  return rep;
}

int replication_count(std::span<const double> pilot, double tolerance_fraction) {
  if (pilot.size() < 2) throw ValidationError("replication_count: needs at least 2 pilot runs");
  const std::vector<double> v(pilot.begin(), pilot.end());
  const double sigma = sd_of(v);
  const double tol = tolerance_fraction * mean_of(v);
  if (sigma == 0.0) return 1;
  return required_samples(sigma, tol);
}

void write_report(std::ostream& out, const MetricsReport& r) {
  const auto old_flags = out.flags();
  const auto old_prec = out.precision();
  out << "scenario " << r.scenario << "  penetration " << r.penetration * 100 << "%  seeds " << r.seeds.size()
      << "\n";
  out << std::left << std::setw(12) << "direction" << std::setw(18) << "metric" << std::right << std::setw(20)
      << "baseline" << std::setw(20) << "adaptive" << std::setw(10) << "delta%" << std::setw(12) << "paired"
      << std::setw(8) << "-/+" << std::setw(10) << "sign p" << "\n";
  const auto row = [&](std::string_view dir, std::string_view name, const MetricDelta& m, int digits) {
    std::ostringstream b, a, pm;
    b << std::fixed << std::setprecision(digits) << m.baseline_mean << " +- " << m.baseline_sd;
    a << std::fixed << std::setprecision(digits) << m.adaptive_mean << " +- " << m.adaptive_sd;
    pm << m.negative << "/" << m.positive;
    out << std::left << std::setw(12) << dir << std::setw(18) << name << std::right << std::setw(20) << b.str()
        << std::setw(20) << a.str() << std::setw(10) << std::showpos << std::fixed << std::setprecision(1)
        << m.percent << std::noshowpos << std::setw(12) << std::setprecision(digits) << m.paired_mean_delta
        << std::setw(8) << pm.str() << std::setw(10) << std::setprecision(4) << m.sign_test_p << "\n";
  };
  for (const auto& [d, dr] : r.directions) {
    const auto name = d == Direction::Minor ? std::string_view("minor") : to_string(d);
    row(name, "speed_mph", dr.speed, 2);
    row(name, "max_queue_mi", dr.max_queue, 4);
    row(name, "stopped_delay_s", dr.stopped_delay, 2);
  }
  out << "notes: delta% is (adaptive - baseline) / baseline; '-' is a decrease. The baseline coordinates both\n"
         "arterial directions with fixed offsets; the adaptive controller coordinates "
      << to_string(Direction::MajorEast)
      << " only. Minor-street deltas carry no directional expectation.\n";
  out.flags(old_flags);
  out.precision(old_prec);
}

void write_runs_csv(std::ostream& runs_out, std::ostream& intervals_out, std::span<const RunResult> runs,
                    const Corridor& corridor) {
  runs_out << "scenario,controller,penetration,seed,scheduled,spawned,retired,in_network,min_gap_m,"
              "dynamics_violations,mean_travel_time_s,verified_solutions,digest\n";
  intervals_out << "scenario,controller,penetration,seed,time_s,segment_id,mean_speed_mph,max_queue_mi,"
                   "stopped_delay_s,samples,entered\n";
  runs_out.precision(17);
  intervals_out.precision(17);
  for (const auto& r : runs) {
    runs_out << r.scenario << ',' << to_string(r.controller) << ',' << r.penetration << ',' << r.seed << ','
             << r.scheduled << ',' << r.spawned << ',' << r.retired << ',' << r.in_network << ',' << r.min_gap_m
             << ',' << r.dynamics_violations << ',' << r.mean_travel_time_s << ',' << r.verified_solutions << ','
             << r.digest << '\n';
    for (const auto& x : r.intervals) {
      intervals_out << r.scenario << ',' << to_string(r.controller) << ',' << r.penetration << ',' << r.seed << ','
                    << x.time_s << ',' << corridor.segment(x.segment).id << ',' << x.mean_speed_mph << ','
                    << x.max_queue_len_mi << ',' << x.stopped_delay_s << ',' << x.samples << ',' << x.entered
                    << '\n';
    }
  }
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  std::string x;
  while (std::getline(ss, x, ',')) f.push_back(x);
  return f;
}

}  // namespace

std::vector<RunResult> read_runs_csv(std::istream& runs_in, std::istream& intervals_in, const Corridor& corridor) {
  std::vector<RunResult> runs;
  std::map<std::tuple<std::string, std::string, std::string, std::uint64_t>, std::size_t> index;
  std::string line;
  long no = 0;
  while (std::getline(runs_in, line)) {
    ++no;
    if (line.empty() || line.rfind("scenario,", 0) == 0) continue;
    const auto f = split_csv(line);
    try {
      if (f.size() != 13) throw ValidationError("expected 13 fields");
      RunResult r;
      r.scenario = f[0];
      r.controller = parse_controller(f[1]);
      r.penetration = std::stod(f[2]);
      r.seed = std::stoull(f[3]);
      r.scheduled = std::stol(f[4]);
      r.spawned = std::stol(f[5]);
      r.retired = std::stol(f[6]);
      r.in_network = std::stol(f[7]);
      r.min_gap_m = std::stod(f[8]);
      r.dynamics_violations = std::stol(f[9]);
      r.mean_travel_time_s = std::stod(f[10]);
      r.verified_solutions = std::stol(f[11]);
      r.digest = std::stoull(f[12]);
      index[{f[0], f[1], f[2], r.seed}] = runs.size();
      runs.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw ValidationError("runs csv line " + std::to_string(no) + ": " + e.what());
    }
  }
  no = 0;
  while (std::getline(intervals_in, line)) {
    ++no;
    if (line.empty() || line.rfind("scenario,", 0) == 0) continue;
    const auto f = split_csv(line);
    try {
      if (f.size() != 11) throw ValidationError("expected 11 fields");
      const auto it = index.find({f[0], f[1], f[2], std::stoull(f[3])});
      if (it == index.end()) throw ValidationError("interval of an unknown run");
      DetectorReading x;
      x.time_s = std::stod(f[4]);
      x.segment = corridor.segment_index(f[5]);
      if (x.segment < 0) throw ValidationError("unknown segment '" + f[5] + "'");
      x.mean_speed_mph = std::stod(f[6]);
      x.max_queue_len_mi = std::stod(f[7]);
      x.stopped_delay_s = std::stod(f[8]);
      x.samples = std::stol(f[9]);
      x.entered = std::stol(f[10]);
      runs[it->second].intervals.push_back(x);
    } catch (const std::exception& e) {
      throw ValidationError("intervals csv line " + std::to_string(no) + ": " + e.what());
    }
  }
  return runs;
}

void write_decisions_csv(std::ostream& out, std::span<const RunResult> runs) {
  out << "controller,penetration,seed,";
  write_decision_header(out);
  for (const auto& r : runs) {
    for (const auto& d : r.decisions) {
      out << to_string(r.controller) << ',' << r.penetration << ',' << r.seed << ',';
      write_decision(out, d);
    }
  }
}

void write_offsets_csv(std::ostream& out, std::span<const RunResult> runs) {
  out << "penetration,seed,time_s,intersection,t1,t2,delay,t3_s,t4_s,t_req_s,next_green_start_s\n";
  for (const auto& r : runs) {
    for (const auto& o : r.offsets) {
      out << r.penetration << ',' << r.seed << ',' << o.time_s << ',' << o.intersection << ',' << o.t1 << ','
          << o.t2 << ',' << o.delay << ',' << o.t3_s << ',' << o.t4_s << ',' << o.t_req_s << ','
          << o.next_green_start_s << '\n';
    }
  }
}

}  // namespace cvsig
