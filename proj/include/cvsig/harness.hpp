#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cvsig/controller.hpp"
#include "cvsig/corridor.hpp"
#include "cvsig/count_forecaster.hpp"
#include "cvsig/microsim.hpp"
#include "json.hpp"

namespace cvsig {

enum class ControllerKind { Adaptive, Baseline };
std::string_view to_string(ControllerKind k);
ControllerKind parse_controller(std::string_view s);

/// Fixed-offset actuated-coordinated plan. Offsets are the first coordinated
/// green start of each intersection within the cycle.
struct BaselinePlan {
  std::vector<double> offsets_s;
  double passage_s = 3.0;     // minor gap-out
  double detector_m = 20.0;   // stop-line zone on each minor approach
};

/// Offsets giving both arterial directions the same progression loss on every
/// link: each relative offset minimizes the squared circular distance to the
/// eastbound and westbound free-flow travel times.
std::vector<double> two_way_offsets(const Corridor& corridor);

/// Actuated-coordinated control of one intersection. The arterial keeps its
/// split green, then yields when the minor stop-line zone is occupied and the
/// minor phase still fits before the next coordinated green. The minor phase
/// gaps out after `passage_s` without a call, maxes out, or is forced off.
class BaselineController {
 public:
  BaselineController(const Corridor& corridor, int intersection, const BaselinePlan& plan);
  bool minor_zone_occupied(const World& world) const;
  void on_minor_green_start(double now);
  void tick(SignalState& s, bool minor_occupied, double now);

 private:
  const Corridor* corridor_;
  int index_;
  BaselinePlan plan_;
  double minor_start_ = 0.0;
  double last_actuation_ = 0.0;
};

struct ScenarioConfig {
  std::string name = "scenario";
  Corridor corridor;
  std::map<std::string, double> demand_vph;  // entry segment id -> rate
  TurningModel turning{0.2, 0.5};
  double penetration = 1.0;
  ControllerKind controller = ControllerKind::Adaptive;
  std::vector<std::uint64_t> seeds{1};
  double duration_s = 4500.0;
  double warmup_s = 900.0;
  double interval_s = 90.0;  // detector sampling period
  BaselinePlan baseline;
  AdaptiveConfig adaptive;
  SimConfig sim;
  std::shared_ptr<const LstmModel> model;  // optional count forecaster
  int phase_window_s = 5;
  double rate_window_s = 900.0;  // long-run arrival rate window
};

/// Parses a scenario. "synthetic" (parameters of the generated corridor) or
/// "corridor" (explicit) describes the network. Relative model paths resolve
/// against `base_dir`. Throws ValidationError naming the offending field.
ScenarioConfig parse_scenario(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ScenarioConfig load_scenario(const std::filesystem::path& file);

/// Count per segment: the LSTM when a model is loaded and enough history
/// exists, otherwise the CV count divided by the penetration rate. Also keeps
/// a long-run entry rate: CVs newly seen on the segment over the last
/// `rate_window_s`, scaled by the penetration.
class CountEstimator {
 public:
  CountEstimator(const Corridor& corridor, std::shared_ptr<const LstmModel> model, double penetration,
                 int phase_window_s = 5, double rate_window_s = 900.0);

  void observe(double time_s, const std::vector<std::vector<Bsm>>& by_segment,
               std::span<const SignalState> signals);
  double predicted(int segment);
  /// Vehicles per second entering the segment; negative before any CV entry.
  double arrival_rate(int segment) const;
  const FeatureVector& latest(int segment) const { return history_[static_cast<std::size_t>(segment)].back(); }
  bool has_history(int segment) const { return !history_[static_cast<std::size_t>(segment)].empty(); }

 private:
  const Corridor* corridor_;
  std::shared_ptr<const LstmModel> model_;
  double penetration_;
  std::vector<FeatureBuilder> builders_;
  std::vector<std::vector<FeatureVector>> history_;
  std::vector<double> cache_;
  std::vector<double> cache_time_;
  double now_ = -1.0;
  double start_ = -1.0;
  double rate_window_s_;
  std::vector<std::vector<long>> last_ids_;
  std::vector<std::deque<double>> entries_;
};

struct OffsetRecord {
  double time_s = 0.0;
  int intersection = 0;
  int t1 = 0;
  int t2 = 0;
  double delay = 0.0;
  double t3_s = 0.0;
  double t4_s = 0.0;
  double t_req_s = 0.0;
  double next_green_start_s = 0.0;
};

struct RunResult {
  std::string scenario;
  ControllerKind controller = ControllerKind::Adaptive;
  double penetration = 0.0;
  std::uint64_t seed = 0;
  std::vector<DetectorReading> intervals;  // after warm-up only
  long scheduled = 0;  // arrivals due by the last admission of the run
  long spawned = 0;
  long retired = 0;
  long in_network = 0;
  double min_gap_m = 0.0;
  long dynamics_violations = 0;
  double mean_travel_time_s = 0.0;
  long verified_solutions = 0;
  std::vector<DecisionRecord> decisions;
  std::vector<OffsetRecord> offsets;
  std::uint64_t digest = 0;  // over every interval value and counter

  bool conserved() const { return spawned == scheduled && spawned == in_network + retired; }
  bool collision_free() const { return min_gap_m > 0.0 && dynamics_violations == 0; }
};

struct RunOptions {
  std::vector<DatasetRow>* dataset = nullptr;  // filled with one row per segment per second after warm-up
  bool keep_decisions = true;
};

/// Closed-loop run of one seed. Arrivals depend only on the seed, so runs
/// that differ in controller see identical traffic.
RunResult run_scenario(const ScenarioConfig& config, std::uint64_t seed, const RunOptions& options = {});

/// All configured seeds; the OpenMP version runs seeds as independent jobs and
/// returns results in seed order, identical to the serial loop.
std::vector<RunResult> run_replications(const ScenarioConfig& config, std::span<const std::uint64_t> seeds);
std::vector<RunResult> run_replications_serial(const ScenarioConfig& config, std::span<const std::uint64_t> seeds);

/// Forecaster windows from the dataset of one run: rows are grouped by segment
/// (stable, so time order holds within each) before windowing.
std::vector<Sample> samples_from_rows(std::vector<DatasetRow> rows, int lookback, int stride = 1);
/// Dataset windows of every seed, run by run. `rows_out` collects the raw rows.
std::vector<Sample> samples_from_runs(const ScenarioConfig& config, std::span<const std::uint64_t> seeds,
                                      int lookback, int stride = 1, std::vector<DatasetRow>* rows_out = nullptr);
/// Persistence forecast of each sample: its last CV count over the penetration.
std::vector<double> persistence_forecast(std::span<const Sample> samples, double penetration);

// ---------------------------------------------------------------------------
// Metrics

struct DirectionMetrics {
  double mean_speed_mph = 0.0;
  double mean_max_queue_mi = 0.0;
  double stopped_delay_s = 0.0;  // per vehicle entering the approach
};

/// Post-warm-up metrics per direction of one run.
std::map<Direction, DirectionMetrics> summarize(const RunResult& run, const Corridor& corridor);

struct MetricDelta {
  double baseline_mean = 0.0, baseline_sd = 0.0;
  double adaptive_mean = 0.0, adaptive_sd = 0.0;
  double percent = 0.0;           // (adaptive - baseline) / baseline * 100
  double paired_mean_delta = 0.0; // mean over seeds of adaptive - baseline
  int negative = 0, positive = 0; // seeds with a decrease / increase
  double sign_test_p = 1.0;       // one-sided, H1: decreases dominate
};

struct DirectionReport {
  MetricDelta speed, max_queue, stopped_delay;
};

struct MetricsReport {
  std::string scenario;
  double penetration = 0.0;
  std::vector<std::uint64_t> seeds;
  std::map<Direction, DirectionReport> directions;
};

/// Paired comparison. Throws ValidationError when the seed sets differ.
MetricsReport compare(std::span<const RunResult> baseline, std::span<const RunResult> adaptive,
                      const Corridor& corridor);

/// P(X >= k) for X ~ Binomial(n, 1/2).
double sign_test_p(int k, int n);

/// required_samples on pilot travel times: sigma is the sample standard
/// deviation, the tolerance 6% of the mean. Zero variance gives 1. Needs >= 2 pilots.
int replication_count(std::span<const double> pilot_travel_times_s, double tolerance_fraction = 0.06);

void write_report(std::ostream& out, const MetricsReport& r);

// Raw metrics: one row per run plus one row per segment interval. Reading them
// back and recomputing a report is bit-identical.
void write_runs_csv(std::ostream& runs_out, std::ostream& intervals_out, std::span<const RunResult> runs,
                    const Corridor& corridor);
std::vector<RunResult> read_runs_csv(std::istream& runs_in, std::istream& intervals_in, const Corridor& corridor);
void write_decisions_csv(std::ostream& out, std::span<const RunResult> runs);
void write_offsets_csv(std::ostream& out, std::span<const RunResult> runs);

}  // namespace cvsig
