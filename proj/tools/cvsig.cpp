// Command-line driver: closed-loop runs, forecaster training, reports from
// stored metrics, and brute-force solver cross-checks.

#include <chrono>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "cvsig/harness.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace cvsig;

namespace {

// "1-16", "3,5,9" or a mix of both.
std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const auto dash = part.find('-');
    try {
      if (dash == std::string::npos) {
        out.push_back(std::stoull(part));
      } else {
        const auto a = std::stoull(part.substr(0, dash));
        const auto b = std::stoull(part.substr(dash + 1));
        if (b < a) throw ValidationError("seed range " + part + " is reversed");
        for (auto s = a; s <= b; ++s) out.push_back(s);
      }
    } catch (const std::logic_error&) {
      throw ValidationError("bad seed list '" + text + "'");
    }
  }
  if (out.empty()) throw ValidationError("empty seed list");
  return out;
}

std::string tag(const ScenarioConfig& c, ControllerKind k) {
  std::ostringstream s;
  s << c.name << '_' << to_string(k) << "_p" << std::lround(c.penetration * 100);
  return s.str();
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw ValidationError("cannot write " + p.string());
  return f;
}

std::ifstream open_in(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw ValidationError("cannot read " + p.string());
  return f;
}

void write_runs(const fs::path& dir, const ScenarioConfig& c, ControllerKind k, const std::vector<RunResult>& runs) {
  const std::string t = tag(c, k);
  auto runs_f = open_out(dir / (t + "_runs.csv"));
  auto ints_f = open_out(dir / (t + "_intervals.csv"));
  write_runs_csv(runs_f, ints_f, runs, c.corridor);
  if (k == ControllerKind::Adaptive) {
    auto d = open_out(dir / (t + "_decisions.csv"));
    write_decisions_csv(d, runs);
    auto o = open_out(dir / (t + "_offsets.csv"));
    write_offsets_csv(o, runs);
  }
}

bool integrity(const std::vector<RunResult>& runs) {
  bool ok = true;
  for (const auto& r : runs) {
    if (!r.conserved() || !r.collision_free()) {
      std::cerr << "seed " << r.seed << ": integrity failure (spawned " << r.spawned << ", scheduled "
                << r.scheduled << ", retired " << r.retired << ", in network " << r.in_network << ", min gap "
                << r.min_gap_m << " m, dynamics violations " << r.dynamics_violations << ")\n";
      ok = false;
    }
  }
  return ok;
}

std::string seconds_since(std::chrono::steady_clock::time_point t0) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f s", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return buf;
}

// ---------------------------------------------------------------------------

struct RunArgs {
  std::string scenario;
  std::string controller = "both";
  std::vector<double> penetrations;
  std::string seeds;
  int pilot = 0;
  int min_seeds = 16;
  std::string model;
  std::string out = "out";
  std::string dataset_out;
  bool serial = false;
};

int cmd_run(const RunArgs& a) {
  ScenarioConfig cfg = load_scenario(a.scenario);
  if (!a.model.empty()) cfg.model = std::make_shared<const LstmModel>(LstmModel::load(a.model));
  if (!a.seeds.empty()) cfg.seeds = parse_seeds(a.seeds);
  if (a.pilot > 0) {
    ScenarioConfig p = cfg;
    p.controller = ControllerKind::Baseline;
    std::vector<std::uint64_t> pilot_seeds;
    for (int i = 0; i < a.pilot; ++i) pilot_seeds.push_back(cfg.seeds.front() + static_cast<std::uint64_t>(i));
    std::vector<double> tt;
    for (const auto& r : run_replications(p, pilot_seeds)) tt.push_back(r.mean_travel_time_s);
    const int n = std::max(replication_count(tt), a.min_seeds);
    std::cout << "pilot: " << a.pilot << " runs, required " << replication_count(tt) << ", running " << n << "\n";
    cfg.seeds.clear();
    for (int i = 0; i < n; ++i) cfg.seeds.push_back(pilot_seeds.front() + static_cast<std::uint64_t>(i));
  }
  std::vector<ControllerKind> kinds;
  if (a.controller == "both") {
    kinds = {ControllerKind::Baseline, ControllerKind::Adaptive};
  } else {
    kinds = {parse_controller(a.controller)};
  }
  std::vector<double> pens = a.penetrations;
  if (pens.empty()) pens = {0.05, 0.3, 1.0};

  fs::create_directories(a.out);
  std::ofstream dataset;
  if (!a.dataset_out.empty()) dataset = open_out(a.dataset_out);
  bool ok = true;
  bool header = false;
  for (const double pen : pens) {
    if (pen < 0 || pen > 1) throw ValidationError("penetration must lie in [0, 1]");
    std::map<ControllerKind, std::vector<RunResult>> results;
    for (const auto k : kinds) {
      ScenarioConfig c = cfg;
      c.penetration = pen;
      c.controller = k;
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<RunResult> runs;
      if (dataset.is_open()) {
        for (const auto s : c.seeds) {
          std::vector<DatasetRow> rows;
          RunOptions opt;
          opt.dataset = &rows;
          runs.push_back(run_scenario(c, s, opt));
          std::stringstream buf;
          write_dataset_csv(buf, rows);
          std::string line;
          bool first = true;
          while (std::getline(buf, line)) {
            if (first && header) {
              first = false;
              continue;
            }
            first = false;
            dataset << line << '\n';
          }
          header = true;
        }
      } else {
        runs = a.serial ? run_replications_serial(c, c.seeds) : run_replications(c, c.seeds);
      }
      std::cout << to_string(k) << " p=" << pen << ": " << runs.size() << " runs in " << seconds_since(t0) << "\n";
      ok = integrity(runs) && ok;
      write_runs(a.out, c, k, runs);
      results[k] = std::move(runs);
    }
    if (results.size() == 2) {
      ScenarioConfig c = cfg;
      c.penetration = pen;
      const auto rep = compare(results[ControllerKind::Baseline], results[ControllerKind::Adaptive], c.corridor);
      write_report(std::cout, rep);
      std::ostringstream name;
      name << c.name << "_p" << std::lround(pen * 100) << "_report.txt";
      auto f = open_out(fs::path(a.out) / name.str());
      write_report(f, rep);
    }
  }
  return ok ? 0 : 2;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string scenario;
  double penetration = -1;
  std::string seeds = "101,102";
  std::string test_seeds = "103";
  std::string controller = "baseline";
  std::vector<std::string> datasets;
  std::vector<std::string> test_datasets;
  std::vector<int> neurons{10, 20, 50};
  std::vector<int> batches{32, 64};
  int epochs = 50;
  int patience = 5;
  int lookback = 10;
  int stride = 5;
  std::uint64_t seed = 1;
  std::string out = "model.json";
  std::string dataset_out;
};

int cmd_train(const TrainArgs& a) {
  Hyperparams hp;
  hp.max_epochs = a.epochs;
  hp.patience = a.patience;
  hp.lookback = a.lookback;
  TrainGrid grid{a.neurons, a.batches};

  std::vector<Sample> train_set, test_set;
  double pen = a.penetration;
  const auto t0 = std::chrono::steady_clock::now();
  if (!a.datasets.empty()) {
    if (pen < 0) throw ValidationError("--penetration is required with --dataset");
    for (const auto& f : a.datasets) {
      auto in = open_in(f);
      auto s = samples_from_rows(read_dataset_csv(in), a.lookback, a.stride);
      train_set.insert(train_set.end(), s.begin(), s.end());
    }
    for (const auto& f : a.test_datasets) {
      auto in = open_in(f);
      auto s = samples_from_rows(read_dataset_csv(in), a.lookback, 1);
      test_set.insert(test_set.end(), s.begin(), s.end());
    }
  } else {
    if (a.scenario.empty()) throw ValidationError("give --scenario or --dataset");
    ScenarioConfig cfg = load_scenario(a.scenario);
    if (pen >= 0) cfg.penetration = pen;
    pen = cfg.penetration;
    cfg.controller = parse_controller(a.controller);
    cfg.model.reset();
    std::vector<DatasetRow> rows;
    train_set = samples_from_runs(cfg, parse_seeds(a.seeds), a.lookback, a.stride,
                                  a.dataset_out.empty() ? nullptr : &rows);
    if (!a.dataset_out.empty()) {
      auto f = open_out(a.dataset_out);
      write_dataset_csv(f, rows);
    }
    if (!a.test_seeds.empty()) test_set = samples_from_runs(cfg, parse_seeds(a.test_seeds), a.lookback, 1);
  }
  std::cout << "samples: " << train_set.size() << " train/validation, " << test_set.size() << " test ("
            << seconds_since(t0) << ")\n";

  const auto t1 = std::chrono::steady_clock::now();
  const TrainResult r = train(train_set, grid, hp, NadamConfig{}, a.seed);
  for (const auto& c : r.candidates) {
    std::cout << "  H=" << c.neurons << " batch=" << c.batch_size << " epochs=" << c.epochs_run
              << " validation RMSE " << c.validation_rmse << "\n";
  }
  std::cout << "selected H=" << r.model.hidden() << " batch=" << r.model.hyper().batch_size << " in "
            << seconds_since(t1) << "\n";
  if (!test_set.empty()) {
    std::vector<double> actual;
    for (const auto& s : test_set) actual.push_back(s.label);
    std::cout << "test RMSE " << rmse(actual, predict_all(r.model, test_set)) << ", persistence "
              << rmse(actual, persistence_forecast(test_set, pen)) << "\n";
  }
  r.model.save(a.out);
  std::cout << "model written to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string scenario;
  std::string baseline;
  std::string adaptive;
  std::string out;
};

std::vector<RunResult> read_prefix(const std::string& prefix, const Corridor& c) {
  auto runs = open_in(prefix + "_runs.csv");
  auto ints = open_in(prefix + "_intervals.csv");
  return read_runs_csv(runs, ints, c);
}

int cmd_report(const ReportArgs& a) {
  const ScenarioConfig cfg = load_scenario(a.scenario);
  const auto rep = compare(read_prefix(a.baseline, cfg.corridor), read_prefix(a.adaptive, cfg.corridor), cfg.corridor);
  write_report(std::cout, rep);
  if (!a.out.empty()) {
    auto f = open_out(a.out);
    write_report(f, rep);
  }
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_oracle(int trials, std::uint64_t seed, double tolerance) {
  const auto show = [](const char* name, const oracle::CrossCheck& c, const char* worst) {
    std::cout << std::left << std::setw(10) << name << std::right << " trials " << c.trials << ", compared "
              << c.compared << ", mismatches " << c.mismatches << ", worst " << worst << " " << c.worst << "\n";
  };
  const auto t = oracle::check_timing(trials, seed);
  show("timing", t, "abs objective error");
  const auto o = oracle::check_offsets(trials, seed);
  show("offset", o, "abs delay error");
  const auto s = oracle::check_shockwave(trials, seed, tolerance);
  show("shockwave", s, "relative T_Q error");
  std::cout << "shockwave T_Q > C: " << s.bound_violations << "\n";
  return t.mismatches == 0 && o.mismatches == 0 && s.mismatches == 0 && s.bound_violations == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Connected-vehicle adaptive signal control experiments"};
  app.require_subcommand(1);

  RunArgs run;
  auto* r = app.add_subcommand("run", "Closed-loop runs of a scenario; writes metrics CSVs and a comparison report");
  r->add_option("scenario", run.scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  r->add_option("--controller", run.controller, "adaptive, baseline or both")
      ->check(CLI::IsMember({"adaptive", "baseline", "actuated-baseline", "both"}));
  r->add_option("--penetration", run.penetrations, "CV penetration rates (default sweep 0.05 0.3 1)");
  r->add_option("--seeds", run.seeds, "Seeds, e.g. 1-16 or 1,4,9");
  r->add_option("--pilot", run.pilot, "Pilot baseline runs that size the seed count");
  r->add_option("--min-seeds", run.min_seeds, "Lower bound on the piloted seed count");
  r->add_option("--model", run.model, "Forecaster checkpoint")->check(CLI::ExistingFile);
  r->add_option("--out", run.out, "Output directory");
  r->add_option("--dataset-out", run.dataset_out, "Also write forecaster dataset rows (runs serially)");
  r->add_flag("--serial", run.serial, "Run seeds one after another");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the count forecaster from simulated or stored datasets");
  t->add_option("--scenario", tr.scenario, "Scenario JSON generating the datasets")->check(CLI::ExistingFile);
  t->add_option("--penetration", tr.penetration, "CV penetration rate");
  t->add_option("--seeds", tr.seeds, "Training seeds");
  t->add_option("--test-seeds", tr.test_seeds, "Held-out seeds (empty to skip)");
  t->add_option("--controller", tr.controller, "Controller generating the datasets");
  t->add_option("--dataset", tr.datasets, "Stored dataset CSVs, one per run")->check(CLI::ExistingFile);
  t->add_option("--test-dataset", tr.test_datasets, "Held-out dataset CSVs")->check(CLI::ExistingFile);
  t->add_option("--neurons", tr.neurons, "Hidden sizes to try");
  t->add_option("--batch", tr.batches, "Batch sizes to try");
  t->add_option("--epochs", tr.epochs, "Maximum epochs");
  t->add_option("--patience", tr.patience, "Early-stopping patience");
  t->add_option("--lookback", tr.lookback, "Sequence length in seconds");
  t->add_option("--stride", tr.stride, "Training window stride");
  t->add_option("--seed", tr.seed, "Initialization and shuffling seed");
  t->add_option("--out", tr.out, "Model checkpoint path");
  t->add_option("--dataset-out", tr.dataset_out, "Write the generated training rows");

  ReportArgs rep;
  auto* p = app.add_subcommand("report", "Comparison table from stored run metrics");
  p->add_option("--scenario", rep.scenario, "Scenario JSON (corridor layout)")->required()->check(CLI::ExistingFile);
  p->add_option("--baseline", rep.baseline, "Prefix of the baseline <prefix>_runs.csv / _intervals.csv")->required();
  p->add_option("--adaptive", rep.adaptive, "Prefix of the adaptive files")->required();
  p->add_option("--out", rep.out, "Also write the table here");

  int trials = 200;
  std::uint64_t oseed = 2024;
  double tolerance = 0.15;
  auto* o = app.add_subcommand("oracle", "Cross-check the solvers against brute-force references");
  o->add_option("--trials", trials, "Random instances per check");
  o->add_option("--seed", oseed, "Instance generator seed");
  o->add_option("--tolerance", tolerance, "Relative tolerance of the shockwave check");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*r) return cmd_run(run);
    if (*t) return cmd_train(tr);
    if (*p) return cmd_report(rep);
    if (*o) return cmd_oracle(trials, oseed, tolerance);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
