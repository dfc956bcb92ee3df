// fedlab: deterministic federated-optimization lab.
//
// Verbs:
//   run        execute a single configuration, write metrics_<id>.csv
//   sweep      expand list-valued keys into a grid and run every point
//   stability  twin-run perturbation probe along one axis
//   validate   parse and echo the resolved configuration
//
// All configuration lives in one flat dotted-key namespace; see
// `fedlab validate` for the full key set and defaults.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "fedlab/config.hpp"
#include "fedlab/stability.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fedlab::fail("cannot write " + path.string());
  out << content;
  if (!out) fedlab::fail("short write to " + path.string());
}

json final_metrics_json(const fedlab::RunMetrics& m) {
  json j = json::object();
  if (m.records.empty()) return j;
  const fedlab::RoundRecord& r = m.records.back();
  auto put = [&](const char* name, double v) {
    if (std::isfinite(v))
      j[name] = v;
    else
      j[name] = nullptr;
  };
  j["round"] = r.round;
  put("train_loss", r.train_loss);
  put("dist_to_opt", r.dist_to_opt);
  put("grad_norm", r.grad_norm);
  put("client_drift", r.client_drift);
  put("control_lag", r.control_lag);
  put("sigma_g", r.sigma_g);
  return j;
}

int run_plan(const fedlab::ExperimentPlan& plan, const std::string& out_dir,
             int jobs, bool single_expected, bool snapshot_tasks) {
  if (single_expected && plan.runs.size() != 1) {
    std::cerr << "run: configuration expands to " << plan.runs.size()
              << " runs; use `sweep` for grids\n";
    return 2;
  }
  fs::create_directories(out_dir);

  std::vector<fedlab::RunMetrics> results(plan.runs.size());
  fedlab::parallel_for(
      static_cast<int>(plan.runs.size()), jobs,
      [&](int i) { results[static_cast<std::size_t>(i)] =
                       fedlab::run_experiment(plan.runs[static_cast<std::size_t>(i)]); });

  json summary;
  summary["config"] = plan.config;
  summary["runs"] = json::array();
  bool any_aborted = false;
  for (std::size_t i = 0; i < plan.runs.size(); ++i) {
    const fedlab::RunMetrics& m = results[i];
    const std::string csv_name = "metrics_" + plan.run_ids[i] + ".csv";
    write_file(fs::path(out_dir) / csv_name, fedlab::metrics_to_csv(m));
    write_file(fs::path(out_dir) / ("metrics_" + plan.run_ids[i] + ".json"),
               fedlab::metrics_json(plan.runs[i], m).dump(2) + "\n");
    if (snapshot_tasks)
      write_file(fs::path(out_dir) / ("task_" + plan.run_ids[i] + ".json"),
                 fedlab::task_to_json(
                     plan.runs[i].task.build(plan.runs[i].seed)) +
                     "\n");
    json entry;
    entry["id"] = plan.run_ids[i];
    entry["seed"] = plan.runs[i].seed;
    entry["status"] = m.aborted ? "aborted" : "ok";
    if (m.aborted) entry["abort_reason"] = m.abort_reason;
    entry["final_metrics"] = final_metrics_json(m);
    entry["metrics_csv"] = csv_name;
    summary["runs"].push_back(std::move(entry));
    if (m.aborted) {
      any_aborted = true;
      std::cerr << plan.run_ids[i] << " aborted: " << m.abort_reason << "\n";
    }
  }
  write_file(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");

  for (std::size_t i = 0; i < plan.runs.size(); ++i) {
    const auto& rec = results[i].records;
    std::cout << plan.run_ids[i] << "  " << to_string(plan.runs[i].algorithm)
              << "  rounds=" << plan.runs[i].rounds;
    if (!results[i].aborted && !rec.empty()) {
      std::cout << "  final_loss=" << rec.back().train_loss;
      if (std::isfinite(rec.back().dist_to_opt))
        std::cout << "  dist_to_opt=" << rec.back().dist_to_opt;
    } else {
      std::cout << "  ABORTED";
    }
    std::cout << "\n";
  }
  return any_aborted ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedlab: deterministic federated-optimization simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = "out";
  int jobs = 1;
  app.add_option("--config", config_path, "JSON config file (flat dotted keys)");
  app.add_option("--set,-s", overrides, "override: key=value (comma list sweeps)");
  app.add_option("--out,-o", out_dir, "output directory");
  app.add_option("--jobs,-j", jobs, "parallel plan items")->check(CLI::PositiveNumber);

  // convenience flags for the most common keys
  std::string algorithm, task_kind;
  int rounds = -1;
  std::int64_t seed = -1;
  bool snapshot_tasks = false;
  app.add_option("--algorithm", algorithm,
                 "fedavg|fedsam|mofedsam|scaffold|fedswa|fedmoswa");
  app.add_option("--task", task_kind, "quadratic|logreg|mlp");
  app.add_option("--rounds", rounds, "communication rounds");
  app.add_option("--seed", seed, "experiment seed");
  app.add_flag("--task-snapshot", snapshot_tasks,
               "also write task_<id>.json dataset snapshots");

  CLI::App* cmd_run = app.add_subcommand("run", "execute one configuration");
  CLI::App* cmd_sweep = app.add_subcommand("sweep", "run a config grid");
  CLI::App* cmd_validate =
      app.add_subcommand("validate", "check a configuration and echo it");
  CLI::App* cmd_stab = app.add_subcommand("stability", "twin-run stability probe");
  for (CLI::App* sub : {cmd_run, cmd_sweep, cmd_validate, cmd_stab})
    sub->fallthrough();

  std::string axis_name = "n";
  std::string values_csv = "50,100,200";
  int trials = 10;
  cmd_stab->add_option("--axis", axis_name, "n|m|sigma_g|K|T");
  cmd_stab->add_option("--values", values_csv, "comma-separated axis values");
  cmd_stab->add_option("--trials", trials, "trials per value")
      ->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (!algorithm.empty()) overrides.push_back("algorithm=" + algorithm);
    if (!task_kind.empty()) overrides.push_back("task.kind=" + task_kind);
    if (rounds >= 0) overrides.push_back("run.rounds=" + std::to_string(rounds));
    if (seed >= 0) overrides.push_back("run.seed=" + std::to_string(seed));

    fedlab::ExperimentPlan plan = fedlab::parse_plan(config_path, overrides);

    if (cmd_validate->parsed()) {
      json echo;
      echo["config"] = plan.config;
      echo["expanded_runs"] = plan.runs.size();
      std::cout << echo.dump(2) << "\n";
      return 0;
    }
    if (cmd_run->parsed())
      return run_plan(plan, out_dir, jobs, true, snapshot_tasks);
    if (cmd_sweep->parsed())
      return run_plan(plan, out_dir, jobs, false, snapshot_tasks);

    if (cmd_stab->parsed()) {
      if (plan.runs.size() != 1) {
        std::cerr << "stability: config must resolve to a single base run\n";
        return 2;
      }
      const fedlab::SweepAxis axis = fedlab::sweep_axis_from_string(axis_name);
      std::vector<double> values;
      {
        std::size_t start = 0;
        while (start <= values_csv.size()) {
          const std::size_t pos = values_csv.find(',', start);
          values.push_back(std::stod(values_csv.substr(
              start,
              pos == std::string::npos ? std::string::npos : pos - start)));
          if (pos == std::string::npos) break;
          start = pos + 1;
        }
      }
      fedlab::StabilityReport report =
          fedlab::stability_sweep(plan.runs[0], axis, values, trials, jobs);
      fs::create_directories(out_dir);
      write_file(fs::path(out_dir) / "stability.csv",
                 fedlab::stability_to_csv(report));
      json summary;
      summary["config"] = plan.config;
      summary["stability"] = {
          {"axis", to_string(report.axis)},
          {"algorithm", to_string(report.algorithm)},
          {"values", report.values},
          {"trials", report.trials},
          {"slope", report.slope},
          {"slope_loss", report.slope_loss},
          {"mean_gap_per_value", report.mean_gap_per_value},
          {"mean_loss_gap_per_value", report.mean_loss_gap_per_value},
          {"mean_sigma_g_per_value", report.mean_sigma_g_per_value},
      };
      write_file(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");
      std::cout << "axis=" << to_string(report.axis)
                << " slope=" << report.slope << "\n";
      return 0;
    }
  } catch (const fedlab::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
