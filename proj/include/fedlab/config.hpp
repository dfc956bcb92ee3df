#ifndef FEDLAB_CONFIG_HPP
#define FEDLAB_CONFIG_HPP

#include <string>
#include <vector>

#include <json.hpp>

#include "fedlab/engine.hpp"

namespace fedlab {

// A parsed experiment: one RunConfig per grid point. List-valued keys expand
// as a Cartesian product in schema order; expanded runs get distinct derived
// seeds unless run.seed itself is swept.
struct ExperimentPlan {
  std::vector<RunConfig> runs;
  std::vector<std::string> run_ids;   // r000, r001, ...
  nlohmann::json config;              // as given, defaults materialized
};

// Flat dotted-key namespace ("sched.rho", "algo.gamma", ...). Sources are a
// JSON object file and/or "key=value" override strings (value may be a
// comma list to sweep). Unknown keys and out-of-range values are rejected
// with the offending key in the message.
ExperimentPlan parse_plan(const std::string& config_path,
                          const std::vector<std::string>& overrides);

// Every key materialized for one concrete run.
nlohmann::json resolved_config_json(const RunConfig& cfg);

// The run's JSON artifact: the resolved config plus every round record.
nlohmann::json metrics_json(const RunConfig& cfg, const RunMetrics& metrics);

const std::vector<std::string>& known_keys();

}  // namespace fedlab

#endif
