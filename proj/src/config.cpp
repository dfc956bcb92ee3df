#include "fedlab/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>

namespace fedlab {

namespace {

using nlohmann::json;

struct KeyDef {
  const char* name;
  std::function<void(RunConfig&, const json&)> set;
  std::function<json(const RunConfig&)> get;
};

[[noreturn]] void bad_key(const std::string& key, const std::string& what) {
  fail("config key '" + key + "': " + what);
}

double as_num(const std::string& key, const json& v) {
  if (!v.is_number()) bad_key(key, "expected a number, got " + v.dump());
  return v.get<double>();
}

int as_int(const std::string& key, const json& v) {
  if (!v.is_number_integer()) bad_key(key, "expected an integer, got " + v.dump());
  return v.get<int>();
}

bool as_bool(const std::string& key, const json& v) {
  if (!v.is_boolean()) bad_key(key, "expected a boolean, got " + v.dump());
  return v.get<bool>();
}

std::string as_str(const std::string& key, const json& v) {
  if (!v.is_string()) bad_key(key, "expected a string, got " + v.dump());
  return v.get<std::string>();
}

const std::vector<KeyDef>& registry() {
  static const std::vector<KeyDef> defs = {
      {"task.kind",
       [](RunConfig& c, const json& v) {
         c.task.kind = task_kind_from_string(as_str("task.kind", v));
       },
       [](const RunConfig& c) { return json(to_string(c.task.kind)); }},
      {"task.dim",
       [](RunConfig& c, const json& v) { c.task.dim = as_int("task.dim", v); },
       [](const RunConfig& c) { return json(c.task.dim); }},
      {"task.clients",
       [](RunConfig& c, const json& v) {
         c.task.clients = as_int("task.clients", v);
       },
       [](const RunConfig& c) { return json(c.task.clients); }},
      {"task.samples_per_client",
       [](RunConfig& c, const json& v) {
         c.task.samples_per_client = as_int("task.samples_per_client", v);
       },
       [](const RunConfig& c) { return json(c.task.samples_per_client); }},
      {"task.hetero_knob",
       [](RunConfig& c, const json& v) {
         c.task.hetero_knob = as_num("task.hetero_knob", v);
         if (c.task.hetero_knob < 0.0)
           bad_key("task.hetero_knob", "must be >= 0");
       },
       [](const RunConfig& c) { return json(c.task.hetero_knob); }},
      {"task.noise_sigma",
       [](RunConfig& c, const json& v) {
         c.task.noise_sigma = as_num("task.noise_sigma", v);
         if (c.task.noise_sigma < 0.0)
           bad_key("task.noise_sigma", "must be >= 0");
       },
       [](const RunConfig& c) { return json(c.task.noise_sigma); }},
      {"task.dirichlet_conc",
       [](RunConfig& c, const json& v) {
         c.task.dirichlet_conc = as_num("task.dirichlet_conc", v);
         if (c.task.dirichlet_conc <= 0.0)
           bad_key("task.dirichlet_conc", "must be > 0");
       },
       [](const RunConfig& c) { return json(c.task.dirichlet_conc); }},
      {"task.hidden",
       [](RunConfig& c, const json& v) {
         c.task.hidden = as_int("task.hidden", v);
       },
       [](const RunConfig& c) { return json(c.task.hidden); }},
      {"task.mu",
       [](RunConfig& c, const json& v) { c.task.mu = as_num("task.mu", v); },
       [](const RunConfig& c) { return json(c.task.mu); }},
      {"task.beta",
       [](RunConfig& c, const json& v) { c.task.beta = as_num("task.beta", v); },
       [](const RunConfig& c) { return json(c.task.beta); }},
      {"algorithm",
       [](RunConfig& c, const json& v) {
         c.algorithm = algorithm_from_string(as_str("algorithm", v));
       },
       [](const RunConfig& c) { return json(to_string(c.algorithm)); }},
      {"algo.alpha",
       [](RunConfig& c, const json& v) {
         c.algo.alpha = as_num("algo.alpha", v);
         if (c.algo.alpha <= 0.0) bad_key("algo.alpha", "must be > 0");
       },
       [](const RunConfig& c) { return json(c.algo.alpha); }},
      {"algo.gamma",
       [](RunConfig& c, const json& v) {
         c.algo.gamma = as_num("algo.gamma", v);
         if (c.algo.gamma <= 0.0 || c.algo.gamma > 1.0)
           bad_key("algo.gamma", "must be in (0, 1]");
       },
       [](const RunConfig& c) { return json(c.algo.gamma); }},
      {"algo.sam_radius",
       [](RunConfig& c, const json& v) {
         c.algo.sam_radius = as_num("algo.sam_radius", v);
         if (c.algo.sam_radius < 0.0) bad_key("algo.sam_radius", "must be >= 0");
       },
       [](const RunConfig& c) { return json(c.algo.sam_radius); }},
      {"algo.ctrl_option",
       [](RunConfig& c, const json& v) {
         const int opt = as_int("algo.ctrl_option", v);
         if (opt != 1 && opt != 2) bad_key("algo.ctrl_option", "must be 1 or 2");
         c.algo.ctrl_option =
             opt == 1 ? CtrlOption::option1 : CtrlOption::option2;
       },
       [](const RunConfig& c) {
         return json(c.algo.ctrl_option == CtrlOption::option1 ? 1 : 2);
       }},
      {"algo.mom_beta",
       [](RunConfig& c, const json& v) {
         c.algo.mom_beta = as_num("algo.mom_beta", v);
         if (c.algo.mom_beta <= 0.0 || c.algo.mom_beta > 1.0)
           bad_key("algo.mom_beta", "must be in (0, 1]");
       },
       [](const RunConfig& c) { return json(c.algo.mom_beta); }},
      {"algo.ctrl_init_grad",
       [](RunConfig& c, const json& v) {
         c.algo.ctrl_init_grad = as_bool("algo.ctrl_init_grad", v);
       },
       [](const RunConfig& c) { return json(c.algo.ctrl_init_grad); }},
      {"algo.swa_shadow",
       [](RunConfig& c, const json& v) {
         c.algo.swa_shadow = as_bool("algo.swa_shadow", v);
       },
       [](const RunConfig& c) { return json(c.algo.swa_shadow); }},
      {"sched.eta_l",
       [](RunConfig& c, const json& v) {
         c.sched.eta_l = as_num("sched.eta_l", v);
         if (c.sched.eta_l <= 0.0) bad_key("sched.eta_l", "must be > 0");
       },
       [](const RunConfig& c) { return json(c.sched.eta_l); }},
      {"sched.rho",
       [](RunConfig& c, const json& v) {
         c.sched.rho = as_num("sched.rho", v);
         if (c.sched.rho < 0.0 || c.sched.rho > 1.0)
           bad_key("sched.rho", "must be in [0, 1]");
       },
       [](const RunConfig& c) { return json(c.sched.rho); }},
      {"sched.local_iters",
       [](RunConfig& c, const json& v) {
         c.sched.local_iters = as_int("sched.local_iters", v);
         if (c.sched.local_iters < 1) bad_key("sched.local_iters", "must be >= 1");
       },
       [](const RunConfig& c) { return json(c.sched.local_iters); }},
      {"sched.round_decay",
       [](RunConfig& c, const json& v) {
         c.sched.round_decay = as_num("sched.round_decay", v);
         if (c.sched.round_decay <= 0.0 || c.sched.round_decay > 1.0)
           bad_key("sched.round_decay", "must be in (0, 1]");
       },
       [](const RunConfig& c) { return json(c.sched.round_decay); }},
      {"run.rounds",
       [](RunConfig& c, const json& v) {
         c.rounds = as_int("run.rounds", v);
         if (c.rounds < 0) bad_key("run.rounds", "must be >= 0");
       },
       [](const RunConfig& c) { return json(c.rounds); }},
      {"run.participation",
       [](RunConfig& c, const json& v) {
         c.participation = as_int("run.participation", v);
         if (c.participation < 0) bad_key("run.participation", "must be >= 0");
       },
       [](const RunConfig& c) { return json(c.participation); }},
      {"run.participation_rate",
       [](RunConfig& c, const json& v) {
         c.participation_rate = as_num("run.participation_rate", v);
         if (c.participation_rate <= 0.0 || c.participation_rate > 1.0)
           bad_key("run.participation_rate", "must be in (0, 1]");
       },
       [](const RunConfig& c) { return json(c.participation_rate); }},
      {"run.batch_size",
       [](RunConfig& c, const json& v) {
         c.batch_size = as_int("run.batch_size", v);
         if (c.batch_size < 0) bad_key("run.batch_size", "must be >= 0");
       },
       [](const RunConfig& c) { return json(c.batch_size); }},
      {"run.seed",
       [](RunConfig& c, const json& v) {
         if (!v.is_number_integer()) bad_key("run.seed", "expected an integer");
         c.seed = v.get<std::uint64_t>();
       },
       [](const RunConfig& c) { return json(c.seed); }},
      {"run.threads",
       [](RunConfig& c, const json& v) {
         c.threads = as_int("run.threads", v);
         if (c.threads < 1) bad_key("run.threads", "must be >= 1");
       },
       [](const RunConfig& c) { return json(c.threads); }},
      {"run.diagnostics",
       [](RunConfig& c, const json& v) {
         c.diagnostics = as_bool("run.diagnostics", v);
       },
       [](const RunConfig& c) { return json(c.diagnostics); }},
  };
  return defs;
}

const KeyDef* find_key(const std::string& name) {
  for (const KeyDef& d : registry())
    if (name == d.name) return &d;
  return nullptr;
}

// "3" -> 3, "0.5" -> 0.5, "true" -> true, else string
json parse_scalar(const std::string& text) {
  json v = json::parse(text, nullptr, false);
  if (!v.is_discarded() && !v.is_object() && !v.is_array()) return v;
  return json(text);
}

json parse_override_value(const std::string& text) {
  if (text.find(',') == std::string::npos) return parse_scalar(text);
  json arr = json::array();
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t pos = text.find(',', start);
    const std::string part = text.substr(
        start, pos == std::string::npos ? std::string::npos : pos - start);
    arr.push_back(parse_scalar(part));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return arr;
}

}  // namespace

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const KeyDef& d : registry()) v.emplace_back(d.name);
    return v;
  }();
  return names;
}

ExperimentPlan parse_plan(const std::string& config_path,
                          const std::vector<std::string>& overrides) {
  // gather raw values keyed by schema order
  std::map<std::string, json> raw;

  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) fail("cannot open config file: " + config_path);
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) fail("config file is not valid JSON: " + config_path);
    if (!doc.is_object()) fail("config file must hold a JSON object");
    for (auto it = doc.begin(); it != doc.end(); ++it) {
      if (!find_key(it.key())) bad_key(it.key(), "unknown key");
      raw[it.key()] = it.value();
    }
  }
  for (const std::string& ov : overrides) {
    const std::size_t eq = ov.find('=');
    if (eq == std::string::npos)
      fail("override must look like key=value: " + ov);
    const std::string key = ov.substr(0, eq);
    if (!find_key(key)) bad_key(key, "unknown key");
    raw[key] = parse_override_value(ov.substr(eq + 1));
  }

  // validate scalars early and collect sweep lists in schema order
  RunConfig base;
  std::vector<std::pair<const KeyDef*, std::vector<json>>> sweeps;
  for (const KeyDef& d : registry()) {
    auto it = raw.find(d.name);
    if (it == raw.end()) continue;
    if (it->second.is_array()) {
      if (it->second.empty()) bad_key(d.name, "empty list");
      std::vector<json> vals(it->second.begin(), it->second.end());
      RunConfig probe = base;
      for (const json& v : vals) d.set(probe, v);  // type/range check
      sweeps.emplace_back(&d, std::move(vals));
    } else {
      d.set(base, it->second);
    }
  }

  ExperimentPlan plan;
  std::size_t total = 1;
  for (const auto& [def, vals] : sweeps) total *= vals.size();
  require(total >= 1 && total <= 100000, "grid expands to too many runs");

  bool seed_swept = false;
  for (const auto& [def, vals] : sweeps)
    if (std::string(def->name) == "run.seed") seed_swept = true;

  for (std::size_t index = 0; index < total; ++index) {
    RunConfig cfg = base;
    std::size_t rem = index;
    for (const auto& [def, vals] : sweeps) {
      def->set(cfg, vals[rem % vals.size()]);
      rem /= vals.size();
    }
    if (total > 1 && !seed_swept)
      cfg.seed = CounterRng::derive({base.seed, stream::plan, index}).next_u64();
    cfg.validate();
    plan.runs.push_back(std::move(cfg));
    char id[16];
    std::snprintf(id, sizeof(id), "r%03zu", index);
    plan.run_ids.emplace_back(id);
  }

  plan.config = json::object();
  for (const KeyDef& d : registry()) {
    auto it = raw.find(d.name);
    plan.config[d.name] = it != raw.end() ? it->second : d.get(base);
  }
  return plan;
}

nlohmann::json resolved_config_json(const RunConfig& cfg) {
  json j = json::object();
  for (const KeyDef& d : registry()) j[d.name] = d.get(cfg);
  return j;
}

nlohmann::json metrics_json(const RunConfig& cfg, const RunMetrics& metrics) {
  json j;
  j["config"] = resolved_config_json(cfg);
  j["aborted"] = metrics.aborted;
  if (metrics.aborted) j["abort_reason"] = metrics.abort_reason;
  json records = json::array();
  for (const RoundRecord& r : metrics.records) {
    // non-finite values (absent metrics) serialize as null
    records.push_back({{"round", r.round},
                       {"train_loss", r.train_loss},
                       {"dist_to_opt", r.dist_to_opt},
                       {"grad_norm", r.grad_norm},
                       {"client_drift", r.client_drift},
                       {"control_lag", r.control_lag},
                       {"sigma_g", r.sigma_g},
                       {"wall_ms", r.wall_ms}});
  }
  j["records"] = std::move(records);
  return j;
}

}  // namespace fedlab
