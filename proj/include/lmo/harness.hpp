#pragma once

// Config-driven experiment runner. A config names a simulator, a budget setting,
// seeds and a list of methods; every (method, seed) cell runs on its own trainers
// and failures stay inside their cell.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "lmo/analysis.hpp"
#include "lmo/budget.hpp"
#include "lmo/error.hpp"
#include "lmo/methods.hpp"
#include "lmo/serialization.hpp"
#include "lmo/simplex.hpp"
#include "lmo/trainer.hpp"

namespace lmo {

enum class MethodKind { Stratified, GridSearch, Dml, SkillIt, DoReMi, DoGE, Aioli, AioliOod, AioliPlus };

struct MethodSpec {
  std::string label;
  MethodKind kind = MethodKind::Stratified;
  BaseMethod base = BaseMethod::GridSearch;  // AioliPlus only
  SkillItParams skill_it;
  DoReMiParams doremi;
  DoGEParams doge;
  DmlParams dml;
  AioliParams aioli;
};

struct AnalysisConfig {
  std::string method = "doge";
  std::int64_t round = 100;
  std::size_t smoothing = 100;
  std::int64_t horizon = 100;
  std::uint64_t noise_seed = 0;
  int greedy_rounds = 2;
  std::int64_t round_steps = 1000;
  std::size_t max_schedules = 10000;
};

struct OutputConfig {
  std::string report;
  std::string format = "json";
  std::string trajectories;  // directory; empty disables
};

struct ExperimentConfig {
  TrainerConfig simulator;
  std::int64_t S = 0;
  BudgetMode mode = BudgetMode::Unrestricted;
  std::int64_t allowance = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<MethodSpec> methods;
  SweepSpec sweep = DirichletSweep{};
  std::int64_t trajectory_stride = 100;
  std::size_t parallelism = 1;
  AnalysisConfig analysis;
  OutputConfig output;
};

namespace detail {

// Path-aware reader over a JSON object; every error names the offending field.
class ConfigNode {
 public:
  ConfigNode(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) invalid("", "expected an object");
  }

  [[noreturn]] void invalid(const std::string& key, const std::string& msg) const {
    fail(ErrorCode::ValidationError, field(key) + ": " + msg);
  }

  std::string field(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  const json& raw(const std::string& key) {
    if (!has(key)) invalid(key, "required field missing");
    return j_.at(key);
  }

  double number(const std::string& key, std::optional<double> def = std::nullopt) {
    if (!has(key)) {
      if (def) return *def;
      invalid(key, "required field missing");
    }
    const auto& v = j_.at(key);
    if (!v.is_number()) invalid(key, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) invalid(key, "expected a finite number");
    return d;
  }

  std::int64_t integer(const std::string& key, std::optional<std::int64_t> def = std::nullopt) {
    if (!has(key)) {
      if (def) return *def;
      invalid(key, "required field missing");
    }
    const auto& v = j_.at(key);
    if (!v.is_number_integer()) invalid(key, "expected an integer");
    return v.get<std::int64_t>();
  }

  std::string string(const std::string& key, std::optional<std::string> def = std::nullopt) {
    if (!has(key)) {
      if (def) return *def;
      invalid(key, "required field missing");
    }
    const auto& v = j_.at(key);
    if (!v.is_string()) invalid(key, "expected a string");
    return v.get<std::string>();
  }

  Eigen::VectorXd vector(const std::string& key) {
    try {
      return vector_from_json(raw(key));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ValidationError) throw;
      invalid(key, e.what());
    }
  }

  Eigen::MatrixXd matrix(const std::string& key) {
    try {
      return matrix_from_json(raw(key));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ValidationError) throw;
      invalid(key, e.what());
    }
  }

  ConfigNode child(const std::string& key) { return {raw(key), field(key)}; }

  std::vector<ConfigNode> children(const std::string& key) {
    const auto& arr = raw(key);
    if (!arr.is_array()) invalid(key, "expected an array");
    std::vector<ConfigNode> out;
    for (std::size_t i = 0; i < arr.size(); ++i) out.emplace_back(arr[i], field(key) + "[" + std::to_string(i) + "]");
    return out;
  }

  void check(bool ok, const std::string& key, const std::string& msg) const {
    if (!ok) invalid(key, msg);
  }

  /// Rejects keys that were never read.
  void done() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) invalid(key, "unknown field");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline MethodKind parse_kind(const std::string& name, BaseMethod& base, bool& ok) {
  ok = true;
  if (name == "stratified") return MethodKind::Stratified;
  if (name == "grid_search") return MethodKind::GridSearch;
  if (name == "dml") return MethodKind::Dml;
  if (name == "skill_it") return MethodKind::SkillIt;
  if (name == "doremi") return MethodKind::DoReMi;
  if (name == "doge") return MethodKind::DoGE;
  if (name == "aioli") return MethodKind::Aioli;
  if (name == "aioli_ood") return MethodKind::AioliOod;
  if (name.rfind("aioli+", 0) == 0) {
    const auto rest = name.substr(6);
    for (auto b : {BaseMethod::GridSearch, BaseMethod::Dml, BaseMethod::SkillIt, BaseMethod::DoReMi, BaseMethod::DoGE})
      if (rest == to_string(b)) {
        base = b;
        return MethodKind::AioliPlus;
      }
  }
  ok = false;
  return MethodKind::Stratified;
}

inline double default_delta(std::size_t m) {
  switch (m) {
    case 3: return 0.288;
    case 7: return 0.07;
    default: return 0.128;
  }
}

inline void parse_skill_it(ConfigNode& n, SkillItParams& p) {
  p.rounds = static_cast<int>(n.integer("rounds", p.rounds));
  p.eta = n.number("eta", p.eta);
  p.window = static_cast<int>(n.integer("window", p.window));
  n.check(p.rounds >= 1, "rounds", "must be >= 1");
  n.check(p.eta > 0.0, "eta", "must be > 0");
  n.check(p.window >= 1, "window", "must be >= 1");
}

inline void parse_doremi(ConfigNode& n, double& eta, double& smoothing) {
  eta = n.number("eta", eta);
  smoothing = n.number("smoothing", smoothing);
  n.check(eta > 0.0, "eta", "must be > 0");
  n.check(smoothing >= 0.0 && smoothing <= 1.0, "smoothing", "must lie in [0, 1]");
}

inline void parse_dml(ConfigNode& n, DmlParams& p) {
  p.fit.restarts = static_cast<int>(n.integer("restarts", p.fit.restarts));
  p.fit.huber_delta = n.number("huber_delta", p.fit.huber_delta);
  p.fit.max_iterations = static_cast<int>(n.integer("max_iterations", p.fit.max_iterations));
  p.dense_samples = static_cast<std::size_t>(n.integer("dense_samples", static_cast<std::int64_t>(p.dense_samples)));
  p.dense_alpha = n.number("dense_alpha", p.dense_alpha);
  p.seed = static_cast<std::uint64_t>(n.integer("seed", 0));
  p.fit.seed = p.seed;
  n.check(p.fit.restarts >= 1, "restarts", "must be >= 1");
  n.check(p.fit.huber_delta > 0.0, "huber_delta", "must be > 0");
  n.check(p.fit.max_iterations >= 1, "max_iterations", "must be >= 1");
  n.check(p.dense_alpha > 0.0, "dense_alpha", "must be > 0");
}

inline void parse_aioli(ConfigNode& n, AioliParams& p, std::size_t m) {
  p.rounds = static_cast<int>(n.integer("rounds", 20));
  p.sweeps = static_cast<std::size_t>(n.integer("sweeps", 4));
  p.epsilon = n.number("epsilon", 0.75);
  p.eta = n.number("eta", 0.2);
  p.delta = n.number("delta", default_delta(m));
  if (n.has("gamma")) p.gamma = n.number("gamma");
  p.seed = static_cast<std::uint64_t>(n.integer("seed", 0));
  n.check(p.rounds >= 1, "rounds", "must be >= 1");
  n.check(p.sweeps >= 1, "sweeps", "must be >= 1");
  n.check(p.epsilon >= 0.0 && p.epsilon < 1.0, "epsilon", "must lie in [0, 1)");
  n.check(p.eta > 0.0, "eta", "must be > 0");
  n.check(p.delta > 0.0 && p.delta < 1.0, "delta", "must lie in (0, 1)");
  if (p.gamma) n.check(*p.gamma >= 0.0 && *p.gamma < 1.0, "gamma", "must lie in [0, 1)");
}

inline void parse_base_params(ConfigNode& n, MethodSpec& spec) {
  switch (spec.base) {
    case BaseMethod::GridSearch: break;
    case BaseMethod::Dml: parse_dml(n, spec.dml); break;
    case BaseMethod::SkillIt: parse_skill_it(n, spec.skill_it); break;
    case BaseMethod::DoReMi: parse_doremi(n, spec.doremi.eta, spec.doremi.smoothing); break;
    case BaseMethod::DoGE: parse_doremi(n, spec.doge.eta, spec.doge.smoothing); break;
  }
}

inline MethodSpec parse_method(ConfigNode& n, std::size_t m, std::int64_t S) {
  MethodSpec spec;
  const auto name = n.string("name");
  bool ok = false;
  spec.kind = parse_kind(name, spec.base, ok);
  n.check(ok, "name", "unknown method '" + name + "'");
  spec.label = n.string("label", name);
  switch (spec.kind) {
    case MethodKind::Stratified:
    case MethodKind::GridSearch: break;
    case MethodKind::Dml: parse_dml(n, spec.dml); break;
    case MethodKind::SkillIt: parse_skill_it(n, spec.skill_it); break;
    case MethodKind::DoReMi: parse_doremi(n, spec.doremi.eta, spec.doremi.smoothing); break;
    case MethodKind::DoGE: parse_doremi(n, spec.doge.eta, spec.doge.smoothing); break;
    case MethodKind::Aioli:
    case MethodKind::AioliOod:
    case MethodKind::AioliPlus:
      parse_aioli(n, spec.aioli, m);
      n.check(S >= static_cast<std::int64_t>(spec.aioli.rounds) * static_cast<std::int64_t>(m * spec.aioli.sweeps),
              "rounds", "S must be >= rounds * m * sweeps so every interval has a step");
      if (spec.kind == MethodKind::AioliPlus && n.has("base")) {
        auto b = n.child("base");
        parse_base_params(b, spec);
        b.done();
      }
      break;
  }
  n.done();
  return spec;
}

inline TrainerConfig parse_simulator(ConfigNode& n) {
  TrainerConfig c;
  const auto m = n.integer("m");
  n.check(m >= 2, "m", "must be >= 2");
  c.m = static_cast<std::size_t>(m);
  const auto mm = static_cast<Eigen::Index>(m);
  const auto kind = n.string("kind", "linear");
  n.check(kind == "linear" || kind == "log_linear", "kind", "must be 'linear' or 'log_linear'");
  c.kind = kind == "linear" ? TrainerKind::Linear : TrainerKind::LogLinear;
  const double floor = n.number("loss_floor", 0.01);
  n.check(floor > 0.0, "loss_floor", "must be > 0");

  std::vector<DynamicsSegment> segments;
  if (n.has("interaction")) {
    n.check(!n.has("schedule"), "schedule", "give either interaction or schedule, not both");
    segments.push_back({0, n.matrix("interaction")});
  } else if (n.has("schedule")) {
    for (auto& seg : n.children("schedule")) {
      segments.push_back({seg.integer("start"), seg.matrix("matrix")});
      seg.done();
    }
  } else {
    n.check(c.kind == TrainerKind::LogLinear, "interaction", "linear simulator needs interaction or schedule");
    segments.push_back({0, Eigen::MatrixXd::Zero(mm, mm)});
  }
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto& A = segments[s].per_step;
    n.check(A.rows() == mm && A.cols() == mm, segments.size() == 1 && n.has("interaction") ? "interaction" : "schedule",
            "matrix must be m x m");
  }
  try {
    c.dynamics = DynamicsSchedule(segments, floor);
  } catch (const Error& e) {
    n.invalid("schedule", e.what());
  }

  if (n.has("initial_losses")) {
    const auto& raw = n.raw("initial_losses");
    if (raw.is_array()) {
      c.initial = SplitLosses::same(n.vector("initial_losses"));
    } else {
      auto il = n.child("initial_losses");
      c.initial = {il.vector("train"), il.vector("val"), il.vector("test")};
      il.done();
    }
  } else {
    n.check(c.kind == TrainerKind::LogLinear, "initial_losses", "required field missing");
  }
  if (n.has("static_law")) {
    try {
      c.static_law = static_law_from_json(n.raw("static_law"));
    } catch (const Error& e) {
      n.invalid("static_law", e.what());
    }
  }
  c.law_horizon = n.integer("law_horizon", 0);
  c.observation_noise = n.number("noise_sigma", 0.0);
  c.gradient_noise = n.number("gradient_noise_sigma", 0.0);
  n.check(c.observation_noise >= 0.0, "noise_sigma", "must be >= 0");
  n.check(c.gradient_noise >= 0.0, "gradient_noise_sigma", "must be >= 0");
  if (n.has("ood")) {
    auto o = n.child("ood");
    OodChannel ch;
    ch.initial_val = o.number("initial_val");
    ch.initial_test = o.number("initial_test", ch.initial_val);
    if (o.has("row")) {
      ch.segments.push_back({0, o.vector("row").transpose()});
    } else {
      for (auto& seg : o.children("schedule")) {
        ch.segments.push_back({seg.integer("start"), seg.vector("row").transpose()});
        seg.done();
      }
    }
    o.done();
    c.ood = std::move(ch);
  }
  n.done();
  try {
    c.validate();
  } catch (const Error& e) {
    n.invalid("", e.what());
  }
  return c;
}

inline SweepSpec parse_sweep(ConfigNode& n) {
  const auto mode = n.string("mode", "dirichlet");
  n.check(mode == "grid" || mode == "dirichlet", "mode", "must be 'grid' or 'dirichlet'");
  if (mode == "grid") {
    n.done();
    return GridSweep{};
  }
  DirichletSweep d;
  d.alpha = n.number("alpha", d.alpha);
  d.count = static_cast<std::size_t>(n.integer("count", static_cast<std::int64_t>(d.count)));
  d.oversample = static_cast<std::size_t>(n.integer("oversample", static_cast<std::int64_t>(d.oversample)));
  d.seed = static_cast<std::uint64_t>(n.integer("seed", 0));
  n.check(d.alpha > 0.0, "alpha", "must be > 0");
  n.check(d.count >= 1, "count", "must be >= 1");
  n.check(d.oversample >= 1, "oversample", "must be >= 1");
  n.done();
  return d;
}

inline AnalysisConfig parse_analysis(ConfigNode& n) {
  AnalysisConfig a;
  a.method = n.string("method", a.method);
  a.round = n.integer("round", a.round);
  a.smoothing = static_cast<std::size_t>(n.integer("smoothing", static_cast<std::int64_t>(a.smoothing)));
  a.horizon = n.integer("horizon", a.horizon);
  a.noise_seed = static_cast<std::uint64_t>(n.integer("noise_seed", 0));
  a.greedy_rounds = static_cast<int>(n.integer("greedy_rounds", a.greedy_rounds));
  a.round_steps = n.integer("round_steps", a.round_steps);
  a.max_schedules = static_cast<std::size_t>(n.integer("max_schedules", static_cast<std::int64_t>(a.max_schedules)));
  n.check(a.round >= 1, "round", "must be >= 1");
  n.check(a.smoothing >= 1, "smoothing", "must be >= 1");
  n.check(a.horizon >= 1, "horizon", "must be >= 1");
  n.check(a.greedy_rounds >= 1, "greedy_rounds", "must be >= 1");
  n.check(a.round_steps >= 1, "round_steps", "must be >= 1");
  n.done();
  return a;
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& doc) {
  detail::ConfigNode root(doc, "");
  ExperimentConfig cfg;
  cfg.S = root.integer("S");
  root.check(cfg.S >= 1, "S", "must be >= 1");
  {
    auto sim = root.child("simulator");
    cfg.simulator = detail::parse_simulator(sim);
  }
  const std::size_t m = cfg.simulator.m;

  if (root.has("budget")) {
    auto b = root.child("budget");
    const auto mode = b.string("mode", "unrestricted");
    if (mode == "unrestricted") cfg.mode = BudgetMode::Unrestricted;
    else if (mode == "restricted") cfg.mode = BudgetMode::Restricted;
    else if (mode == "custom") cfg.mode = BudgetMode::Custom;
    else b.invalid("mode", "must be 'unrestricted', 'restricted' or 'custom'");
    if (cfg.mode == BudgetMode::Custom) {
      cfg.allowance = b.integer("allowance");
      b.check(cfg.allowance >= 0, "allowance", "must be >= 0");
    } else {
      b.check(!b.has("allowance"), "allowance", "only custom budgets take an allowance");
      cfg.allowance = default_allowance(cfg.mode, cfg.S);
    }
    b.done();
  } else {
    cfg.allowance = default_allowance(cfg.mode, cfg.S);
  }

  const auto& seeds = root.raw("seeds");
  root.check(seeds.is_array() && !seeds.empty(), "seeds", "expected a non-empty array of integers");
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    root.check(seeds[i].is_number_integer() && seeds[i].get<std::int64_t>() >= 0, "seeds[" + std::to_string(i) + "]",
               "expected a non-negative integer");
    cfg.seeds.push_back(seeds[i].get<std::uint64_t>());
  }

  if (root.has("sweep")) {
    auto s = root.child("sweep");
    cfg.sweep = detail::parse_sweep(s);
  }
  if (std::holds_alternative<GridSweep>(cfg.sweep) && m != 2) root.invalid("sweep.mode", "grid sweep needs m = 2");

  auto methods = root.children("methods");
  root.check(!methods.empty(), "methods", "need at least one method");
  std::set<std::string> labels;
  for (auto& mn : methods) {
    cfg.methods.push_back(detail::parse_method(mn, m, cfg.S));
    mn.check(labels.insert(cfg.methods.back().label).second, "label", "duplicate method label");
  }

  cfg.trajectory_stride = root.integer("trajectory_stride", cfg.trajectory_stride);
  root.check(cfg.trajectory_stride >= 1, "trajectory_stride", "must be >= 1");
  cfg.parallelism = static_cast<std::size_t>(root.integer("parallelism", 1));
  root.check(cfg.parallelism >= 1, "parallelism", "must be >= 1");
  if (root.has("analysis")) {
    auto a = root.child("analysis");
    cfg.analysis = detail::parse_analysis(a);
  }
  if (root.has("output")) {
    auto o = root.child("output");
    cfg.output.report = o.string("report", "");
    cfg.output.format = o.string("format", "json");
    o.check(cfg.output.format == "json" || cfg.output.format == "csv", "format", "must be 'json' or 'csv'");
    cfg.output.trajectories = o.string("trajectories", "");
    o.done();
  }
  root.done();
  return cfg;
}

inline json parse_json_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ParseError, e.what());
  }
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot write " + path);
  out << content;
  out.flush();
  require(static_cast<bool>(out), ErrorCode::IoError, "write failed for " + path);
}

inline ExperimentConfig load_config(const std::string& path) { return parse_config(parse_json_text(read_file(path))); }

// Reports.

struct CellResult {
  std::string method;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error_code;
  std::string error_message;
  double average_test_loss = 0.0;
  std::optional<double> delta_vs_stratified;
  std::int64_t extra_steps = 0;
  std::map<std::string, std::int64_t> extra_items;
  std::vector<double> final_test_losses;
  std::vector<std::vector<double>> proportions;  // one row when static, one per round otherwise

  friend bool operator==(const CellResult&, const CellResult&) = default;
};

struct MethodAggregate {
  std::string method;
  std::size_t completed = 0;
  std::size_t failed = 0;
  double mean = 0.0;
  double stddev = 0.0;
  std::optional<double> mean_delta;

  friend bool operator==(const MethodAggregate&, const MethodAggregate&) = default;
};

struct ExperimentReport {
  std::int64_t S = 0;
  std::string budget_mode;
  std::int64_t allowance = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<std::optional<double>> stratified;  // baseline per seed
  std::vector<CellResult> cells;                  // method-major, seeds in config order
  std::vector<MethodAggregate> aggregates;

  bool all_ok() const {
    return std::all_of(cells.begin(), cells.end(), [](const CellResult& c) { return c.ok; });
  }
  friend bool operator==(const ExperimentReport&, const ExperimentReport&) = default;
};

namespace detail {

inline std::optional<BaseMethod> base_of(MethodKind k) {
  switch (k) {
    case MethodKind::GridSearch: return BaseMethod::GridSearch;
    case MethodKind::Dml: return BaseMethod::Dml;
    case MethodKind::SkillIt: return BaseMethod::SkillIt;
    case MethodKind::DoReMi: return BaseMethod::DoReMi;
    case MethodKind::DoGE: return BaseMethod::DoGE;
    default: return std::nullopt;
  }
}

inline MethodResult run_base(BaseMethod base, const MethodSpec& spec, const ExperimentConfig& cfg,
                             const TrainerFactory& factory, const RunOptions& opts) {
  const std::size_t m = cfg.simulator.m;
  const BudgetLedger ledger(cfg.S, cfg.allowance);
  const auto alloc = allocation_for(base, m, cfg.S, cfg.mode);
  switch (base) {
    case BaseMethod::GridSearch:
      return run_grid_search(factory, cfg.S, candidate_sweep(m, cfg.sweep), ledger, alloc, opts);
    case BaseMethod::Dml: return run_dml(factory, cfg.S, candidate_sweep(m, cfg.sweep), ledger, alloc, spec.dml, opts);
    case BaseMethod::SkillIt: return run_skill_it(factory, cfg.S, ledger, alloc, spec.skill_it, opts);
    case BaseMethod::DoReMi: return run_doremi(factory, cfg.S, ledger, alloc, spec.doremi, opts);
    case BaseMethod::DoGE: return run_doge(factory, cfg.S, ledger, alloc, spec.doge, opts);
  }
  fail(ErrorCode::InvalidArgument, "unknown base method");
}

}  // namespace detail

/// Runs one (method, seed) cell.
inline MethodResult run_method(const MethodSpec& spec, const ExperimentConfig& cfg, std::uint64_t seed,
                               const RunOptions& base_opts = {}) {
  TrainerConfig sim = cfg.simulator;
  sim.seed = seed;
  const TrainerFactory factory(std::move(sim));
  RunOptions opts = base_opts;
  opts.trajectory_stride = cfg.trajectory_stride;
  AioliParams hp = spec.aioli;
  hp.seed = derive_seed(spec.aioli.seed, seed);

  MethodResult r;
  if (auto base = detail::base_of(spec.kind)) {
    r = detail::run_base(*base, spec, cfg, factory, opts);
  } else if (spec.kind == MethodKind::Stratified) {
    r = run_stratified(factory, cfg.S, opts);
  } else if (spec.kind == MethodKind::Aioli) {
    r = run_aioli(factory.final_run(), cfg.S, hp, opts);
  } else if (spec.kind == MethodKind::AioliOod) {
    r = run_aioli_ood(factory.final_run(), cfg.S, hp, opts);
  } else {
    // Warm-start from the base method's learned proportions for as many steps
    // as one of its runs.
    const auto base = detail::run_base(spec.base, spec, cfg, factory, RunOptions{cfg.trajectory_stride, {}});
    hp.init_proportions = base.static_proportions ? *base.static_proportions : base.schedule->average();
    hp.init_steps = allocation_for(spec.base, cfg.simulator.m, cfg.S, cfg.mode).steps_per_run;
    r = run_aioli(factory.final_run(), cfg.S, hp, opts);
    r.ledger = base.ledger;
  }
  r.method = spec.label;
  return r;
}

namespace detail {

inline CellResult summarize(const MethodResult& r, std::uint64_t seed) {
  CellResult c;
  c.method = r.method;
  c.seed = seed;
  c.ok = true;
  c.average_test_loss = r.average_test_loss;
  c.extra_steps = r.extra_steps();
  if (r.ledger)
    for (std::size_t p = 1; p < kRunPurposeCount; ++p)
      c.extra_items[std::string(to_string(static_cast<RunPurpose>(p)))] = r.ledger->consumed(static_cast<RunPurpose>(p));
  c.final_test_losses.assign(r.final_test_losses.data(), r.final_test_losses.data() + r.final_test_losses.size());
  if (r.schedule) {
    for (const auto& p : r.schedule->all()) c.proportions.emplace_back(p.begin(), p.end());
  } else if (r.static_proportions) {
    c.proportions.emplace_back(r.static_proportions->begin(), r.static_proportions->end());
  }
  return c;
}

inline CellResult failed_cell(std::string method, std::uint64_t seed, std::string code, std::string message) {
  CellResult c;
  c.method = std::move(method);
  c.seed = seed;
  c.error_code = std::move(code);
  c.error_message = std::move(message);
  return c;
}

// Runs tasks [0, n) on up to `workers` threads; results land at their own index.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace detail

/// Executes every (method, seed) cell plus a stratified baseline per seed.
/// `trajectories`, when given, receives one trajectory per cell in cell order.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg,
                                       std::vector<std::vector<TrajectoryPoint>>* trajectories = nullptr) {
  ExperimentReport rep;
  rep.S = cfg.S;
  rep.budget_mode = std::string(to_string(cfg.mode));
  rep.allowance = cfg.allowance;
  rep.seeds = cfg.seeds;
  const std::size_t n_seeds = cfg.seeds.size();
  const std::size_t n_cells = cfg.methods.size() * n_seeds;
  rep.stratified.assign(n_seeds, std::nullopt);
  rep.cells.resize(n_cells);
  std::vector<std::vector<TrajectoryPoint>> traj(n_cells);

  MethodSpec baseline;
  baseline.label = "stratified";
  detail::parallel_for(n_seeds + n_cells, cfg.parallelism, [&](std::size_t task) {
    if (task < n_seeds) {
      try {
        rep.stratified[task] = run_method(baseline, cfg, cfg.seeds[task]).average_test_loss;
      } catch (const std::exception&) {
        rep.stratified[task] = std::nullopt;
      }
      return;
    }
    const std::size_t cell = task - n_seeds;
    const auto& spec = cfg.methods[cell / n_seeds];
    const auto seed = cfg.seeds[cell % n_seeds];
    try {
      auto r = run_method(spec, cfg, seed);
      rep.cells[cell] = detail::summarize(r, seed);
      traj[cell] = std::move(r.trajectory);
    } catch (const Error& e) {
      rep.cells[cell] = detail::failed_cell(spec.label, seed, std::string(to_string(e.code())), e.what());
    } catch (const std::exception& e) {
      rep.cells[cell] = detail::failed_cell(spec.label, seed, "Internal", e.what());
    }
  });

  for (std::size_t cell = 0; cell < n_cells; ++cell) {
    auto& c = rep.cells[cell];
    const auto& base = rep.stratified[cell % n_seeds];
    if (c.ok && base) c.delta_vs_stratified = c.average_test_loss - *base;
  }
  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    MethodAggregate agg;
    agg.method = cfg.methods[mi].label;
    std::vector<double> losses, deltas;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const auto& c = rep.cells[mi * n_seeds + s];
      if (!c.ok) {
        ++agg.failed;
        continue;
      }
      ++agg.completed;
      losses.push_back(c.average_test_loss);
      if (c.delta_vs_stratified) deltas.push_back(*c.delta_vs_stratified);
    }
    if (!losses.empty()) {
      double sum = 0.0;
      for (double v : losses) sum += v;
      agg.mean = sum / static_cast<double>(losses.size());
      double ss = 0.0;
      for (double v : losses) ss += (v - agg.mean) * (v - agg.mean);
      agg.stddev = losses.size() > 1 ? std::sqrt(ss / static_cast<double>(losses.size() - 1)) : 0.0;
    }
    if (!deltas.empty()) {
      double sum = 0.0;
      for (double v : deltas) sum += v;
      agg.mean_delta = sum / static_cast<double>(deltas.size());
    }
    rep.aggregates.push_back(std::move(agg));
  }
  if (trajectories) *trajectories = std::move(traj);
  return rep;
}

// Parameter-accuracy study: score a method's A^t against A* at one round and
// pair it with the method's loss difference to stratified on the same seed.

struct SimilarityRow {
  std::string method;
  std::uint64_t seed = 0;
  SimilarityScore score;
  double b = 0.0;
  double delta_vs_stratified = 0.0;
};

/// The method named by `analysis.method`: a configured label, else a bare method name.
inline MethodSpec analysis_method_spec(const ExperimentConfig& cfg) {
  for (const auto& m : cfg.methods)
    if (m.label == cfg.analysis.method) return m;
  const json entry = {{"name", cfg.analysis.method}};
  detail::ConfigNode node(entry, "analysis.method");
  return detail::parse_method(node, cfg.simulator.m, cfg.S);
}

inline SimilarityRow similarity_cell(const ExperimentConfig& cfg, const MethodSpec& spec, std::uint64_t seed) {
  AccuracyProbe probe;
  probe.round = cfg.analysis.round;
  probe.smoothing = cfg.analysis.smoothing;
  probe.candidates = candidate_sweep(cfg.simulator.m, cfg.sweep).candidates;
  probe.horizon = cfg.analysis.horizon;
  probe.noise_seed = derive_seed(cfg.analysis.noise_seed, seed);
  probe.use_estimate = spec.kind == MethodKind::Aioli || spec.kind == MethodKind::AioliPlus;
  auto slot = std::make_shared<std::optional<AccuracyResult>>();
  RunOptions opts;
  opts.observer = accuracy_observer(probe, slot);
  const auto r = run_method(spec, cfg, seed, opts);
  require(slot->has_value(), ErrorCode::RoundNotTraced,
          "round " + std::to_string(probe.round) + " was never reached");
  MethodSpec baseline;
  baseline.label = "stratified";
  const double delta = r.average_test_loss - run_method(baseline, cfg, seed).average_test_loss;
  return {spec.label, seed, (*slot)->score, (*slot)->b, delta};
}

// Report encoding.

namespace detail {

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline std::optional<double> optional_double(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace detail

inline json report_to_json(const ExperimentReport& rep) {
  json cells = json::array();
  for (const auto& c : rep.cells) {
    json cj = {{"method", c.method}, {"seed", c.seed}, {"ok", c.ok}};
    if (c.ok) {
      cj["average_test_loss"] = c.average_test_loss;
      cj["delta_vs_stratified"] = detail::optional_json(c.delta_vs_stratified);
      cj["extra_steps"] = c.extra_steps;
      cj["extra_items"] = c.extra_items;
      cj["final_test_losses"] = c.final_test_losses;
      cj["proportions"] = c.proportions;
    } else {
      cj["error"] = {{"code", c.error_code}, {"message", c.error_message}};
    }
    cells.push_back(std::move(cj));
  }
  json aggs = json::array();
  for (const auto& a : rep.aggregates)
    aggs.push_back({{"method", a.method},
                    {"completed", a.completed},
                    {"failed", a.failed},
                    {"mean_test_loss", a.mean},
                    {"stddev_test_loss", a.stddev},
                    {"mean_delta_vs_stratified", detail::optional_json(a.mean_delta)}});
  json baseline = json::array();
  for (const auto& b : rep.stratified) baseline.push_back(detail::optional_json(b));
  return {{"S", rep.S},
          {"budget", {{"mode", rep.budget_mode}, {"allowance", rep.allowance}}},
          {"seeds", rep.seeds},
          {"stratified", baseline},
          {"cells", cells},
          {"aggregates", aggs}};
}

inline ExperimentReport report_from_json(const json& j) {
  try {
    ExperimentReport rep;
    rep.S = j.at("S").get<std::int64_t>();
    rep.budget_mode = j.at("budget").at("mode").get<std::string>();
    rep.allowance = j.at("budget").at("allowance").get<std::int64_t>();
    rep.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    for (const auto& b : j.at("stratified")) rep.stratified.push_back(detail::optional_double(b));
    for (const auto& cj : j.at("cells")) {
      CellResult c;
      c.method = cj.at("method").get<std::string>();
      c.seed = cj.at("seed").get<std::uint64_t>();
      c.ok = cj.at("ok").get<bool>();
      if (c.ok) {
        c.average_test_loss = cj.at("average_test_loss").get<double>();
        c.delta_vs_stratified = detail::optional_double(cj.at("delta_vs_stratified"));
        c.extra_steps = cj.at("extra_steps").get<std::int64_t>();
        c.extra_items = cj.at("extra_items").get<std::map<std::string, std::int64_t>>();
        c.final_test_losses = cj.at("final_test_losses").get<std::vector<double>>();
        c.proportions = cj.at("proportions").get<std::vector<std::vector<double>>>();
      } else {
        c.error_code = cj.at("error").at("code").get<std::string>();
        c.error_message = cj.at("error").at("message").get<std::string>();
      }
      rep.cells.push_back(std::move(c));
    }
    for (const auto& aj : j.at("aggregates")) {
      MethodAggregate a;
      a.method = aj.at("method").get<std::string>();
      a.completed = aj.at("completed").get<std::size_t>();
      a.failed = aj.at("failed").get<std::size_t>();
      a.mean = aj.at("mean_test_loss").get<double>();
      a.stddev = aj.at("stddev_test_loss").get<double>();
      a.mean_delta = detail::optional_double(aj.at("mean_delta_vs_stratified"));
      rep.aggregates.push_back(std::move(a));
    }
    return rep;
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, std::string("malformed report: ") + e.what());
  }
}

/// CSV columns: method,seed,avg_test_loss,delta_vs_stratified,extra_steps_used.
/// Failed cells leave the numeric fields empty.
inline std::string report_to_csv(const ExperimentReport& rep) {
  std::ostringstream os;
  os.precision(17);
  os << "method,seed,avg_test_loss,delta_vs_stratified,extra_steps_used\n";
  for (const auto& c : rep.cells) {
    os << c.method << ',' << c.seed << ',';
    if (c.ok) {
      os << c.average_test_loss << ',';
      if (c.delta_vs_stratified) os << *c.delta_vs_stratified;
      os << ',' << c.extra_steps;
    } else {
      os << ",,";
    }
    os << '\n';
  }
  return os.str();
}

inline std::string render_report(const ExperimentReport& rep, const std::string& format) {
  if (format == "json") return report_to_json(rep).dump(2) + "\n";
  if (format == "csv") return report_to_csv(rep);
  fail(ErrorCode::InvalidArgument, "unknown report format '" + format + "'");
}

inline void emit_report(const ExperimentReport& rep, const std::string& format, const std::string& path) {
  write_file(path, render_report(rep, format));
}

}  // namespace lmo
