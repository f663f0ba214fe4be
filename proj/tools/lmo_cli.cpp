// lmo: run mixing experiments, fit mixing laws, analyze parameters, emit sweeps.
//
// Exit codes: 0 success, 1 config/input error, 2 some experiment cell failed.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lmo/lmo.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kPartialFailure = 2;

struct Common {
  std::optional<std::uint64_t> seed_override;
  std::string out;
  std::string format;
  std::optional<std::size_t> parallelism;
};

void apply(const Common& c, lmo::ExperimentConfig& cfg) {
  if (c.seed_override) cfg.seeds = {*c.seed_override};
  if (c.parallelism) cfg.parallelism = std::max<std::size_t>(1, *c.parallelism);
  if (!c.format.empty()) cfg.output.format = c.format;
  if (!c.out.empty()) cfg.output.report = c.out;
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    lmo::write_file(path, text);
  }
}

std::string sanitize(std::string s) {
  for (auto& ch : s)
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '_' && ch != '-') ch = '_';
  return s;
}

int cmd_run(const std::string& path, const Common& common) {
  auto cfg = lmo::load_config(path);
  apply(common, cfg);
  std::vector<std::vector<lmo::TrajectoryPoint>> traj;
  const auto rep = lmo::run_experiment(cfg, &traj);
  emit(lmo::render_report(rep, cfg.output.format), cfg.output.report);
  if (!cfg.output.trajectories.empty()) {
    std::filesystem::create_directories(cfg.output.trajectories);
    for (std::size_t i = 0; i < rep.cells.size(); ++i) {
      if (!rep.cells[i].ok) continue;
      std::ostringstream os;
      lmo::write_trajectory_csv(os, traj[i]);
      lmo::write_file(cfg.output.trajectories + "/" + sanitize(rep.cells[i].method) + "_seed" +
                          std::to_string(rep.cells[i].seed) + ".csv",
                      os.str());
    }
  }
  for (const auto& c : rep.cells)
    if (!c.ok) std::cerr << "cell " << c.method << " seed " << c.seed << " failed: " << c.error_message << "\n";
  return rep.all_ok() ? kOk : kPartialFailure;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    out.push_back(cell);
  }
  return out;
}

int cmd_fit(const std::string& path, const std::string& out, const std::string& residuals, int restarts,
            std::uint64_t seed) {
  std::istringstream in(lmo::read_file(path));
  std::string line;
  lmo::require(static_cast<bool>(std::getline(in, line)), lmo::ErrorCode::ParseError, "empty loss log");
  const auto header = split_csv(line);
  std::vector<std::size_t> before, p, after, loss;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto& h = header[c];
    if (h.rfind("before_", 0) == 0) before.push_back(c);
    else if (h.rfind("after_", 0) == 0) after.push_back(c);
    else if (h.rfind("loss_", 0) == 0) loss.push_back(c);
    else if (h.rfind("p_", 0) == 0) p.push_back(c);
    else lmo::fail(lmo::ErrorCode::ParseError, "unknown column '" + h + "'");
  }
  const bool dynamic = !before.empty() || !after.empty();
  lmo::require(p.size() >= 2, lmo::ErrorCode::ParseError, "need at least two p_ columns");
  lmo::require(dynamic ? (before.size() == p.size() && after.size() == p.size() && loss.empty())
                       : (loss.size() == p.size()),
               lmo::ErrorCode::ParseError, "columns must be p_*/loss_* or before_*/p_*/after_* with equal counts");

  auto pick = [](const std::vector<double>& row, const std::vector<std::size_t>& cols) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) v[static_cast<Eigen::Index>(i)] = row[cols[i]];
    return v;
  };
  std::vector<lmo::StaticSample> samples;
  std::vector<lmo::LossTriple> triples;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    lmo::require(cells.size() == header.size(), lmo::ErrorCode::ParseError,
                 "line " + std::to_string(lineno) + ": wrong number of fields");
    std::vector<double> row;
    for (const auto& c : cells) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(c, &used));
        lmo::require(used == c.size(), lmo::ErrorCode::ParseError, "trailing characters");
      } catch (const std::logic_error&) {
        lmo::fail(lmo::ErrorCode::ParseError, "line " + std::to_string(lineno) + ": bad number '" + c + "'");
      }
    }
    Eigen::VectorXd w = pick(row, p);
    const auto mix = lmo::MixtureProportions::validate(w);
    if (dynamic) triples.push_back({pick(row, before), mix, pick(row, after)});
    else samples.push_back({mix, pick(row, loss)});
  }

  lmo::json result;
  lmo::FitReport report;
  if (dynamic) {
    auto fit = lmo::fit_dynamic(triples);
    result = lmo::to_json(fit);
    report = fit.report;
  } else {
    lmo::StaticFitConfig cfg;
    cfg.restarts = restarts;
    cfg.seed = seed;
    auto fit = lmo::fit_static(samples, cfg);
    result = lmo::to_json(fit);
    report = fit.report;
  }
  emit(result.dump(2) + "\n", out);
  if (!residuals.empty()) {
    std::ostringstream os;
    lmo::write_residuals_csv(os, report);
    lmo::write_file(residuals, os.str());
  }
  return kOk;
}

int cmd_similarity(const std::string& path, const Common& common) {
  auto cfg = lmo::load_config(path);
  apply(common, cfg);
  const auto spec = lmo::analysis_method_spec(cfg);
  std::vector<lmo::ComparisonRow> rows;
  lmo::json out = lmo::json::array();
  int status = kOk;
  for (auto seed : cfg.seeds) {
    try {
      const auto row = lmo::similarity_cell(cfg, spec, seed);
      rows.push_back({row.method, "seed=" + std::to_string(seed), row.score.value, row.delta_vs_stratified});
      out.push_back({{"method", row.method},
                     {"seed", seed},
                     {"similarity", row.score.value},
                     {"cosine", row.score.cosine},
                     {"spearman", row.score.spearman},
                     {"b", row.b},
                     {"delta_vs_stratified", row.delta_vs_stratified}});
    } catch (const lmo::Error& e) {
      std::cerr << "seed " << seed << ": " << e.what() << "\n";
      status = kPartialFailure;
    }
  }
  if (cfg.output.format == "csv") {
    std::ostringstream os;
    lmo::write_comparison_csv(os, rows);
    emit(os.str(), cfg.output.report);
  } else {
    emit(out.dump(2) + "\n", cfg.output.report);
  }
  return status;
}

int cmd_greedy(const std::string& path, const Common& common) {
  auto cfg = lmo::load_config(path);
  apply(common, cfg);
  const auto candidates = lmo::candidate_sweep(cfg.simulator.m, cfg.sweep).candidates;
  lmo::json out = lmo::json::array();
  std::ostringstream csv;
  csv << "seed,greedy,greedy_loss,exhaustive,exhaustive_loss,match\n";
  csv.precision(17);
  auto join = [](const std::vector<std::size_t>& s) {
    std::string r;
    for (std::size_t i = 0; i < s.size(); ++i) r += (i ? "|" : "") + std::to_string(s[i]);
    return r;
  };
  for (auto seed : cfg.seeds) {
    lmo::TrainerConfig sim = cfg.simulator;
    sim.seed = seed;
    const lmo::TrainerFactory factory(sim);
    lmo::GreedyOptions opts{cfg.analysis.max_schedules, cfg.parallelism};
    const auto g =
        lmo::greedy_vs_exhaustive(factory, candidates, cfg.analysis.greedy_rounds, cfg.analysis.round_steps, opts);
    auto props = [&](const std::vector<std::size_t>& s) {
      lmo::json rows = lmo::json::array();
      for (auto i : s) rows.push_back(lmo::to_json(candidates[i]));
      return rows;
    };
    out.push_back({{"seed", seed},
                   {"greedy", props(g.greedy)},
                   {"greedy_loss", g.greedy_loss},
                   {"exhaustive", props(g.exhaustive)},
                   {"exhaustive_loss", g.exhaustive_loss},
                   {"match", g.match},
                   {"schedules_evaluated", g.schedules_evaluated}});
    csv << seed << ',' << join(g.greedy) << ',' << g.greedy_loss << ',' << join(g.exhaustive) << ','
        << g.exhaustive_loss << ',' << (g.match ? "true" : "false") << '\n';
  }
  emit(cfg.output.format == "csv" ? csv.str() : out.dump(2) + "\n", cfg.output.report);
  return kOk;
}

int cmd_sweep(const std::string& path, const Common& common) {
  auto cfg = lmo::load_config(path);
  apply(common, cfg);
  std::ostringstream os;
  lmo::write_candidates(os, lmo::candidate_sweep(cfg.simulator.m, cfg.sweep));
  emit(os.str(), cfg.output.report);
  return kOk;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed-override", c.seed_override, "Run a single seed instead of the configured list");
  app->add_option("--out", c.out, "Output path (default: config output.report, else stdout)");
  app->add_option("--format", c.format, "Report format")->check(CLI::IsMember({"json", "csv"}));
  app->add_option("--parallelism", c.parallelism, "Worker threads")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linear mixing optimization toolkit"};
  app.require_subcommand(1);
  Common common;
  std::string config_path, log_path, residuals;
  int restarts = 32;
  std::uint64_t fit_seed = 0;

  auto* run = app.add_subcommand("run", "Run every (method, seed) cell of an experiment config");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  add_common(run, common);

  auto* fit = app.add_subcommand("fit", "Fit a static or dynamic mixing law to a loss log (CSV)");
  fit->add_option("loss-log", log_path, "CSV with p_*/loss_* or before_*/p_*/after_* columns")->required();
  fit->add_option("--out", common.out, "Output path for the fit (JSON)");
  fit->add_option("--residuals", residuals, "Write residuals as CSV");
  fit->add_option("--restarts", restarts, "Random restarts for static fits")->check(CLI::PositiveNumber);
  fit->add_option("--seed", fit_seed, "Seed for static-fit initializations");

  auto* analyze = app.add_subcommand("analyze", "Parameter analyses");
  analyze->require_subcommand(1);
  auto* sim = analyze->add_subcommand("similarity", "Similarity of a method's A^t to A* and its delta vs stratified");
  sim->add_option("config", config_path, "Experiment config (JSON)")->required();
  add_common(sim, common);
  auto* greedy = analyze->add_subcommand("greedy", "Greedy vs exhaustive schedule search");
  greedy->add_option("config", config_path, "Experiment config (JSON)")->required();
  add_common(greedy, common);

  auto* sweep = app.add_subcommand("sweep", "Emit the candidate mixtures of a config's sweep");
  sweep->add_option("config", config_path, "Experiment config (JSON)")->required();
  add_common(sweep, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) return cmd_run(config_path, common);
    if (*fit) return cmd_fit(log_path, common.out, residuals, restarts, fit_seed);
    if (*sim) return cmd_similarity(config_path, common);
    if (*greedy) return cmd_greedy(config_path, common);
    if (*sweep) return cmd_sweep(config_path, common);
  } catch (const lmo::Error& e) {
    std::cerr << "error [" << lmo::to_string(e.code()) << "]: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  }
  return kOk;
}
