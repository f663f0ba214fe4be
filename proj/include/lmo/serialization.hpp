#pragma once

// JSON encodings for laws, fits and method results (matrices row-major), plus
// residual CSV export.

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "lmo/error.hpp"
#include "lmo/methods.hpp"
#include "lmo/mixing_laws.hpp"
#include "lmo/simplex.hpp"

namespace lmo {

using json = nlohmann::json;

inline json to_json_vector(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline json to_json_matrix(const Eigen::MatrixXd& A) {
  json out = json::array();
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < A.cols(); ++c) row.push_back(A(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

inline Eigen::VectorXd vector_from_json(const json& j) {
  require(j.is_array(), ErrorCode::ParseError, "expected an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    require(j[i].is_number(), ErrorCode::ParseError, "expected a number");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline Eigen::MatrixXd matrix_from_json(const json& j) {
  require(j.is_array() && !j.empty(), ErrorCode::ParseError, "expected a non-empty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].is_array() ? j[0].size() : 0);
  Eigen::MatrixXd A(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    require(row.is_array() && static_cast<Eigen::Index>(row.size()) == cols, ErrorCode::ParseError,
            "matrix rows must have equal length");
    for (Eigen::Index c = 0; c < cols; ++c) {
      require(row[static_cast<std::size_t>(c)].is_number(), ErrorCode::ParseError, "expected a number");
      A(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
  }
  return A;
}

inline json to_json(const MixtureProportions& p) { return json(std::vector<double>(p.begin(), p.end())); }

inline json to_json(const StaticLawParams& law) {
  return {{"A", to_json_matrix(law.A())}, {"b", to_json_vector(law.b())}, {"c", to_json_vector(law.c())}};
}

inline StaticLawParams static_law_from_json(const json& j) {
  require(j.is_object() && j.contains("A") && j.contains("b") && j.contains("c"), ErrorCode::ParseError,
          "static law needs A, b and c");
  return {matrix_from_json(j.at("A")), vector_from_json(j.at("b")), vector_from_json(j.at("c"))};
}

inline json to_json(const InteractionMatrix& A) {
  return {{"A", to_json_matrix(A.entries)}, {"horizon_steps", A.horizon_steps}};
}

inline InteractionMatrix interaction_from_json(const json& j) {
  require(j.is_object() && j.contains("A"), ErrorCode::ParseError, "interaction matrix needs A");
  return {matrix_from_json(j.at("A")), j.value("horizon_steps", std::int64_t{0})};
}

inline json to_json(const FitReport& r) {
  return {{"mse", r.mse},
          {"r_squared", r.r_squared},
          {"per_group_r_squared", to_json_vector(r.per_group_r_squared)},
          {"restarts_used", r.restarts_used}};
}

inline json to_json(const StaticFit& fit) {
  return {{"law", "static"}, {"params", to_json(fit.params)}, {"report", to_json(fit.report)}};
}

inline json to_json(const DynamicFit& fit) {
  return {{"law", "dynamic"}, {"params", to_json(fit.A)}, {"report", to_json(fit.report)}};
}

/// CSV columns: sample,group,residual (predicted - observed).
inline void write_residuals_csv(std::ostream& os, const FitReport& r) {
  os << "sample,group,residual\n";
  const auto old = os.precision(17);
  for (Eigen::Index s = 0; s < r.residuals.cols(); ++s)
    for (Eigen::Index i = 0; i < r.residuals.rows(); ++i) os << s << ',' << i << ',' << r.residuals(i, s) << '\n';
  os.precision(old);
}

inline json to_json(const TraceEntry& e) {
  json out = {{"round", e.round},
              {"step", e.step},
              {"A", to_json_matrix(e.A)},
              {"b", to_json_vector(e.b)},
              {"p", to_json(e.p)},
              {"updated", to_json(e.updated)}};
  if (e.estimate) out["estimate"] = to_json_matrix(*e.estimate);
  return out;
}

inline json ledger_json(const BudgetLedger& ledger) {
  json items = json::object();
  for (std::size_t p = 1; p < kRunPurposeCount; ++p) {
    const auto purpose = static_cast<RunPurpose>(p);
    items[std::string(to_string(purpose))] = ledger.consumed(purpose);
  }
  return {{"allowance", ledger.allowance()}, {"consumed", ledger.consumed()}, {"items", items}};
}

/// Summary of a method run; the trace is included only on request since
/// per-step methods trace every step.
inline json to_json(const MethodResult& r, bool with_trace = false) {
  json out = {{"method", r.method},
              {"average_test_loss", r.average_test_loss},
              {"final_test_losses", to_json_vector(r.final_test_losses)},
              {"final_steps", r.final_steps},
              {"extra_steps", r.extra_steps()},
              {"eta", r.eta},
              {"trace_length", r.trace.size()}};
  if (r.static_proportions) out["static_proportions"] = to_json(*r.static_proportions);
  if (r.schedule) {
    json rows = json::array();
    for (const auto& p : r.schedule->all()) rows.push_back(to_json(p));
    out["schedule"] = rows;
  }
  if (r.ledger) out["ledger"] = ledger_json(*r.ledger);
  if (with_trace) {
    json trace = json::array();
    for (const auto& e : r.trace) trace.push_back(to_json(e));
    out["trace"] = trace;
  }
  return out;
}

}  // namespace lmo
