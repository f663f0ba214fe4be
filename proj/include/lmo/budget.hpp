#pragma once

// Extra-step accounting for methods that learn proportions before the final run.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lmo/error.hpp"
#include "lmo/trainer.hpp"

namespace lmo {

enum class BudgetMode { Unrestricted, Restricted, Custom };

constexpr std::string_view to_string(BudgetMode m) {
  switch (m) {
    case BudgetMode::Unrestricted: return "unrestricted";
    case BudgetMode::Restricted: return "restricted";
    case BudgetMode::Custom: return "custom";
  }
  return "?";
}

/// Unrestricted allows 10 S extra steps, restricted 0.5 S.
inline std::int64_t default_allowance(BudgetMode mode, std::int64_t S) {
  switch (mode) {
    case BudgetMode::Unrestricted: return 10 * S;
    case BudgetMode::Restricted: return S / 2;
    case BudgetMode::Custom: break;
  }
  fail(ErrorCode::InvalidArgument, "custom budgets need an explicit allowance");
}

class BudgetLedger {
 public:
  BudgetLedger(std::int64_t final_steps, std::int64_t allowance) : final_steps_(final_steps), allowance_(allowance) {
    require(final_steps >= 1, ErrorCode::InvalidArgument, "final run needs at least one step");
    require(allowance >= 0, ErrorCode::InvalidArgument, "allowance must be non-negative");
  }

  static BudgetLedger for_mode(BudgetMode mode, std::int64_t S) { return {S, default_allowance(mode, S)}; }

  std::int64_t final_steps() const noexcept { return final_steps_; }
  std::int64_t allowance() const noexcept { return allowance_; }
  std::int64_t consumed() const noexcept {
    std::int64_t s = 0;
    for (auto v : consumed_) s += v;
    return s;
  }
  std::int64_t consumed(RunPurpose p) const { return consumed_[static_cast<std::size_t>(p)]; }
  std::int64_t remaining() const noexcept { return allowance_ - consumed(); }
  bool can_afford(std::int64_t steps) const noexcept { return steps <= remaining(); }

  /// Reserves extra steps for a purpose; throws before anything is recorded if
  /// the allowance would be exceeded.
  void charge(RunPurpose purpose, std::int64_t steps) {
    require(purpose != RunPurpose::Final, ErrorCode::InvalidArgument, "final-run steps are not extra budget");
    require(steps >= 0, ErrorCode::InvalidArgument, "negative charge");
    require(can_afford(steps), ErrorCode::BudgetExceeded,
            "need " + std::to_string(steps) + " extra steps for " + std::string(to_string(purpose)) + ", only " +
                std::to_string(remaining()) + " of " + std::to_string(allowance_) + " left");
    consumed_[static_cast<std::size_t>(purpose)] += steps;
  }

 private:
  std::int64_t final_steps_;
  std::int64_t allowance_;
  std::array<std::int64_t, kRunPurposeCount> consumed_{};
};

enum class BaseMethod { GridSearch, Dml, SkillIt, DoReMi, DoGE };

constexpr std::string_view to_string(BaseMethod m) {
  switch (m) {
    case BaseMethod::GridSearch: return "grid_search";
    case BaseMethod::Dml: return "dml";
    case BaseMethod::SkillIt: return "skill_it";
    case BaseMethod::DoReMi: return "doremi";
    case BaseMethod::DoGE: return "doge";
  }
  return "?";
}

struct RunAllocation {
  std::int64_t runs = 0;
  std::int64_t steps_per_run = 0;
  std::int64_t total() const noexcept { return runs * steps_per_run; }
  friend bool operator==(const RunAllocation&, const RunAllocation&) = default;
};

struct AllocationRow {
  BudgetMode mode;
  std::size_t m;
  std::int64_t S;
  BaseMethod method;
  RunAllocation allocation;
};

/// Published per-(m, S) allocations that do not follow the rule below.
inline std::optional<RunAllocation> allocation_override(BudgetMode mode, std::size_t m, std::int64_t S,
                                                        BaseMethod method) {
  if (mode == BudgetMode::Restricted && m == 7 && S == 40000 && method == BaseMethod::SkillIt) return {{7, 2814}};
  return std::nullopt;
}

/// Extra runs each method may train.
///   unrestricted: GS/DML 10 x S, Skill-It m x S, DoReMi 2 x S, DoGE 1 x S
///   restricted:   GS/DML 10 x S/20, Skill-It m x S/(2m), DoReMi 2 x S/4, DoGE 1 x S/2
/// Custom budgets use the unrestricted run shapes.
inline RunAllocation allocation_for(BaseMethod method, std::size_t m, std::int64_t S, BudgetMode mode) {
  require(m >= 2 && S >= 1, ErrorCode::InvalidArgument, "allocation needs m >= 2 and S >= 1");
  if (auto o = allocation_override(mode, m, S, method)) return *o;
  const auto mm = static_cast<std::int64_t>(m);
  if (mode != BudgetMode::Restricted) {
    switch (method) {
      case BaseMethod::GridSearch:
      case BaseMethod::Dml: return {10, S};
      case BaseMethod::SkillIt: return {mm, S};
      case BaseMethod::DoReMi: return {2, S};
      case BaseMethod::DoGE: return {1, S};
    }
  }
  switch (method) {
    case BaseMethod::GridSearch:
    case BaseMethod::Dml: return {10, S / 20};
    case BaseMethod::SkillIt: return {mm, S / (2 * mm)};
    case BaseMethod::DoReMi: return {2, S / 4};
    case BaseMethod::DoGE: return {1, S / 2};
  }
  fail(ErrorCode::InvalidArgument, "unknown method");
}

/// The published allocation table, verbatim: both settings, m in {2, 3, 7}
/// (S = 5000 for m = 2, 3 and S = 40000 for m = 7).
inline std::vector<AllocationRow> published_allocations() {
  using B = BaseMethod;
  const auto U = BudgetMode::Unrestricted;
  const auto R = BudgetMode::Restricted;
  return {
      {U, 2, 5000, B::Dml, {10, 5000}},     {U, 2, 5000, B::SkillIt, {2, 5000}},
      {U, 2, 5000, B::DoReMi, {2, 5000}},   {U, 2, 5000, B::DoGE, {1, 5000}},
      {U, 3, 5000, B::Dml, {10, 5000}},     {U, 3, 5000, B::SkillIt, {3, 5000}},
      {U, 3, 5000, B::DoReMi, {2, 5000}},   {U, 3, 5000, B::DoGE, {1, 5000}},
      {U, 7, 40000, B::Dml, {10, 40000}},   {U, 7, 40000, B::SkillIt, {7, 40000}},
      {U, 7, 40000, B::DoReMi, {2, 40000}}, {U, 7, 40000, B::DoGE, {1, 40000}},
      {R, 2, 5000, B::Dml, {10, 250}},      {R, 2, 5000, B::SkillIt, {2, 1250}},
      {R, 2, 5000, B::DoReMi, {2, 1250}},   {R, 2, 5000, B::DoGE, {1, 2500}},
      {R, 3, 5000, B::Dml, {10, 250}},      {R, 3, 5000, B::SkillIt, {3, 833}},
      {R, 3, 5000, B::DoReMi, {2, 1250}},   {R, 3, 5000, B::DoGE, {1, 2500}},
      {R, 7, 40000, B::Dml, {10, 2000}},    {R, 7, 40000, B::SkillIt, {7, 2814}},
      {R, 7, 40000, B::DoReMi, {2, 10000}}, {R, 7, 40000, B::DoGE, {1, 20000}},
  };
}

}  // namespace lmo
