#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "mvstr/gradcheck.hpp"

namespace mvstr {

inline constexpr double kPrimitiveTol = 1e-4;
inline constexpr double kCompositeTol = 1e-3;

struct SuiteCheck {
  std::string name;
  bool composite = false;
  std::function<GradcheckReport()> run;
};

// Every differentiable primitive and the composite layers, down to the full
// cascade on a 2-view 16x16 scene. All checks run in verification precision
// with inputs drawn from `seed`.
std::vector<SuiteCheck> gradcheck_suite(std::uint64_t seed);

struct SuiteResult {
  std::vector<GradcheckReport> reports;
  bool passed = true;
};

// Runs the checks whose name contains `filter` (all when empty) and prints
// one "PASS|FAIL <name> max_rel_err <e> tol <t> entries <n>" line each.
SuiteResult run_gradcheck_suite(std::uint64_t seed, std::ostream* out = nullptr, const std::string& filter = {});

}  // namespace mvstr
