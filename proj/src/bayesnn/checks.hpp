#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bnn {

enum class Suite { kGradients, kDuality, kManifold, kSamplers, kAll };

Suite parse_suite(const std::string& name);

struct CheckResult {
  std::string suite;
  std::string name;
  double measured = 0.0;
  double threshold = 0.0;
  std::string relation;  // "<", "<=", ">" or "in" (threshold..upper)
  double upper = 0.0;
  bool passed = false;
};

// Runs the invariant suites. With `fault` the score-gradient fault hook is
// enabled for the duration of the run.
std::vector<CheckResult> run_checks(Suite suite, std::uint64_t seed = 7, bool fault = false);

bool all_passed(const std::vector<CheckResult>& results);

// One line per invariant: status, suite, name, measured value vs threshold.
std::string format_report(const std::vector<CheckResult>& results);

}  // namespace bnn
