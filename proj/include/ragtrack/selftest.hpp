// In-process oracle battery behind the `selftest` CLI subcommand: brute-force
// reimplementations checked against the library on random inputs, plus the
// pinned hand-computed values.

#pragma once

#include <string>
#include <vector>

namespace ragtrack {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;  // failure diagnostics, empty on success
};

// `thorough` raises the random-case counts to the full published budgets.
std::vector<CheckResult> run_selftest(bool thorough);

}  // namespace ragtrack
