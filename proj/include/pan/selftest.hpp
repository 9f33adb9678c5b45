#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pan {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Finite-difference checks for every differentiable operation (h = 1e-3,
// scaled rel err <= 1e-3, `trials` random draws per op) plus an end-to-end
// PAN-CTX pass on a 16×16 toy input (<= 1e-2).
std::vector<CheckResult> gradient_suite(int trials);

// Normalization and identity invariants: spatial softmax mass, bitwise
// attend identity, PAN/SAN forward equality, HAN output normalization,
// determinism and batch consistency.
std::vector<CheckResult> invariant_suite();

// Runs both suites, prints one line per check; returns 0 when all pass.
int run_selftest(std::ostream& out);

}  // namespace pan
