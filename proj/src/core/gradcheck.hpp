#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace md {

// One finite-difference comparison row.
struct GradCheckEntry {
  std::string op;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  int probes = 0;
  bool passed = false;
  // Negative-control rows run a deliberately corrupted backward; the suite
  // is only trusted when these rows FAIL their tolerance.
  bool expected_fail = false;
};

// Central finite differences (h = 1e-6, 64-bit) against the recorded
// backward pass, for every differentiable op plus an end-to-end loss row at
// `size` x `size`, with >= 100 probes per row. Deterministic given seed.
std::vector<GradCheckEntry> run_gradcheck(uint64_t seed, int size = 16);

// Every regular row passed and every negative-control row failed.
bool gradcheck_ok(const std::vector<GradCheckEntry>& entries);

// Fixed-width text report, one line per entry.
std::string gradcheck_table(const std::vector<GradCheckEntry>& entries);

}  // namespace md
