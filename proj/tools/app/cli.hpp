#pragma once

#include <iosfwd>
#include <vector>

#include "softseg/predictor.hpp"

namespace softseg::app {

/// Runs the softseg command line. Returns 0 on success, 1 on usage errors and
/// 2 on runtime failures (reported on `err` as one JSON line).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

struct BenchRow {
  int size = 0;
  double seconds = 0.0;  // median decompose time
};

/// Median decompose time over `repeats` runs per square size, on a
/// deterministic synthetic image. Image creation and palette extraction are
/// outside the timed region.
std::vector<BenchRow> run_bench(const ModelWeights& weights, const std::vector<int>& sizes, int repeats);

}  // namespace softseg::app
