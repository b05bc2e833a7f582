#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "softseg/tensor.hpp"

namespace softseg::nn {

/// A tensor whose entries are perturbed, paired with the analytic gradient
/// the caller computed for it.
struct GradTarget {
  std::string name;
  Tensor* value = nullptr;
  const Tensor* analytic = nullptr;
};

struct GradCheckOptions {
  float step = 1e-3f;
  /// Differences at or below this are treated as agreement.
  double abs_floor = 1e-6;
  /// 0 checks every entry; otherwise a seeded sample of this many per target.
  std::size_t max_entries_per_target = 0;
  std::uint64_t seed = 0;
};

/// Errors are measured per target tensor as ||a - n|| / max(||a||, ||n||)
/// over the checked entries (zero when ||a - n|| is within the absolute
/// floor). Per-entry ratios are reported too but are dominated by float32
/// rounding on entries whose gradient is nearly zero.
struct GradCheckReport {
  double max_rel_error = 0.0;        // worst target, norm-wise
  double max_entry_rel_error = 0.0;  // worst single entry
  double max_abs_error = 0.0;
  std::string worst_target;
  std::string worst_entry;
  std::size_t entries_checked = 0;

  bool within(double tolerance) const { return max_rel_error < tolerance; }
};

/// Compares analytic gradients against central differences of `loss`.
/// `loss` must re-run the fragment from the current tensor values.
GradCheckReport grad_check(const std::function<double()>& loss, std::span<const GradTarget> targets,
                           const GradCheckOptions& options = {});

/// Relative error with an absolute floor; used by grad_check and tests.
double relative_error(double analytic, double numeric, double abs_floor);

}  // namespace softseg::nn
