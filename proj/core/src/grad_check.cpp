#include "softseg/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "softseg/error.hpp"

namespace softseg::nn {

double relative_error(double analytic, double numeric, double abs_floor) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= abs_floor) return 0.0;
  return diff / std::max(std::abs(analytic), std::abs(numeric));
}

GradCheckReport grad_check(const std::function<double()>& loss, std::span<const GradTarget> targets,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  for (const GradTarget& target : targets) {
    if (!target.value || !target.analytic) fail(ErrorCode::kInvalidArgument, "grad_check: null target");
    require_same_shape(*target.value, *target.analytic, "grad_check");

    std::vector<std::size_t> entries(target.value->numel());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (options.max_entries_per_target > 0 && entries.size() > options.max_entries_per_target) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(options.max_entries_per_target);
      std::sort(entries.begin(), entries.end());
    }

    double diff_sq = 0.0, analytic_sq = 0.0, numeric_sq = 0.0;
    for (std::size_t idx : entries) {
      float& v = (*target.value)[idx];
      const float original = v;
      v = original + options.step;
      const float up = v;
      const double loss_up = loss();
      v = original - options.step;
      const float down = v;
      const double loss_down = loss();
      v = original;
      // Divide by the step actually taken after float rounding.
      const double numeric = (loss_up - loss_down) / (static_cast<double>(up) - static_cast<double>(down));
      const double analytic = (*target.analytic)[idx];
      diff_sq += (analytic - numeric) * (analytic - numeric);
      analytic_sq += analytic * analytic;
      numeric_sq += numeric * numeric;
      const double rel = relative_error(analytic, numeric, options.abs_floor);
      report.max_abs_error = std::max(report.max_abs_error, std::abs(analytic - numeric));
      if (rel > report.max_entry_rel_error || report.worst_entry.empty()) {
        report.max_entry_rel_error = rel;
        report.worst_entry = target.name + "[" + std::to_string(idx) + "] analytic=" +
                             std::to_string(analytic) + " numeric=" + std::to_string(numeric);
      }
      ++report.entries_checked;
    }
    const double norm_rel = std::sqrt(diff_sq) <= options.abs_floor
                                ? 0.0
                                : std::sqrt(diff_sq) / std::max(std::sqrt(analytic_sq), std::sqrt(numeric_sq));
    if (norm_rel > report.max_rel_error || report.worst_target.empty()) {
      report.max_rel_error = norm_rel;
      report.worst_target = target.name;
    }
  }
  return report;
}

}  // namespace softseg::nn
