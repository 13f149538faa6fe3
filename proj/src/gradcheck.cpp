#include "cereid/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cereid {

GradCheckReport finite_diff_check(const std::function<double()>& loss, std::span<Param* const> params,
                                  double tolerance, double step) {
  GradCheckReport report;
  report.tolerance = tolerance;
  for (Param* p : params) {
    ParamGradError entry;
    entry.name = p->name;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + step;
      const double up = loss();
      p->value[i] = saved - step;
      const double down = loss();
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p->grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      double rel = std::abs(analytic - numeric) / denom;
      if (!std::isfinite(rel)) rel = std::numeric_limits<double>::infinity();
      if (rel > entry.max_rel_error) {
        entry.max_rel_error = rel;
        entry.worst_index = i;
        entry.analytic = analytic;
        entry.numeric = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.per_param.push_back(entry);
  }
  report.passed = std::isfinite(report.max_rel_error) && report.max_rel_error < tolerance;
  return report;
}

}  // namespace cereid
