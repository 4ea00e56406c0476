#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualavg/errors.hpp"
#include "dualavg/table.hpp"

namespace dualavg {

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double t_first = 0.0;  // fit window, inclusive
  double t_last = 0.0;
  std::size_t points = 0;
  std::string column;
};

/// Least-squares line through (log t, log v). A constant v gives slope 0, r^2 = 1.
inline RateFit fit_loglog(const std::vector<double>& t, const std::vector<double>& v) {
  if (t.size() != v.size()) throw DimensionError("fit_loglog: t and value lengths differ");
  if (t.size() < 2) throw std::invalid_argument("fit_loglog: need at least two points");
  const auto n = static_cast<double>(t.size());
  double mx = 0, my = 0;
  std::vector<double> lx, ly;
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (!(t[k] > 0.0) || !(v[k] > 0.0))
      throw NumericalError("fit_loglog: needs positive t and values (row " + std::to_string(k) + ")");
    lx.push_back(std::log(t[k]));
    ly.push_back(std::log(v[k]));
    mx += lx.back();
    my += ly.back();
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t k = 0; k < lx.size(); ++k) {
    sxx += (lx[k] - mx) * (lx[k] - mx);
    sxy += (lx[k] - mx) * (ly[k] - my);
    syy += (ly[k] - my) * (ly[k] - my);
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("fit_loglog: all t values coincide");
  RateFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  // syy tiny relative to the level: the line is exact
  f.r2 = syy <= 1e-28 * std::max(1.0, my * my) ? 1.0 : (sxy * sxy) / (sxx * syy);
  f.t_first = t.front();
  f.t_last = t.back();
  f.points = t.size();
  return f;
}

/// Picks min_residual, then min_grad_map_sq.
inline std::string default_rate_column(const Table& table) {
  for (const char* c : {"min_residual", "min_grad_map_sq"})
    if (table.has_column(c)) return c;
  throw std::invalid_argument("trace has neither a min_residual nor a min_grad_map_sq column");
}

/// Fits log(min metric) against log(t) over the second half of the rows with t >= 1.
inline RateFit ratefit(const Table& table, std::string column = {}) {
  if (column.empty()) column = default_rate_column(table);
  if (!table.has_column("t")) throw std::invalid_argument("trace has no t column");
  const auto t = table.column("t");
  const auto v = table.column(column);
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[k - 1])
      throw std::invalid_argument("column '" + column + "' increases at row " + std::to_string(k) +
                                  "; a min-so-far column must be non-increasing");
  std::vector<double> tt, vv;
  for (std::size_t k = 0; k < t.size(); ++k)
    if (t[k] >= 1.0) {
      tt.push_back(t[k]);
      vv.push_back(v[k]);
    }
  const std::size_t start = tt.size() / 2;
  RateFit f = fit_loglog({tt.begin() + static_cast<long>(start), tt.end()},
                         {vv.begin() + static_cast<long>(start), vv.end()});
  f.column = column;
  return f;
}

}  // namespace dualavg
