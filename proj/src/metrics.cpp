#include "mine/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace mine::metrics {

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j = {{"mse", mse}, {"rmse", rmse}, {"mae", mae}, {"mbe", mbe}};
  if (pinball_per_level) j["pinball_per_level"] = *pinball_per_level;
  if (coverage) j["coverage"] = *coverage;
  if (interval_sizes) j["interval_sizes"] = *interval_sizes;
  return j;
}

MetricReport regression_metrics(const RowMatrix& pred, const RowMatrix& truth) {
  require(pred.rows() == truth.rows() && pred.cols() == truth.cols(), ErrorKind::Shape,
          "regression_metrics: shape mismatch");
  require(pred.size() > 0, ErrorKind::InvalidInput, "regression_metrics: empty input");
  const auto diff = (pred - truth).array();
  MetricReport r;
  r.mse = diff.square().mean();
  r.rmse = std::sqrt(r.mse);
  r.mae = diff.abs().mean();
  r.mbe = diff.mean();
  return r;
}

double coverage(std::span<const double> draws, double lo, double hi) {
  require(!draws.empty(), ErrorKind::InvalidInput, "coverage: no draws");
  require(lo <= hi, ErrorKind::InvalidInput, "coverage: lo must not exceed hi");
  const auto inside = std::count_if(draws.begin(), draws.end(),
                                    [&](double x) { return x >= lo && x <= hi; });
  return static_cast<double>(inside) / static_cast<double>(draws.size());
}

double quantile_sorted(std::span<const double> sorted, double p) {
  require(!sorted.empty(), ErrorKind::InvalidInput, "quantile: empty sample");
  require(p >= 0.0 && p <= 1.0, ErrorKind::InvalidInput, "quantile: level outside [0, 1]");
  const double h = static_cast<double>(sorted.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double quantile(std::span<const double> values, double p) {
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, p);
}

}  // namespace mine::metrics
