#pragma once

#include "mine/common.hpp"

#include <json.hpp>

#include <optional>
#include <span>
#include <vector>

namespace mine::metrics {

struct MetricReport {
  double mse = 0.0;
  double rmse = 0.0;
  double mae = 0.0;
  double mbe = 0.0;  // mean of pred - truth
  std::optional<std::vector<double>> pinball_per_level;
  std::optional<double> coverage;
  std::optional<std::vector<double>> interval_sizes;

  nlohmann::json to_json() const;
};

MetricReport regression_metrics(const RowMatrix& pred, const RowMatrix& truth);

// Fraction of draws in the closed interval [lo, hi].
double coverage(std::span<const double> draws, double lo, double hi);

// Type-7 (linear interpolation) sample quantile; sorts a copy.
double quantile(std::span<const double> values, double p);
// Same on data already sorted ascending.
double quantile_sorted(std::span<const double> sorted, double p);

}  // namespace mine::metrics
