#pragma once

#include <span>
#include <string>
#include <vector>

#include "solargeco/errors.hpp"

namespace solargeco {

/// z for nominal 95% two-sided normal intervals.
inline constexpr double kZ95 = 1.959964;

/// E|Z| for standard normal Z: sqrt(2/pi). Slope of the theoretical
/// |error|-vs-sigma calibration line.
inline constexpr double kHalfNormalMean = 0.79788456080286536;

double mae(std::span<const double> y, std::span<const double> mu);

/// 1 - sum((y - mu)^2) / sum((y - ybar)^2). Needs length >= 2 and var(y) > 0.
double r2(std::span<const double> y, std::span<const double> mu);

/// Pearson correlation of mid-ranks (ties get their average rank).
double spearman_rho(std::span<const double> y, std::span<const double> mu);

/// Fraction of |y_i - mu_i| <= z * sigma_i.
double picp(std::span<const double> y, std::span<const double> mu,
            std::span<const double> sigma, double z = kZ95);

struct MetricsReport {
    double mae = 0.0;
    double r2 = 0.0;
    double spearman_rho = 0.0;
    double picp_95 = 0.0;
    size_t n = 0;
};

MetricsReport compute_metrics(std::span<const double> y, std::span<const double> mu,
                              std::span<const double> sigma);

std::string metrics_to_json(const MetricsReport& report);

struct CalibrationBin {
    size_t bin = 0;            // 0-based, ascending mean_sigma
    size_t n = 0;
    double mean_sigma = 0.0;   // sigma-bar
    double mean_abs_err = 0.0; // |e|-bar with e = y - mu
    double se = 0.0;           // s / sqrt(n), sample std (n-1 denominator); NaN when n == 1
    double ci_low = 0.0;       // mean_abs_err -/+ 1.96 * se
    double ci_high = 0.0;
    double theory = 0.0;       // sqrt(2/pi) * mean_sigma
};

/// Sorts by sigma and cuts num_bins quantile bins (the first n mod num_bins
/// bins take one extra element). Throws ContractError when num_bins < 2 or
/// num_bins > n.
std::vector<CalibrationBin> calibration_table(std::span<const double> y,
                                              std::span<const double> mu,
                                              std::span<const double> sigma,
                                              size_t num_bins);

/// CSV with header bin,n,mean_sigma,mean_abs_err,se,ci_low,ci_high,theory and
/// a trailing "picp_95,<value>" line.
void write_calibration_csv(const std::string& path,
                           std::span<const CalibrationBin> bins, double picp_95);

} // namespace solargeco
