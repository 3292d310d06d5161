#include "solargeco/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace solargeco {

namespace {

void require_same_nonempty(std::span<const double> a, std::span<const double> b,
                           const char* what) {
    if (a.size() != b.size())
        throw ContractError(std::string(what) + ": length mismatch (" +
                            std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    if (a.empty()) throw ContractError(std::string(what) + ": empty input");
}

/// Mid-ranks (1-based; tied values share the average of their positions).
std::vector<double> mid_ranks(std::span<const double> x) {
    const size_t n = x.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

double pearson(std::span<const double> a, std::span<const double> b) {
    const size_t n = a.size();
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(n);
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(n);
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va <= 0.0 || vb <= 0.0)
        throw ContractError("correlation undefined: an input is constant");
    return cov / std::sqrt(va * vb);
}

void append_csv_value(std::ostream& os, double v) {
    if (std::isnan(v)) {
        os << "nan";
        return;
    }
    std::ostringstream tmp;
    tmp.precision(17);
    tmp << v;
    os << tmp.str();
}

} // namespace

double mae(std::span<const double> y, std::span<const double> mu) {
    require_same_nonempty(y, mu, "mae");
    double s = 0.0;
    for (size_t i = 0; i < y.size(); ++i) s += std::fabs(y[i] - mu[i]);
    return s / static_cast<double>(y.size());
}

double r2(std::span<const double> y, std::span<const double> mu) {
    require_same_nonempty(y, mu, "r2");
    if (y.size() < 2) throw ContractError("r2: needs at least 2 points");
    const double ybar =
        std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (size_t i = 0; i < y.size(); ++i) {
        const double r = y[i] - mu[i];
        const double d = y[i] - ybar;
        ss_res += r * r;
        ss_tot += d * d;
    }
    if (ss_tot <= 0.0) throw ContractError("r2: targets are constant");
    return 1.0 - ss_res / ss_tot;
}

double spearman_rho(std::span<const double> y, std::span<const double> mu) {
    require_same_nonempty(y, mu, "spearman_rho");
    if (y.size() < 2) throw ContractError("spearman_rho: needs at least 2 points");
    const std::vector<double> ry = mid_ranks(y);
    const std::vector<double> rm = mid_ranks(mu);
    return pearson(ry, rm);
}

double picp(std::span<const double> y, std::span<const double> mu,
            std::span<const double> sigma, double z) {
    require_same_nonempty(y, mu, "picp");
    require_same_nonempty(y, sigma, "picp");
    size_t hits = 0;
    for (size_t i = 0; i < y.size(); ++i) {
        if (sigma[i] < 0.0) throw ContractError("picp: negative sigma");
        if (std::fabs(y[i] - mu[i]) <= z * sigma[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(y.size());
}

MetricsReport compute_metrics(std::span<const double> y, std::span<const double> mu,
                              std::span<const double> sigma) {
    MetricsReport r;
    r.mae = mae(y, mu);
    r.r2 = r2(y, mu);
    r.spearman_rho = spearman_rho(y, mu);
    r.picp_95 = picp(y, mu, sigma);
    r.n = y.size();
    return r;
}

std::string metrics_to_json(const MetricsReport& report) {
    nlohmann::json j;
    j["n"] = report.n;
    j["mae"] = report.mae;
    j["r2"] = report.r2;
    j["spearman_rho"] = report.spearman_rho;
    j["picp_95"] = report.picp_95;
    return j.dump(2) + "\n";
}

std::vector<CalibrationBin> calibration_table(std::span<const double> y,
                                              std::span<const double> mu,
                                              std::span<const double> sigma,
                                              size_t num_bins) {
    require_same_nonempty(y, mu, "calibration_table");
    require_same_nonempty(y, sigma, "calibration_table");
    const size_t n = y.size();
    if (num_bins < 2) throw ContractError("calibration_table: need at least 2 bins");
    if (num_bins > n)
        throw ContractError("calibration_table: more bins (" + std::to_string(num_bins) +
                            ") than points (" + std::to_string(n) + ")");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return sigma[a] < sigma[b]; });

    const size_t base = n / num_bins;
    const size_t extra = n % num_bins;
    std::vector<CalibrationBin> bins;
    bins.reserve(num_bins);
    size_t pos = 0;
    for (size_t b = 0; b < num_bins; ++b) {
        const size_t count = base + (b < extra ? 1 : 0);
        CalibrationBin cb;
        cb.bin = b;
        cb.n = count;
        double ssum = 0.0, esum = 0.0;
        for (size_t k = 0; k < count; ++k) {
            const size_t i = order[pos + k];
            ssum += sigma[i];
            esum += std::fabs(y[i] - mu[i]);
        }
        cb.mean_sigma = ssum / static_cast<double>(count);
        cb.mean_abs_err = esum / static_cast<double>(count);
        if (count > 1) {
            double sq = 0.0;
            for (size_t k = 0; k < count; ++k) {
                const size_t i = order[pos + k];
                const double d = std::fabs(y[i] - mu[i]) - cb.mean_abs_err;
                sq += d * d;
            }
            const double sd = std::sqrt(sq / static_cast<double>(count - 1));
            cb.se = sd / std::sqrt(static_cast<double>(count));
            cb.ci_low = cb.mean_abs_err - 1.96 * cb.se;
            cb.ci_high = cb.mean_abs_err + 1.96 * cb.se;
        } else {
            cb.se = std::numeric_limits<double>::quiet_NaN();
            cb.ci_low = std::numeric_limits<double>::quiet_NaN();
            cb.ci_high = std::numeric_limits<double>::quiet_NaN();
        }
        cb.theory = kHalfNormalMean * cb.mean_sigma;
        bins.push_back(cb);
        pos += count;
    }
    return bins;
}

void write_calibration_csv(const std::string& path,
                           std::span<const CalibrationBin> bins, double picp_95) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "bin,n,mean_sigma,mean_abs_err,se,ci_low,ci_high,theory\n";
    for (const CalibrationBin& b : bins) {
        out << b.bin << ',' << b.n << ',';
        append_csv_value(out, b.mean_sigma);
        out << ',';
        append_csv_value(out, b.mean_abs_err);
        out << ',';
        append_csv_value(out, b.se);
        out << ',';
        append_csv_value(out, b.ci_low);
        out << ',';
        append_csv_value(out, b.ci_high);
        out << ',';
        append_csv_value(out, b.theory);
        out << '\n';
    }
    out << "picp_95,";
    append_csv_value(out, picp_95);
    out << '\n';
    if (!out) throw DataError("write failed: " + path);
}

} // namespace solargeco
