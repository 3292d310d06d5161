#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <vector>

#include "solargeco/errors.hpp"
#include "solargeco/metrics.hpp"
#include "solargeco/rng.hpp"

using namespace solargeco;
namespace fs = std::filesystem;

namespace {

// Plain-loop reference implementations, kept deliberately naive.
double ref_mae(const std::vector<double>& y, const std::vector<double>& mu) {
    double s = 0.0;
    for (size_t i = 0; i < y.size(); ++i) s += std::fabs(y[i] - mu[i]);
    return s / static_cast<double>(y.size());
}

double ref_r2(const std::vector<double>& y, const std::vector<double>& mu) {
    double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (size_t i = 0; i < y.size(); ++i) {
        ss_res += (y[i] - mu[i]) * (y[i] - mu[i]);
        ss_tot += (y[i] - mean) * (y[i] - mean);
    }
    return 1.0 - ss_res / ss_tot;
}

std::vector<double> ref_midranks(const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0; // 1-based average
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

double ref_pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

double ref_picp(const std::vector<double>& y, const std::vector<double>& mu,
                const std::vector<double>& sigma, double z) {
    size_t in = 0;
    for (size_t i = 0; i < y.size(); ++i) {
        if (std::fabs(y[i] - mu[i]) <= z * sigma[i]) ++in;
    }
    return static_cast<double>(in) / static_cast<double>(y.size());
}

} // namespace

TEST_CASE("metrics agree with naive loop references on random data") {
    Rng rng(2024);
    const size_t n = 200;
    std::vector<double> y(n), mu(n), sigma(n);
    for (size_t i = 0; i < n; ++i) {
        y[i] = 13.0 + 4.0 * rng.normal();
        mu[i] = y[i] + 1.5 * rng.normal();
        sigma[i] = 0.3 + 2.2 * rng.uniform();
    }
    CHECK(mae(y, mu) == doctest::Approx(ref_mae(y, mu)).epsilon(1e-13));
    CHECK(r2(y, mu) == doctest::Approx(ref_r2(y, mu)).epsilon(1e-13));
    CHECK(spearman_rho(y, mu) ==
          doctest::Approx(ref_pearson(ref_midranks(y), ref_midranks(mu))).epsilon(1e-13));
    CHECK(picp(y, mu, sigma) == ref_picp(y, mu, sigma, kZ95));

    // hand-checkable anchors
    const std::vector<double> ya = {1.0, 2.0, 3.0};
    const std::vector<double> pa = {2.0, 2.0, 2.0};
    CHECK(mae(ya, pa) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(r2(ya, pa) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(r2(ya, ya) == 1.0);
}

TEST_CASE("spearman: exact hand values, ties, monotone invariance") {
    const std::vector<double> x = {1.0, 2.0, 3.0};
    const std::vector<double> yperm = {3.0, 1.0, 2.0};
    // d^2 = (1-3)^2 + (2-1)^2 + (3-2)^2 = 6 -> rho = 1 - 6*6/(3*8) = -0.5
    CHECK(spearman_rho(x, yperm) == doctest::Approx(-0.5).epsilon(1e-13));
    CHECK(spearman_rho(x, x) == doctest::Approx(1.0).epsilon(1e-13));
    const std::vector<double> rev = {3.0, 2.0, 1.0};
    CHECK(spearman_rho(x, rev) == doctest::Approx(-1.0).epsilon(1e-13));

    // ties share mid-ranks on both sides
    const std::vector<double> ty = {1.0, 2.0, 2.0, 4.0};
    const std::vector<double> tm = {10.0, 25.0, 25.0, 70.0};
    CHECK(spearman_rho(ty, tm) == doctest::Approx(1.0).epsilon(1e-13));

    // strictly monotone transforms leave rho unchanged
    Rng rng(7);
    std::vector<double> a(64), b(64);
    for (size_t i = 0; i < 64; ++i) {
        a[i] = rng.normal();
        b[i] = a[i] + 0.8 * rng.normal();
    }
    const double base = spearman_rho(a, b);
    std::vector<double> bexp(64), bcube(64);
    for (size_t i = 0; i < 64; ++i) {
        bexp[i] = std::exp(b[i]);
        bcube[i] = b[i] * b[i] * b[i];
    }
    CHECK(spearman_rho(a, bexp) == doctest::Approx(base).epsilon(1e-13));
    CHECK(spearman_rho(a, bcube) == doctest::Approx(base).epsilon(1e-13));
}

TEST_CASE("picp: exact counting and monotonicity in z") {
    const std::vector<double> y = {0.0, 0.0, 0.0, 0.0};
    const std::vector<double> mu = {0.0, 1.0, 2.0, 3.0};
    const std::vector<double> sigma = {1.0, 1.0, 1.0, 1.0};
    // |err| = 0,1,2,3 vs z*1 = 1.959964 -> two inside
    CHECK(picp(y, mu, sigma) == 0.5);
    CHECK(picp(y, mu, sigma, 0.5) == 0.25);
    CHECK(picp(y, mu, sigma, 3.5) == 1.0);
    // boundary counts as covered
    const std::vector<double> y1 = {0.0}, mu1 = {1.0}, s1 = {1.0};
    CHECK(picp(y1, mu1, s1, 1.0) == 1.0);

    Rng rng(9);
    std::vector<double> yy(300), mm(300), ss(300);
    for (size_t i = 0; i < 300; ++i) {
        yy[i] = rng.normal();
        mm[i] = yy[i] + rng.normal();
        ss[i] = 0.2 + rng.uniform();
    }
    double prev = 0.0;
    for (double z : {0.1, 0.5, 1.0, 1.959964, 3.0}) {
        const double p = picp(yy, mm, ss, z);
        CHECK(p >= prev);
        prev = p;
    }

    CHECK_THROWS_AS((void)picp(yy, mm, std::vector<double>{1.0}), ContractError);
    const std::vector<double> neg = {1.0, -0.5, 1.0, 1.0};
    CHECK_THROWS_AS((void)picp(y, mu, neg), ContractError);
}

TEST_CASE("metric input contracts") {
    const std::vector<double> e;
    const std::vector<double> one = {1.0};
    const std::vector<double> flat = {2.0, 2.0, 2.0};
    const std::vector<double> three = {1.0, 2.0, 3.0};
    CHECK_THROWS_AS((void)mae(e, e), ContractError);
    CHECK_THROWS_AS((void)mae(three, one), ContractError);
    CHECK_THROWS_AS((void)r2(one, one), ContractError);       // needs n >= 2
    CHECK_THROWS_AS((void)r2(flat, three), ContractError);    // var(y) == 0
    CHECK_THROWS_AS((void)spearman_rho(one, one), ContractError);
    CHECK_THROWS_AS((void)spearman_rho(flat, three), ContractError); // constant side
}

TEST_CASE("compute_metrics bundles the four numbers") {
    Rng rng(31);
    std::vector<double> y(50), mu(50), sigma(50);
    for (size_t i = 0; i < 50; ++i) {
        y[i] = rng.normal();
        mu[i] = y[i] + 0.5 * rng.normal();
        sigma[i] = 0.4 + rng.uniform();
    }
    const MetricsReport m = compute_metrics(y, mu, sigma);
    CHECK(m.n == 50);
    CHECK(m.mae == mae(y, mu));
    CHECK(m.r2 == r2(y, mu));
    CHECK(m.spearman_rho == spearman_rho(y, mu));
    CHECK(m.picp_95 == picp(y, mu, sigma));

    const std::string js = metrics_to_json(m);
    CHECK(js.find("\"mae\"") != std::string::npos);
    CHECK(js.find("\"r2\"") != std::string::npos);
    CHECK(js.find("\"spearman_rho\"") != std::string::npos);
    CHECK(js.find("\"picp_95\"") != std::string::npos);
    CHECK(js.find("\"n\"") != std::string::npos);
    CHECK(js.back() == '\n');
}

TEST_CASE("calibration table: partition, ordering, and per-bin statistics") {
    Rng rng(55);
    const size_t n = 103; // deliberately not divisible by the bin count
    std::vector<double> y(n), mu(n), sigma(n);
    for (size_t i = 0; i < n; ++i) {
        sigma[i] = 0.25 + 2.0 * rng.uniform();
        y[i] = rng.normal();
        mu[i] = y[i] + sigma[i] * rng.normal();
    }
    const size_t bins = 10;
    const std::vector<CalibrationBin> table = calibration_table(y, mu, sigma, bins);
    REQUIRE(table.size() == bins);

    // 103 = 10*10 + 3: first three bins take 11
    size_t total = 0;
    for (size_t b = 0; b < bins; ++b) {
        CHECK(table[b].bin == b);
        CHECK(table[b].n == (b < 3 ? 11u : 10u));
        total += table[b].n;
    }
    CHECK(total == n);

    // mean sigma ascends across bins
    for (size_t b = 1; b < bins; ++b) CHECK(table[b - 1].mean_sigma <= table[b].mean_sigma);

    // recompute bin 0 by hand from the sigma-sorted order
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b2) { return sigma[a] < sigma[b2]; });
    double ms = 0.0, me = 0.0;
    std::vector<double> errs;
    for (size_t k = 0; k < 11; ++k) {
        const size_t i = order[k];
        ms += sigma[i];
        const double e = std::fabs(y[i] - mu[i]);
        me += e;
        errs.push_back(e);
    }
    ms /= 11.0;
    me /= 11.0;
    CHECK(table[0].mean_sigma == doctest::Approx(ms).epsilon(1e-13));
    CHECK(table[0].mean_abs_err == doctest::Approx(me).epsilon(1e-13));
    double var = 0.0;
    for (double e : errs) var += (e - me) * (e - me);
    const double se = std::sqrt(var / 10.0) / std::sqrt(11.0);
    CHECK(table[0].se == doctest::Approx(se).epsilon(1e-12));
    CHECK(table[0].ci_low == doctest::Approx(me - 1.96 * se).epsilon(1e-12));
    CHECK(table[0].ci_high == doctest::Approx(me + 1.96 * se).epsilon(1e-12));
    CHECK(table[0].theory == doctest::Approx(kHalfNormalMean * ms).epsilon(1e-13));

    CHECK_THROWS_AS((void)calibration_table(y, mu, sigma, 1), ContractError);
    CHECK_THROWS_AS((void)calibration_table(y, mu, sigma, n + 1), ContractError);
}

TEST_CASE("single-element bins report NaN standard error") {
    const std::vector<double> y = {0.0, 0.0, 0.0};
    const std::vector<double> mu = {0.5, 1.0, 2.0};
    const std::vector<double> sigma = {0.5, 1.0, 2.0};
    const std::vector<CalibrationBin> table = calibration_table(y, mu, sigma, 3);
    REQUIRE(table.size() == 3);
    for (const CalibrationBin& b : table) {
        CHECK(b.n == 1);
        CHECK(std::isnan(b.se));
        CHECK(std::isnan(b.ci_low));
        CHECK(std::isnan(b.ci_high));
    }
}

TEST_CASE("half-normal constant matches a Monte Carlo estimate") {
    Rng rng(777);
    const size_t n = 1'000'000;
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += std::fabs(rng.normal());
    const double mc = acc / static_cast<double>(n);
    CHECK(std::fabs(mc - kHalfNormalMean) < 0.003);
    CHECK(kHalfNormalMean == doctest::Approx(std::sqrt(2.0 / 3.14159265358979323846))
                                 .epsilon(1e-15));
}

TEST_CASE("theory line lands inside the CI for a well-calibrated simulator") {
    // y - mu ~ N(0, sigma^2) exactly, so E|err| = sqrt(2/pi) * sigma: with
    // 500 samples per bin nearly every CI must contain the theory value.
    Rng rng(4242);
    const size_t n = 5000;
    std::vector<double> y(n), mu(n), sigma(n);
    for (size_t i = 0; i < n; ++i) {
        sigma[i] = 0.5 + 2.5 * rng.uniform();
        mu[i] = 10.0 + 3.0 * rng.normal();
        y[i] = mu[i] + sigma[i] * rng.normal();
    }
    const std::vector<CalibrationBin> table = calibration_table(y, mu, sigma, 10);
    size_t inside = 0;
    for (const CalibrationBin& b : table) {
        if (b.theory >= b.ci_low && b.theory <= b.ci_high) ++inside;
    }
    CHECK(inside >= 9);

    // and the 95% interval coverage is near nominal
    const double p = picp(y, mu, sigma);
    CHECK(p > 0.93);
    CHECK(p < 0.97);
}

TEST_CASE("calibration CSV layout") {
    Rng rng(66);
    const size_t n = 40;
    std::vector<double> y(n), mu(n), sigma(n);
    for (size_t i = 0; i < n; ++i) {
        sigma[i] = 0.3 + rng.uniform();
        y[i] = rng.normal();
        mu[i] = y[i] + sigma[i] * rng.normal();
    }
    const auto table = calibration_table(y, mu, sigma, 4);
    const fs::path path = fs::temp_directory_path() / "solargeco_test_calibration.csv";
    write_calibration_csv(path.string(), table, 0.9375);

    std::ifstream in(path);
    REQUIRE(in.good());
    std::string line;
    std::getline(in, line);
    CHECK(line == "bin,n,mean_sigma,mean_abs_err,se,ci_low,ci_high,theory");
    size_t rows = 0;
    std::string last;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        last = line;
        ++rows;
    }
    CHECK(rows == 4 + 1); // four bins plus the coverage footer
    CHECK(last.rfind("picp_95,", 0) == 0);
    std::istringstream footer(last.substr(8));
    double v = 0.0;
    footer >> v;
    CHECK(v == doctest::Approx(0.9375).epsilon(1e-12));
    fs::remove(path);
}
