#include <doctest.h>

#include <cmath>

#include "pmcal/calib.hpp"
#include "pmcal/errors.hpp"
#include "pmcal/stats.hpp"
#include "pmcal/synth.hpp"
#include "test_support.hpp"

using namespace pmcal;
using testutil::obs;

namespace {

// Independent gradient of the penalized objective at (a, b); the fitter's
// first-order optimality is checked against this, not its own internals.
std::pair<double, double> objective_gradient(std::span<const Observation> data, const FitConfig& cfg, double a,
                                             double b) {
    double ga = 0.0, gb = 0.0, wsum = 0.0;
    for (const auto& o : data) {
        const double w = cfg.weight_scheme == WeightScheme::contract ? double(o.contract_count) : 1.0;
        const double x = logit(o.price_fraction);
        const double pi = sigmoid(a + b * x);
        ga += w * (o.outcome - pi);
        gb += w * (o.outcome - pi) * x;
        wsum += w;
    }
    gb -= (wsum / data.size()) / cfg.regularization_C * b;
    return {ga, gb};
}

// Hand-picked 40-row cell: mixed prices, outcomes consistent with mild
// underconfidence (slope above 1).
std::vector<Observation> fixture40() {
    const double ps[40] = {0.08, 0.12, 0.15, 0.18, 0.22, 0.25, 0.28, 0.31, 0.35, 0.38, 0.41, 0.44, 0.47, 0.50,
                           0.52, 0.55, 0.58, 0.61, 0.64, 0.67, 0.70, 0.72, 0.74, 0.76, 0.78, 0.80, 0.82, 0.84,
                           0.86, 0.88, 0.90, 0.92, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.25, 0.15};
    const int ys[40] = {0, 0, 0, 0, 0, 0, 1, 0, 0, 1, 0, 0, 1, 1, 0, 1, 1, 1, 0, 1,
                        1, 1, 1, 0, 1, 1, 1, 1, 1, 1, 1, 1, 0, 1, 0, 1, 1, 1, 0, 0};
    const long long counts[40] = {1, 3, 10, 2, 40, 1, 5, 2, 7, 1, 90, 3, 1, 12, 4, 1, 250, 6, 2, 1,
                                  8, 1, 30, 2, 1, 5, 1, 110, 2, 1, 9, 4, 2, 1, 17, 3, 1, 6, 2, 1};
    std::vector<Observation> v;
    for (int i = 0; i < 40; ++i) v.push_back(obs(ps[i], ys[i], counts[i], "m" + std::to_string(i % 11)));
    return v;
}

}  // namespace

TEST_SUITE("calib") {

TEST_CASE("perfectly calibrated two-point design recovers identity") {
    const auto data = testutil::two_point_design(0.2, 0.2, 0.8, 0.8, 5000);
    FitConfig cfg;
    cfg.weight_scheme = WeightScheme::trade;
    const auto fit = fit_logistic(data, cfg);
    CHECK(fit.converged);
    CHECK(std::fabs(fit.intercept) < 0.02);
    CHECK(std::fabs(fit.slope - 1.0) < 0.02);
    CHECK(fit.loglik <= 0.0);
    CHECK(fit.se_b > 0.0);
}

TEST_CASE("newton matches grid-search oracle on the 40-row fixture") {
    const auto data = fixture40();
    for (WeightScheme scheme : {WeightScheme::trade, WeightScheme::contract}) {
        FitConfig cfg;
        cfg.weight_scheme = scheme;
        const auto fit = fit_logistic(data, cfg);
        const auto [oa, ob] = synth::oracle_fit(data, cfg);
        CHECK(std::fabs(fit.intercept - oa) < 1e-3);
        CHECK(std::fabs(fit.slope - ob) < 1e-3);
    }
}

TEST_CASE("first-order optimality at the returned parameters") {
    const auto data = fixture40();
    for (WeightScheme scheme : {WeightScheme::trade, WeightScheme::contract}) {
        FitConfig cfg;
        cfg.weight_scheme = scheme;
        const auto fit = fit_logistic(data, cfg);
        const auto [ga, gb] = objective_gradient(data, cfg, fit.intercept, fit.slope);
        CHECK(std::sqrt(ga * ga + gb * gb) < 1e-6);
    }
}

TEST_CASE("penalized objective ascends monotonically") {
    Rng rng(31);
    const auto data = testutil::random_cell(rng, 400, 0.3, 1.7);
    FitConfig cfg;
    std::vector<double> trace;
    (void)fit_logistic(data, cfg, &trace);
    REQUIRE(trace.size() >= 2);
    for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] >= trace[i - 1]);
}

TEST_CASE("weight scaling leaves parameters unchanged and scales loglik") {
    auto data = fixture40();
    FitConfig cfg;
    cfg.weight_scheme = WeightScheme::contract;
    const auto base = fit_logistic(data, cfg);
    for (auto& o : data) o.contract_count *= 7;
    const auto scaled = fit_logistic(data, cfg);
    CHECK(scaled.intercept == doctest::Approx(base.intercept).epsilon(1e-10));
    CHECK(scaled.slope == doctest::Approx(base.slope).epsilon(1e-10));
    CHECK(scaled.loglik == doctest::Approx(7.0 * base.loglik).epsilon(1e-10));
}

TEST_CASE("equal contract counts reproduce trade weighting") {
    auto data = fixture40();
    for (auto& o : data) o.contract_count = 13;
    FitConfig trade_cfg;
    trade_cfg.weight_scheme = WeightScheme::trade;
    FitConfig contract_cfg;
    contract_cfg.weight_scheme = WeightScheme::contract;
    const auto ft = fit_logistic(data, trade_cfg);
    const auto fc = fit_logistic(data, contract_cfg);
    CHECK(fc.intercept == doctest::Approx(ft.intercept).epsilon(1e-10));
    CHECK(fc.slope == doctest::Approx(ft.slope).epsilon(1e-10));
}

TEST_CASE("degenerate cells raise typed errors") {
    std::vector<Observation> same_outcome = {obs(0.3, 1), obs(0.5, 1), obs(0.7, 1)};
    CHECK_THROWS_AS((void)fit_logistic(same_outcome, {}), SeparationError);
    std::vector<Observation> same_price = {obs(0.4, 1), obs(0.4, 0), obs(0.4, 1)};
    CHECK_THROWS_AS((void)fit_logistic(same_price, {}), IdentificationError);
    std::vector<Observation> tiny = {obs(0.4, 1)};
    CHECK_THROWS_AS((void)fit_logistic(tiny, {}), DataError);
}

TEST_CASE("recalibrate closed form") {
    // 0.70^1.83 / (0.70^1.83 + 0.30^1.83), evaluated independently at high
    // precision; displays as ~0.83 at two decimals
    CHECK(recalibrate(0.70, 1.83) == doctest::Approx(0.8249938888249965).epsilon(1e-12));
    CHECK(recalibrate(0.30, 2.0) == doctest::Approx(9.0 / 58.0).epsilon(1e-12));
    for (double p : {0.01, 0.2, 0.5, 0.77, 0.99}) CHECK(recalibrate(p, 1.0) == doctest::Approx(p).epsilon(1e-12));
    CHECK_THROWS_AS((void)recalibrate(0.0, 1.5), std::domain_error);
    CHECK_THROWS_AS((void)recalibrate(1.0, 1.5), std::domain_error);
    CHECK_THROWS_AS((void)recalibrate(0.5, 0.0), std::domain_error);
}

TEST_CASE("recalibrate properties: fixed point, monotonicity, inverse pair") {
    for (double theta : {0.5, 1.0, 1.83, 2.4}) {
        CHECK(recalibrate(0.5, theta) == doctest::Approx(0.5).epsilon(1e-14));
    }
    double prev = 0.0;
    for (int i = 1; i < 100; ++i) {
        const double v = recalibrate(i / 100.0, 1.83);
        CHECK(v > prev);
        prev = v;
    }
    for (int i = 1; i < 100; ++i) {
        const double p = i / 100.0;
        for (int j = 0; j < 20; ++j) {
            const double theta = 0.4 * std::pow(2.5 / 0.4, j / 19.0);
            CHECK(std::fabs(recalibrate(recalibrate(p, theta), 1.0 / theta) - p) < 1e-12);
        }
    }
    // theta > 1 makes prices more extreme, theta < 1 more moderate
    CHECK(recalibrate(0.7, 1.83) > 0.7);
    CHECK(recalibrate(0.3, 1.83) < 0.3);
    CHECK(recalibrate(0.7, 0.6) < 0.7);
}

TEST_CASE("pooled slope sits between mixture components") {
    Rng rng(47);
    auto group_a = testutil::random_cell(rng, 3000, 0.0, 0.5);
    auto group_b = testutil::random_cell(rng, 3000, 0.0, 2.0);
    FitConfig cfg;
    cfg.weight_scheme = WeightScheme::trade;
    std::vector<Observation> pool = group_a;
    pool.insert(pool.end(), group_b.begin(), group_b.end());
    const auto pooled = pooled_slope(pool, cfg);
    const auto fa = fit_logistic(group_a, cfg);
    const auto fb = fit_logistic(group_b, cfg);
    CHECK(pooled.slope > fa.slope);
    CHECK(pooled.slope < fb.slope);
    const auto [oa, ob] = synth::oracle_fit(pool, cfg);
    CHECK(std::fabs(pooled.slope - ob) < 1e-3);
    CHECK(std::fabs(pooled.intercept - oa) < 1e-3);
    // pooled on one full cell is the plain fit
    CellData cell;
    cell.observations = group_a;
    const auto direct = fit_recalibration(cell, cfg);
    CHECK(direct.slope == doctest::Approx(fa.slope));
}

TEST_CASE("leave-one-out equals direct complement refits") {
    Rng rng(53);
    std::map<std::string, std::vector<Observation>> groups;
    groups["a"] = testutil::random_cell(rng, 500, 0.1, 0.8);
    groups["b"] = testutil::random_cell(rng, 500, -0.1, 1.5);
    groups["c"] = testutil::random_cell(rng, 500, 0.0, 1.1);
    FitConfig cfg;
    const auto loo = leave_one_out(groups, cfg);
    REQUIRE(loo.size() == 3);
    for (const auto& [label, entry] : loo) {
        REQUIRE(entry.fit.has_value());
        std::vector<Observation> pool;
        for (const auto& [other, data] : groups) {
            if (other != label) pool.insert(pool.end(), data.begin(), data.end());
        }
        const auto direct = fit_logistic(pool, cfg);
        CHECK(entry.fit->slope == doctest::Approx(direct.slope).epsilon(1e-12));
        CHECK(entry.fit->intercept == doctest::Approx(direct.intercept).epsilon(1e-12));
    }
}

TEST_CASE("leave-one-out symmetry on identical groups") {
    Rng rng(59);
    const auto data = testutil::random_cell(rng, 600, 0.0, 1.2);
    std::map<std::string, std::vector<Observation>> groups{{"a", data}, {"b", data}};
    FitConfig cfg;
    const auto loo = leave_one_out(groups, cfg);
    const auto single = fit_logistic(data, cfg);
    CHECK(loo.at("a").fit->slope == doctest::Approx(single.slope));
    CHECK(loo.at("b").fit->slope == doctest::Approx(single.slope));
}

TEST_CASE("leave-one-out records per-label degeneracies") {
    Rng rng(61);
    std::map<std::string, std::vector<Observation>> groups;
    groups["good"] = testutil::random_cell(rng, 300, 0.0, 1.0);
    // all-yes group: removing "good" leaves a separated pool
    std::vector<Observation> allyes;
    for (int i = 0; i < 50; ++i) allyes.push_back(obs(0.3 + 0.01 * (i % 10), 1));
    groups["toxic"] = allyes;
    const auto loo = leave_one_out(groups, {});
    CHECK(loo.at("toxic").fit.has_value());
    CHECK_FALSE(loo.at("good").fit.has_value());
    CHECK_FALSE(loo.at("good").error.empty());
}

TEST_CASE("weighting gap zero when counts are all one") {
    Rng rng(67);
    std::map<CellKey, CellData> cells;
    for (int t = 0; t < 9; ++t) {
        CellKey key{"Dom", t, 0};
        CellData cell;
        cell.key = key;
        cell.observations = testutil::random_cell(rng, 300, 0.0, 1.0 + 0.05 * t, 1);
        for (auto& o : cell.observations) o.contract_count = 1;
        cells[key] = cell;
    }
    const auto gap = weighting_gap_from_cells(cells, "Dom", {});
    REQUIRE(gap.bins.size() == 9);
    for (double g : gap.gap) CHECK(std::fabs(g) < 1e-9);
    CHECK(std::fabs(gap.mean_gap) < 1e-9);
}

TEST_CASE("one dominant contract pulls the contract-weighted slope its way") {
    // 999 single-contract trades follow slope 1; one 1000-contract trade is
    // a strong yes at a modest price, dragging the contract fit upward.
    Rng rng(71);
    std::map<CellKey, CellData> cells;
    CellKey key{"Dom", 0, 0};
    CellData cell;
    cell.key = key;
    cell.observations = testutil::random_cell(rng, 999, 0.0, 1.0, 1);
    for (auto& o : cell.observations) o.contract_count = 1;
    // repeated large winning bets at long odds
    for (int i = 0; i < 12; ++i) cell.observations.push_back(obs(0.15, 1, 1000, "whale"));
    cells[key] = cell;
    const auto gap = weighting_gap_from_cells(cells, "Dom", {}, 1);
    REQUIRE(gap.bins.size() == 1);

    FitConfig tc;
    tc.weight_scheme = WeightScheme::trade;
    FitConfig cc;
    cc.weight_scheme = WeightScheme::contract;
    const double direct_gap =
        fit_logistic(cells[key].observations, cc).slope - fit_logistic(cells[key].observations, tc).slope;
    CHECK(gap.gap[0] == doctest::Approx(direct_gap).epsilon(1e-12));
    // missing-bin accounting
    CHECK(gap.skipped_bins.empty());
}

TEST_CASE("csv row format is stable") {
    CellFitRow row;
    row.key = {"Politics", 6, 3};
    row.fit.intercept = -0.125;
    row.fit.slope = 1.83;
    row.fit.se_a = 0.01;
    row.fit.se_b = 0.02;
    row.fit.n = 1234;
    row.fit.loglik = -700.5;
    row.fit.converged = true;
    CHECK(cells_csv_header() == "domain,horizon_bin,size_bin,n,a,b,se_a,se_b,loglik,converged");
    CHECK(cell_fit_row_csv(row) == "Politics,6,3,1234,-0.125,1.83,0.01,0.02,-700.5,1");
}

}  // TEST_SUITE
