#include <doctest.h>

#include <cmath>
#include <map>

#include "pmcal/calib.hpp"
#include "pmcal/errors.hpp"
#include "pmcal/ingest.hpp"
#include "pmcal/stats.hpp"
#include "pmcal/synth.hpp"
#include "test_support.hpp"

using namespace pmcal;

namespace {

std::map<CellKey, CellData> cells_from(const synth::SynthOutput& out, int min_per_cell = 1) {
    FilterConfig filt;
    filt.min_trades_per_market = 1;
    filt.min_trades_per_cell = min_per_cell;
    return assemble_grid(out.trades, out.markets, out.rules, {}, filt).cells;
}

}  // namespace

TEST_SUITE("synth") {

TEST_CASE("same seed, byte-identical artifacts") {
    const auto spec = synth::uniform_spec({"A"}, 1.2, 0.0, 3, 5, 77);
    const auto out1 = synth::generate(spec);
    const auto out2 = synth::generate(spec);
    REQUIRE(out1.trades.size() == out2.trades.size());
    for (std::size_t i = 0; i < out1.trades.size(); ++i) {
        CHECK(out1.trades[i].market_id == out2.trades[i].market_id);
        CHECK(out1.trades[i].price_cents == out2.trades[i].price_cents);
        CHECK(out1.trades[i].count == out2.trades[i].count);
    }
    testutil::TempDir tmp("synth_det");
    synth::write_trades_csv(tmp.path("t1.csv"), out1.trades);
    synth::write_trades_csv(tmp.path("t2.csv"), out2.trades);
    CHECK(testutil::read_file(tmp.path("t1.csv")) == testutil::read_file(tmp.path("t2.csv")));
    synth::write_markets_csv(tmp.path("m1.csv"), out1.markets);
    synth::write_markets_csv(tmp.path("m2.csv"), out2.markets);
    CHECK(testutil::read_file(tmp.path("m1.csv")) == testutil::read_file(tmp.path("m2.csv")));
}

TEST_CASE("outcomes are constant within a market") {
    const auto out = synth::generate(synth::uniform_spec({"A"}, 1.0, 0.0, 5, 8, 3));
    std::map<std::string, Outcome> by_market;
    for (const auto& m : out.markets) by_market[m.market_id] = m.outcome;
    // every trade's market exists and shares one outcome record
    for (const auto& t : out.trades) CHECK(by_market.count(t.market_id) == 1);
}

TEST_CASE("trades land in their intended cells") {
    const auto spec = synth::uniform_spec({"A", "B"}, 1.0, 0.0, 2, 6, 9);
    const auto out = synth::generate(spec);
    const auto cells = cells_from(out);
    // all 2*9*4 cells populated with exactly markets*trades observations
    CHECK(cells.size() == 2u * 9 * 4);
    for (const auto& [key, cell] : cells) CHECK(cell.observations.size() == 12);
}

TEST_CASE("single-cell slope recovery") {
    // outcomes are market-level, so precision scales with the market count;
    // 4000 markets put the estimator sd near 0.06
    synth::SynthSpec spec;
    spec.domains = {"A"};
    spec.bins.horizon_edges_ms = {};
    spec.bins.size_upper = {};
    spec.bins.representative_log_size = {0.0};
    spec.components.D = 1;
    spec.components.T = 1;
    spec.components.S = 1;
    spec.components.mu = {1.5};
    spec.components.alpha = {0.0};
    spec.components.beta = {0.0};
    spec.components.gamma = {0.0};
    spec.components.residual = {0.0};
    spec.markets_per_cell = 4000;
    spec.trades_per_market = 2;
    spec.price_jitter_sd = 0.02;
    spec.seed = 101;
    const auto out = synth::generate(spec);
    FilterConfig filt;
    filt.min_trades_per_market = 1;
    filt.min_trades_per_cell = 1;
    const auto cells = assemble_grid(out.trades, out.markets, out.rules, spec.bins, filt).cells;
    FitConfig cfg;
    cfg.weight_scheme = WeightScheme::trade;
    const CellKey key{"A", 0, 0};
    REQUIRE(cells.count(key) == 1);
    const auto fit = fit_logistic(cells.at(key).observations, cfg);
    CHECK(fit.slope > 1.3);
    CHECK(fit.slope < 1.7);
    CHECK(std::fabs(fit.intercept) < 0.15);
}

TEST_CASE("empirical calibration by price decile") {
    synth::SynthSpec spec = synth::uniform_spec({"A"}, 1.3, 0.0, 4000, 1, 13);
    spec.bins.horizon_edges_ms = {kMsPerHour};   // 2x1 grid keeps it fast
    spec.bins.size_upper = {1};
    spec.components.T = 2;
    spec.components.S = 2;
    spec.components.mu.assign(2, 1.3);
    spec.components.beta.assign(2, 0.0);
    spec.components.gamma.assign(2, 0.0);
    spec.components.alpha.assign(1, 0.0);
    spec.components.residual.assign(4, 0.0);
    const auto out = synth::generate(spec);

    std::map<int, std::pair<int, int>> deciles;  // decile -> (yes, n)
    std::map<std::string, Outcome> outcome;
    for (const auto& m : out.markets) outcome[m.market_id] = m.outcome;
    for (const auto& t : out.trades) {
        const int dec = std::min(9, t.price_cents / 10);
        auto& [yes, n] = deciles[dec];
        ++n;
        if (outcome[t.market_id] == Outcome::yes) ++yes;
    }
    for (const auto& [dec, counts] : deciles) {
        const auto [yes, n] = counts;
        if (n < 400) continue;  // skip thin deciles at the edges
        const double p_mid = (dec * 10 + 5) / 100.0;
        const double expected = sigmoid(1.3 * logit(p_mid));
        const double se = std::sqrt(expected * (1.0 - expected) / n) + 0.02;  // + decile-width slack
        CHECK(std::fabs(static_cast<double>(yes) / n - expected) < 4.0 * se);
    }
}

TEST_CASE("scale effect injection is recovered") {
    auto comp = synth::random_component_set(1, 9, 4, 0, 0.0);
    comp.mu.assign(9, 1.2);
    comp.alpha.assign(1, 0.0);
    comp.beta.assign(9, 0.0);
    comp.gamma = {-0.25, -0.05, 0.05, 0.25};
    synth::SynthSpec spec;
    spec.domains = {"A"};
    spec.components = comp;
    spec.markets_per_cell = 1200;
    spec.trades_per_market = 2;
    spec.latent_logit_sd = 1.6;
    spec.price_jitter_sd = 0.02;
    spec.seed = 21;
    const auto out = synth::generate(spec);
    const auto cells = cells_from(out);

    FitConfig cfg;
    cfg.weight_scheme = WeightScheme::trade;
    double delta = 0.0;
    for (int t = 0; t < 9; ++t) {
        const double hi = fit_logistic(cells.at({"A", t, 3}).observations, cfg).slope;
        const double lo = fit_logistic(cells.at({"A", t, 0}).observations, cfg).slope;
        delta += hi - lo;
    }
    delta /= 9.0;
    CHECK(delta > 0.3);
    CHECK(delta < 0.7);
}

TEST_CASE("nonpositive target slope is a configuration error") {
    auto spec = synth::uniform_spec({"A"}, 1.0, 0.0, 2, 2, 1);
    spec.components.mu[3] = -0.2;
    CHECK_THROWS_AS((void)synth::generate(spec), ConfigError);
}

TEST_CASE("clamp accounting warns on extreme latent laws") {
    auto spec = synth::uniform_spec({"A"}, 0.2, 0.0, 10, 10, 5);  // slope 0.2 pushes prices wide
    spec.latent_logit_sd = 3.0;
    const auto out = synth::generate(spec);
    CHECK(out.clamped_prices > 0);
    CHECK(out.clamp_warning);
}

TEST_CASE("random component sets satisfy the identification constraints") {
    for (std::uint64_t seed : {5ull, 6ull}) {
        const auto c = synth::random_component_set(6, 9, 4, seed);
        double sa = 0.0;
        for (double a : c.alpha) sa += a;
        CHECK(std::fabs(sa) < 1e-12);
        for (int t = 0; t < 9; ++t) {
            double s = 0.0;
            for (int d = 0; d < 6; ++d) s += c.beta_at(d, t);
            CHECK(std::fabs(s) < 1e-12);
        }
        for (int d = 0; d < 6; ++d) {
            double st = 0.0;
            for (int t = 0; t < 9; ++t) st += c.beta_at(d, t);
            CHECK(std::fabs(st) < 1e-12);
            double ss = 0.0;
            for (int s = 0; s < 4; ++s) ss += c.gamma_at(d, s);
            CHECK(std::fabs(ss) < 1e-12);
        }
        for (int d = 0; d < 6; ++d)
            for (int t = 0; t < 9; ++t)
                for (int s = 0; s < 4; ++s) CHECK(c.predict(d, t, s) > 0.0);
    }
}

TEST_CASE("oracle fit agrees with newton and flags boundary optima") {
    Rng rng(83);
    const auto data = testutil::random_cell(rng, 500, -0.4, 1.2);
    FitConfig cfg;
    const auto fit = fit_logistic(data, cfg);
    const auto [oa, ob] = synth::oracle_fit(data, cfg);
    CHECK(std::fabs(oa - fit.intercept) < 1e-3);
    CHECK(std::fabs(ob - fit.slope) < 1e-3);

    // two-point design at perfect calibration
    const auto two = testutil::two_point_design(0.2, 0.2, 0.8, 0.8, 2000);
    FitConfig trade_cfg;
    trade_cfg.weight_scheme = WeightScheme::trade;
    const auto [a2, b2] = synth::oracle_fit(two, trade_cfg);
    CHECK(std::fabs(a2) < 0.02);
    CHECK(std::fabs(b2 - 1.0) < 0.02);

    // an intercept beyond the search box must be refused, not clipped
    std::vector<Observation> shifted;
    Rng rng2(89);
    for (int i = 0; i < 400; ++i) {
        const double p = 0.05 + 0.9 * rng2.uniform();
        const double prob = sigmoid(6.0 + logit(p));
        shifted.push_back(testutil::obs(p, rng2.bernoulli(prob) ? 1 : 0));
    }
    bool fine = true;
    try {
        const auto [oa3, ob3] = synth::oracle_fit(shifted, trade_cfg);
        fine = std::fabs(oa3) < 3.9;  // if it returns, it must be interior
    } catch (const NumericalError&) {
        fine = true;
    }
    CHECK(fine);
}

}  // TEST_SUITE
