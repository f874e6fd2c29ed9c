#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>

#include "pmcal/calib.hpp"
#include "pmcal/csv.hpp"
#include "pmcal/decomp.hpp"
#include "pmcal/ingest.hpp"
#include "pmcal/synth.hpp"
#include "test_support.hpp"

using namespace pmcal;

TEST_SUITE("pipeline") {

// synth -> CSV files -> parse -> grid -> per-cell fits -> decomposition.
// The injected structure must dominate the variance of the fitted grid.
TEST_CASE("full round trip through the file formats") {
    auto comp = synth::random_component_set(3, 9, 4, 77, 0.12);
    synth::SynthSpec spec;
    spec.domains = {"Apple", "Brick", "Cloud"};
    spec.components = comp;
    spec.markets_per_cell = 700;  // outcome noise scales with market count
    spec.trades_per_market = 2;
    spec.latent_logit_sd = 1.6;
    spec.price_jitter_sd = 0.02;
    spec.seed = 99;
    const auto out = synth::generate(spec);

    testutil::TempDir tmp("pipeline");
    synth::write_trades_csv(tmp.path("trades.csv"), out.trades);
    synth::write_markets_csv(tmp.path("markets.csv"), out.markets);
    synth::write_rules_csv(tmp.path("rules.csv"), out.rules);

    const auto trades = parse_trades_file(tmp.path("trades.csv"));
    const auto markets = parse_markets_file(tmp.path("markets.csv"));
    const auto rules = parse_rules_file(tmp.path("rules.csv"));
    CHECK(trades.records.size() == out.trades.size());
    CHECK(markets.records.size() == out.markets.size());

    FilterConfig filt;
    filt.min_trades_per_market = 1;
    filt.min_trades_per_cell = 100;
    const auto grid_result = assemble_grid(trades.records, markets.records, rules, {}, filt);
    REQUIRE(grid_result.cells.size() == 3u * 9 * 4);

    FitConfig cfg;
    cfg.weight_scheme = WeightScheme::trade;
    std::map<CellKey, CalibrationFit> fits;
    for (const auto& [key, cell] : grid_result.cells) fits[key] = fit_recalibration(cell, cfg);
    const auto grid = SlopeGrid::from_fits(fits);
    REQUIRE(grid.complete());

    const auto table = variance_decomposition(grid);
    CHECK(table.total_r2 > 0.70);

    // fitted slopes track the injected targets cell by cell
    double worst = 0.0;
    for (int d = 0; d < 3; ++d)
        for (int t = 0; t < 9; ++t)
            for (int s = 0; s < 4; ++s) {
                const int di = grid.domain_index(spec.domains[d]);
                worst = std::max(worst, std::fabs(grid.at(di, t, s).theta - comp.predict(d, t, s)));
            }
    CHECK(worst < 0.6);

    const auto [wls_comp, wls_table] = fit_wls(grid);
    CHECK(wls_table.total_r2 > 0.65);
}

}  // TEST_SUITE
