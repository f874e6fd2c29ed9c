#include <doctest.h>

#include <cmath>
#include <map>

#include "pmcal/errors.hpp"
#include "pmcal/ingest.hpp"
#include "pmcal/resample.hpp"
#include "pmcal/synth.hpp"
#include "test_support.hpp"

using namespace pmcal;

namespace {

// Domain cells with an injected Large-minus-Single gap.
std::map<CellKey, CellData> synth_cells(double delta, int markets_per_cell, int trades_per_market,
                                        std::uint64_t seed) {
    auto comp = synth::random_component_set(1, 9, 4, seed, 0.0);
    comp.mu.assign(9, 1.1);
    comp.alpha.assign(1, 0.0);
    comp.beta.assign(9, 0.0);
    comp.gamma.assign(4, 0.0);
    comp.gamma[0] = -delta / 2.0;
    comp.gamma[3] = delta / 2.0;
    synth::SynthSpec spec;
    spec.domains = {"Dom"};
    spec.components = comp;
    spec.markets_per_cell = markets_per_cell;
    spec.trades_per_market = trades_per_market;
    spec.price_jitter_sd = 0.03;
    spec.seed = seed;
    const auto out = synth::generate(spec);
    FilterConfig filt;
    filt.min_trades_per_market = 1;
    filt.min_trades_per_cell = 1;
    return assemble_grid(out.trades, out.markets, out.rules, {}, filt).cells;
}

}  // namespace

TEST_SUITE("resample") {

TEST_CASE("same seed gives bit-identical replicates under any thread count") {
    const auto cells = synth_cells(0.4, 25, 30, 7);
    BootstrapConfig cfg;
    cfg.replicates = 120;
    cfg.seed = 42;
    FitConfig fit_cfg;
    fit_cfg.weight_scheme = WeightScheme::trade;

    const auto a = bootstrap_scale_effect(cells, "Dom", cfg, fit_cfg);
    const auto b = bootstrap_scale_effect(cells, "Dom", cfg, fit_cfg);
    REQUIRE(a.replicate_values.size() == b.replicate_values.size());
    for (std::size_t i = 0; i < a.replicate_values.size(); ++i) {
        CHECK(a.replicate_values[i] == b.replicate_values[i]);
    }
    CHECK(a.lower == b.lower);
    CHECK(a.upper == b.upper);

    cfg.threads = 4;
    const auto c = bootstrap_scale_effect(cells, "Dom", cfg, fit_cfg);
    for (std::size_t i = 0; i < a.replicate_values.size(); ++i) {
        CHECK(a.replicate_values[i] == c.replicate_values[i]);
    }

    cfg.seed = 43;
    const auto d = bootstrap_scale_effect(cells, "Dom", cfg, fit_cfg);
    CHECK(a.replicate_values != d.replicate_values);
}

TEST_CASE("point estimate matches a direct refit and the CI brackets it") {
    const auto cells = synth_cells(0.5, 40, 30, 11);
    BootstrapConfig cfg;
    cfg.replicates = 150;
    cfg.seed = 1;
    FitConfig fit_cfg;
    fit_cfg.weight_scheme = WeightScheme::trade;
    const auto est = bootstrap_scale_effect(cells, "Dom", cfg, fit_cfg);

    double direct = 0.0;
    for (int t = 0; t < 9; ++t) {
        direct += fit_logistic(cells.at({"Dom", t, 3}).observations, fit_cfg).slope -
                  fit_logistic(cells.at({"Dom", t, 0}).observations, fit_cfg).slope;
    }
    direct /= 9.0;
    CHECK(est.point == doctest::Approx(direct).epsilon(1e-12));
    CHECK(est.lower <= est.point);
    CHECK(est.upper >= est.point);
    CHECK(est.lower < est.upper);
}

TEST_CASE("ci width shrinks with sample size") {
    BootstrapConfig cfg;
    cfg.replicates = 120;
    cfg.seed = 5;
    FitConfig fit_cfg;
    fit_cfg.weight_scheme = WeightScheme::trade;
    const auto small = bootstrap_scale_effect(synth_cells(0.3, 12, 25, 3), "Dom", cfg, fit_cfg);
    const auto large = bootstrap_scale_effect(synth_cells(0.3, 100, 40, 3), "Dom", cfg, fit_cfg);
    CHECK(large.upper - large.lower < small.upper - small.lower);
}

TEST_CASE("clustered resampling is wider under within-market correlation") {
    const auto cells = synth_cells(0.4, 30, 60, 17);
    BootstrapConfig cfg;
    cfg.replicates = 150;
    cfg.seed = 9;
    FitConfig fit_cfg;
    fit_cfg.weight_scheme = WeightScheme::trade;
    cfg.method = BootstrapMethod::cell_level;
    const auto cell_est = bootstrap_scale_effect(cells, "Dom", cfg, fit_cfg);
    cfg.method = BootstrapMethod::market_clustered;
    const auto clust_est = bootstrap_scale_effect(cells, "Dom", cfg, fit_cfg);
    CHECK(clust_est.upper - clust_est.lower >= cell_est.upper - cell_est.lower);
}

TEST_CASE("missing cells are a structural error") {
    auto cells = synth_cells(0.3, 10, 20, 23);
    cells.erase({"Dom", 4, 3});
    CHECK_THROWS_WITH_AS(
        (void)bootstrap_scale_effect(cells, "Dom", {.replicates = 100}, FitConfig{}), doctest::Contains("t4"),
        StructuralError);
}

TEST_CASE("degenerate replicates are counted and excluded") {
    auto cells = synth_cells(0.3, 40, 20, 29);
    // thin out the yes outcomes of one cell so some resamples separate
    auto& obs = cells.at({"Dom", 0, 0}).observations;
    std::vector<Observation> kept;
    int yes_kept = 0;
    for (const auto& o : obs) {
        if (o.outcome == 1 && yes_kept >= 2) continue;
        if (o.outcome == 1) ++yes_kept;
        kept.push_back(o);
    }
    // pad with no-outcomes so the resample rarely but sometimes loses both yes
    obs = kept;
    BootstrapConfig cfg;
    cfg.replicates = 200;
    cfg.seed = 31;
    cfg.max_failed_fraction = 0.9;
    FitConfig fit_cfg;
    fit_cfg.weight_scheme = WeightScheme::trade;
    const auto est = bootstrap_scale_effect(cells, "Dom", cfg, fit_cfg);
    CHECK(est.failed_replicates > 0);
    CHECK(est.replicate_values.size() + est.failed_replicates == 200);

    // with the default 10% ceiling the same fixture must throw
    BootstrapConfig strict = cfg;
    strict.max_failed_fraction = 0.001;
    CHECK_THROWS_AS((void)bootstrap_scale_effect(cells, "Dom", strict, fit_cfg), NumericalError);
}

TEST_CASE("replicate count below 100 is rejected") {
    const auto cells = synth_cells(0.3, 10, 20, 37);
    BootstrapConfig cfg;
    cfg.replicates = 50;
    CHECK_THROWS_AS((void)bootstrap_scale_effect(cells, "Dom", cfg, FitConfig{}), ConfigError);
}

}  // TEST_SUITE
