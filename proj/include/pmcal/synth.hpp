#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pmcal/calib.hpp"
#include "pmcal/decomp.hpp"
#include "pmcal/ingest.hpp"
#include "pmcal/types.hpp"

namespace pmcal::synth {

// Synthetic market generator. Prices are constructed by inverting the
// recalibration model: logit(p) = (logit(q) - a*) / theta(d,tau,s), with one
// latent truth q and one outcome per market, so a logistic refit of the
// output recovers (a*, theta) in expectation.
struct SynthSpec {
    std::vector<std::string> domains;
    ComponentSet components;    // target theta per cell via predict()
    double intercept = 0.0;     // a*, shared across cells
    int markets_per_cell = 100;
    int trades_per_market = 20;
    double latent_logit_mean = 0.0;
    double latent_logit_sd = 1.2;
    double price_jitter_sd = 0.05;  // logit scale
    std::int64_t large_count_max = 1000;
    std::uint64_t seed = 0;
    BinningConfig bins;
};

struct SynthOutput {
    std::vector<TradeRecord> trades;
    std::vector<MarketRecord> markets;
    DomainRuleSet rules;
    std::size_t clamped_prices = 0;
    std::size_t total_trades = 0;
    bool clamp_warning = false;  // more than 20% of prices hit the clamp
};

SynthOutput generate(const SynthSpec& spec);

void write_trades_csv(const std::string& path, const std::vector<TradeRecord>& trades);
void write_markets_csv(const std::string& path, const std::vector<MarketRecord>& markets);
void write_rules_csv(const std::string& path, const DomainRuleSet& rules);

// Uniform-theta convenience: every cell gets slope theta and intercept a.
SynthSpec uniform_spec(std::vector<std::string> domains, double theta, double a, int markets_per_cell,
                       int trades_per_market, std::uint64_t seed);

// Random ComponentSet satisfying the identification constraints (alpha and
// beta sum to zero over domains, beta also over horizons, gamma over sizes),
// with mu kept near 1 and effects scaled to keep all cell slopes positive.
ComponentSet random_component_set(int domains, int horizon_bins, int size_bins, std::uint64_t seed,
                                  double effect_scale = 0.15);

// Independent verification fitter: coarse-to-fine grid search over
// (a, b) in [-4, 4] x [0.05, 5] maximizing the same penalized objective.
// Shares no code with the Newton path. Throws NumericalError if the optimum
// lands on the search boundary.
std::pair<double, double> oracle_fit(std::span<const Observation> observations, const FitConfig& cfg);

}  // namespace pmcal::synth
