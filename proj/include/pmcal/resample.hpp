#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pmcal/calib.hpp"
#include "pmcal/types.hpp"

namespace pmcal {

enum class BootstrapMethod { cell_level, market_clustered };

struct BootstrapConfig {
    int replicates = 1000;
    BootstrapMethod method = BootstrapMethod::cell_level;
    double confidence = 0.95;
    std::uint64_t seed = 0;
    int threads = 1;
    double max_failed_fraction = 0.10;
};

struct IntervalEstimate {
    double point = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    std::vector<double> replicate_values;  // successful replicates, replicate order
    int failed_replicates = 0;
};

// Bootstrap CI for the within-horizon Large-minus-Single slope gap of one
// domain. cell_level resamples observations independently within each of the
// horizon x {Single, Large} cells; market_clustered resamples the domain's
// market set with replacement and rebuilds the cells from the drawn markets.
// Replicates use seeds split by index, so the sequence is identical under
// any thread count. Replicates whose refit degenerates are dropped and
// counted; more than max_failed_fraction of them is an error.
IntervalEstimate bootstrap_scale_effect(const std::map<CellKey, CellData>& cells, const std::string& domain,
                                        const BootstrapConfig& cfg, const FitConfig& fit_cfg, int size_lo = 0,
                                        int size_hi = 3, int horizon_bins = 9);

}  // namespace pmcal
