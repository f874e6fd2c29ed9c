#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pmcal/types.hpp"

namespace pmcal {

enum class WeightScheme { trade, contract };

struct FitConfig {
    double regularization_C = 10.0;  // L2 strength on the slope, larger = weaker
    WeightScheme weight_scheme = WeightScheme::contract;
    int max_iterations = 100;
    double tolerance = 1e-8;  // max absolute parameter step
};

// Logistic recalibration fit for one observation pool:
//   logit P(y=1) = a + b * logit(p)
// maximizing sum_i w_i * [y log pi + (1-y) log(1-pi)] - (wbar / (2C)) * b^2,
// wbar = mean weight. Expressing the ridge term per unit mean weight keeps
// the fitted (a, b) invariant to rescaling all weights by a constant.
struct CalibrationFit {
    double intercept = 0.0;
    double slope = 0.0;
    double se_a = 0.0;
    double se_b = 0.0;
    std::size_t n = 0;
    double effective_weight = 0.0;  // sum of weights
    double loglik = 0.0;            // maximized penalized objective
    bool converged = false;
    int iterations = 0;
};

// Newton with step halving on the 2-parameter penalized likelihood.
// Throws SeparationError when all outcomes agree, IdentificationError when
// all prices agree. objective_trace, when given, records the penalized
// objective at the start and after every accepted step.
CalibrationFit fit_logistic(std::span<const Observation> observations, const FitConfig& cfg,
                            std::vector<double>* objective_trace = nullptr);

// Array-level entry point (x = logit price); resampling paths use this to
// refit on index draws without materializing observation records.
CalibrationFit fit_logistic_arrays(std::span<const double> x, std::span<const double> y,
                                   std::span<const double> w, const FitConfig& cfg,
                                   std::vector<double>* objective_trace = nullptr);

CalibrationFit fit_recalibration(const CellData& cell, const FitConfig& cfg);

// Same fitter over an arbitrary grouping (subcategory, per-bin, platform).
CalibrationFit pooled_slope(std::span<const Observation> observations, const FitConfig& cfg);

struct LooEntry {
    std::optional<CalibrationFit> fit;
    std::string error;  // set when the complementary pool is degenerate
};

// For each label, a fit on the union of all *other* groups.
std::map<std::string, LooEntry> leave_one_out(const std::map<std::string, std::vector<Observation>>& groups,
                                              const FitConfig& cfg);

// Price recalibration: p^theta / (p^theta + (1-p)^theta).
double recalibrate(double p, double theta);

// Contract-minus-trade slope gap per horizon bin for one domain, computed
// from two pooled-over-sizes slope maps keyed by horizon bin.
struct WeightingGap {
    std::vector<int> bins;         // horizon bins present in both inputs
    std::vector<double> gap;       // b_contract - b_trade, aligned with bins
    std::vector<int> skipped_bins; // missing from either input
    double mean_gap = 0.0;
};

WeightingGap weighting_gap(const std::map<int, double>& trade_slopes_by_bin,
                           const std::map<int, double>& contract_slopes_by_bin, int horizon_bins = 9);

// Convenience: pool a domain's observations per horizon bin (across sizes),
// fit under both schemes from the same data, and take the gap. Bins whose
// pooled fit degenerates under either scheme are skipped.
WeightingGap weighting_gap_from_cells(const std::map<CellKey, CellData>& cells, const std::string& domain,
                                      FitConfig cfg, int horizon_bins = 9);

// Per-cell matrix row (the fit-cells CSV schema).
struct CellFitRow {
    CellKey key;
    CalibrationFit fit;
};

std::string cells_csv_header();
std::string cell_fit_row_csv(const CellFitRow& row);

}  // namespace pmcal
