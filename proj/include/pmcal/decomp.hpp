#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pmcal/calib.hpp"
#include "pmcal/types.hpp"

namespace pmcal {

// Observed slope grid over (domain, horizon, size). Domains are kept in
// sorted label order; cells are stored d-major, then horizon, then size.
struct SlopeGrid {
    struct Cell {
        double theta = 0.0;
        double se = 0.0;
        long long n = 0;
        bool present = false;
    };

    std::vector<std::string> domains;
    int T = 9;
    int S = 4;
    std::vector<Cell> cells;

    int D() const { return static_cast<int>(domains.size()); }
    int index(int d, int t, int s) const { return (d * T + t) * S + s; }
    Cell& at(int d, int t, int s) { return cells[index(d, t, s)]; }
    const Cell& at(int d, int t, int s) const { return cells[index(d, t, s)]; }
    int domain_index(const std::string& label) const;  // -1 if absent

    bool complete() const;
    std::vector<std::string> missing_cells() const;
    void require_complete() const;  // StructuralError listing missing cells

    static SlopeGrid from_fits(const std::map<CellKey, CalibrationFit>& fits, int T = 9, int S = 4);
    static SlopeGrid from_cells_csv(const std::string& path);
};

// Additive decomposition theta = mu(tau) + alpha_d + beta_d(tau) + gamma_d(s) + eps,
// identified by sum-to-zero constraints (alpha over d; beta over d per tau and
// over tau per d; gamma over s per d).
struct ComponentSet {
    int D = 0, T = 0, S = 0;
    std::vector<double> mu;        // T
    std::vector<double> alpha;     // D
    std::vector<double> beta;      // D*T, d-major
    std::vector<double> gamma;     // D*S, d-major
    std::vector<double> residual;  // D*T*S, same layout as SlopeGrid

    double beta_at(int d, int t) const { return beta[d * T + t]; }
    double gamma_at(int d, int s) const { return gamma[d * S + s]; }
    double predict(int d, int t, int s) const { return mu[t] + alpha[d] + beta_at(d, t) + gamma_at(d, s); }
};

ComponentSet fit_sequential(const SlopeGrid& grid);

enum class Term { mu, alpha, beta, gamma };
enum class SsType { I, II, III };

struct VarianceTable {
    SsType type = SsType::I;
    bool weighted = false;
    std::vector<Term> order;
    std::vector<double> marginal_r2;    // aligned with order
    std::vector<double> cumulative_r2;  // running sums
    double ss_total = 0.0;
    double ss_residual = 0.0;
    double total_r2 = 0.0;
};

VarianceTable variance_decomposition(const SlopeGrid& grid,
                                     const std::vector<Term>& order = {Term::mu, Term::alpha, Term::beta,
                                                                       Term::gamma},
                                     SsType type = SsType::I);

// Inverse-variance weighted refit (w = 1/se^2); the table reports weighted
// R^2 about the weighted grand mean.
std::pair<ComponentSet, VarianceTable> fit_wls(const SlopeGrid& grid);

struct FRow {
    std::string source;
    double ss = 0.0;
    double df = 0.0;
    double ms = 0.0;
    double f = 0.0;
    double p_value = 0.0;
    double partial_eta2 = 0.0;
};

struct FTable {
    std::vector<FRow> components;
    double residual_ss = 0.0;
    double residual_df = 0.0;
    double residual_ms = 0.0;
};

// Pure arithmetic from (SS, df) inputs.
FTable make_f_table(const std::vector<std::pair<std::string, std::pair<double, double>>>& components,
                    double residual_ss, double residual_df);
// Canonical table from the Type I decomposition of the grid.
FTable f_tests(const SlopeGrid& grid);

enum class ScaleVariant { within_horizon, aggregate };

// Large-minus-Single slope gap for one domain. The within-horizon variant
// averages per-horizon cell differences; the aggregate variant refits pooled
// slopes across horizons and needs raw cell data.
struct ScaleEffect {
    std::string domain;
    double delta = 0.0;
    std::vector<double> per_horizon_diffs;  // within_horizon only
    int size_lo = 0;
    int size_hi = 0;
    ScaleVariant variant = ScaleVariant::within_horizon;
};

ScaleEffect scale_effect_within(const SlopeGrid& grid, const std::string& domain);
ScaleEffect scale_effect_aggregate(const std::map<CellKey, CellData>& cells, const std::string& domain,
                                   const FitConfig& cfg, int size_lo = 0, int size_hi = 3);

// Size-by-horizon confounding diagnostic.
struct SizeHorizonCheck {
    double added_r2 = 0.0;                 // gain from a shared size x horizon term
    double gamma_r2_with_interaction = 0.0;  // Type I gamma share in the extended OLS fit
    // median hours-to-close per (domain, size)
    std::vector<std::string> domains;
    std::vector<std::vector<double>> median_tau_hours;  // [domain][size]
};

SizeHorizonCheck size_horizon_check(const SlopeGrid& grid, const std::map<CellKey, CellData>& cells);

// Cross-platform slope comparison on pooled (domain, horizon) grids (S=1).
struct PlatformDelta {
    struct Row {
        std::string domain;
        int horizon_bin = 0;
        double slope_a = 0.0;
        double slope_b = 0.0;
        double delta = 0.0;
        bool reliable = false;
    };
    std::vector<Row> rows;
    struct DomainMean {
        std::string domain;
        double mean_a = 0.0;
        double mean_b = 0.0;
        double mean_delta = 0.0;
    };
    std::vector<DomainMean> means;  // weighted by grid_b trade counts, reliable bins
};

PlatformDelta platform_delta(const SlopeGrid& grid_a, const SlopeGrid& grid_b,
                             const std::set<int>& reliable_bins = {2, 3, 4, 5, 6, 7, 8});

}  // namespace pmcal
