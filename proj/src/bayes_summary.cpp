#include <algorithm>
#include <cmath>
#include <fstream>

#include "pmcal/bayes.hpp"
#include "pmcal/errors.hpp"
#include "pmcal/rng.hpp"
#include "pmcal/stats.hpp"

namespace pmcal::bayes {

std::vector<ParamSummary> summarize(const PosteriorDraws& draws) {
    if (draws.n_chains() == 0 || draws.n_iters() == 0) throw DataError("summarize: no draws");
    std::vector<ParamSummary> out;
    out.reserve(draws.n_params());
    for (std::size_t p = 0; p < draws.n_params(); ++p) {
        std::vector<double> all;
        all.reserve(draws.n_chains() * draws.n_iters());
        for (const auto& chain : draws.draws)
            for (const auto& it : chain) all.push_back(it[p]);
        ParamSummary s;
        s.name = draws.names[p];
        s.mean = mean(all);
        const double v = variance(all);
        s.sd = std::isnan(v) ? 0.0 : std::sqrt(v);
        std::sort(all.begin(), all.end());
        s.ci_lo = quantile_sorted(all, 0.025);
        s.ci_hi = quantile_sorted(all, 0.975);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<AlphaComparison> compare_alpha(const PosteriorDraws& draws, const SlopeGrid& grid,
                                           const ComponentSet& freq) {
    const auto summaries = summarize(draws);
    std::vector<AlphaComparison> out;
    for (int d = 0; d < grid.D(); ++d) {
        const std::string name = "alpha." + grid.domains[d];
        const auto it = std::find_if(summaries.begin(), summaries.end(),
                                     [&](const ParamSummary& s) { return s.name == name; });
        if (it == summaries.end()) throw DataError("compare_alpha: draws lack parameter " + name);
        AlphaComparison row;
        row.domain = grid.domains[d];
        row.post_mean = it->mean;
        row.sd = it->sd;
        row.ci_lo = it->ci_lo;
        row.ci_hi = it->ci_hi;
        row.frequentist = freq.alpha[d];
        out.push_back(std::move(row));
    }
    return out;
}

PPCResult posterior_predictive(const PosteriorDraws& draws, const SlopeGrid& grid, const ModelSpec& spec,
                               std::uint64_t seed) {
    grid.require_complete();
    HierarchicalModel model(grid, spec);
    if (model.parameter_names() != draws.names) {
        throw DataError("posterior_predictive: draw parameters do not match the model layout");
    }

    const std::size_t n_rep = draws.n_chains() * draws.n_iters();
    if (n_rep == 0) throw DataError("posterior_predictive: no draws");

    PPCResult result;
    std::map<std::string, std::pair<int, int>> domain_counts;  // within, total
    int within_total = 0;

    std::uint64_t cell_stream = 0;
    for (int d = 0; d < grid.D(); ++d) {
        for (int t = 0; t < grid.T; ++t) {
            for (int s = 0; s < grid.S; ++s) {
                Rng rng(split_seed(seed, cell_stream++));
                std::vector<double> rep;
                rep.reserve(n_rep);
                std::size_t above = 0;
                const double observed = grid.at(d, t, s).theta;
                for (const auto& chain : draws.draws) {
                    for (const auto& draw : chain) {
                        const double m = model.cell_mean(draw, d, t, s);
                        const double theta_rep = rng.normal(m, model.sigma_of(draw));
                        rep.push_back(theta_rep);
                        if (theta_rep > observed) ++above;
                    }
                }
                std::sort(rep.begin(), rep.end());
                PPCCell cell;
                cell.domain = grid.domains[d];
                cell.horizon_bin = t;
                cell.size_bin = s;
                cell.lower = quantile_sorted(rep, 0.025);
                cell.upper = quantile_sorted(rep, 0.975);
                cell.observed = observed;
                cell.within = observed >= cell.lower && observed <= cell.upper;
                cell.ppc_p = static_cast<double>(above) / static_cast<double>(n_rep);
                auto& dc = domain_counts[cell.domain];
                dc.second += 1;
                if (cell.within) {
                    dc.first += 1;
                    ++within_total;
                }
                result.cells.push_back(std::move(cell));
            }
        }
    }
    for (const auto& [domain, counts] : domain_counts) {
        result.coverage_by_domain[domain] = static_cast<double>(counts.first) / counts.second;
    }
    result.overall_coverage = static_cast<double>(within_total) / static_cast<double>(result.cells.size());
    return result;
}

}  // namespace pmcal::bayes
