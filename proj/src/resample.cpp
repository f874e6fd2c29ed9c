#include "pmcal/resample.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <thread>

#include "pmcal/errors.hpp"
#include "pmcal/rng.hpp"
#include "pmcal/stats.hpp"

namespace pmcal {

namespace {

// Column arrays for one analysis cell, plus market-grouped index lists for
// the clustered design.
struct CellArrays {
    std::vector<double> x, y, w;
};

struct DomainPool {
    int horizon_bins = 0;
    std::vector<CellArrays> cells;                      // 2 per horizon: [t*2 + hi?1:0]
    std::vector<std::string> market_labels;             // sorted
    std::vector<std::vector<std::vector<int>>> market_cell_obs;  // [market][cell] -> obs indices
};

DomainPool build_pool(const std::map<CellKey, CellData>& cells, const std::string& domain, int size_lo,
                      int size_hi, int horizon_bins, const FitConfig& fit_cfg) {
    DomainPool pool;
    pool.horizon_bins = horizon_bins;
    pool.cells.resize(static_cast<std::size_t>(horizon_bins) * 2);

    std::map<std::string, int> market_index;
    std::vector<const CellData*> sources(static_cast<std::size_t>(horizon_bins) * 2, nullptr);
    for (const auto& [key, cell] : cells) {
        if (key.domain != domain || key.horizon_bin >= horizon_bins) continue;
        int slot = -1;
        if (key.size_bin == size_lo) slot = key.horizon_bin * 2;
        else if (key.size_bin == size_hi) slot = key.horizon_bin * 2 + 1;
        if (slot < 0) continue;
        sources[slot] = &cell;
        for (const auto& o : cell.observations) market_index.emplace(o.market_id, 0);
    }
    for (int t = 0; t < horizon_bins; ++t) {
        for (int h = 0; h < 2; ++h) {
            if (!sources[t * 2 + h] || sources[t * 2 + h]->observations.empty()) {
                std::ostringstream os;
                os << "bootstrap: missing cell (" << domain << ", t" << t << ", s" << (h ? size_hi : size_lo)
                   << ")";
                throw StructuralError(os.str());
            }
        }
    }
    int next = 0;
    for (auto& [label, idx] : market_index) idx = next++;
    pool.market_labels.resize(market_index.size());
    for (const auto& [label, idx] : market_index) pool.market_labels[idx] = label;
    pool.market_cell_obs.assign(market_index.size(),
                                std::vector<std::vector<int>>(static_cast<std::size_t>(horizon_bins) * 2));

    for (std::size_t slot = 0; slot < sources.size(); ++slot) {
        const auto& obs = sources[slot]->observations;
        auto& arr = pool.cells[slot];
        arr.x.reserve(obs.size());
        arr.y.reserve(obs.size());
        arr.w.reserve(obs.size());
        for (std::size_t i = 0; i < obs.size(); ++i) {
            arr.x.push_back(logit(obs[i].price_fraction));
            arr.y.push_back(static_cast<double>(obs[i].outcome));
            arr.w.push_back(fit_cfg.weight_scheme == WeightScheme::contract
                                ? static_cast<double>(obs[i].contract_count)
                                : 1.0);
            pool.market_cell_obs[market_index.at(obs[i].market_id)][slot].push_back(static_cast<int>(i));
        }
    }
    return pool;
}

double delta_from_cells(const std::vector<CellArrays>& cells, int horizon_bins, const FitConfig& cfg) {
    double sum = 0.0;
    for (int t = 0; t < horizon_bins; ++t) {
        const auto& lo = cells[t * 2];
        const auto& hi = cells[t * 2 + 1];
        const double b_lo = fit_logistic_arrays(lo.x, lo.y, lo.w, cfg).slope;
        const double b_hi = fit_logistic_arrays(hi.x, hi.y, hi.w, cfg).slope;
        sum += b_hi - b_lo;
    }
    return sum / static_cast<double>(horizon_bins);
}

double replicate_delta(const DomainPool& pool, const BootstrapConfig& cfg, const FitConfig& fit_cfg,
                       std::uint64_t replicate) {
    Rng rng(split_seed(cfg.seed, replicate));
    std::vector<CellArrays> resampled(pool.cells.size());
    if (cfg.method == BootstrapMethod::cell_level) {
        for (std::size_t c = 0; c < pool.cells.size(); ++c) {
            const auto& src = pool.cells[c];
            auto& dst = resampled[c];
            const std::size_t n = src.x.size();
            dst.x.resize(n);
            dst.y.resize(n);
            dst.w.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t j = rng.uniform_int(n);
                dst.x[i] = src.x[j];
                dst.y[i] = src.y[j];
                dst.w[i] = src.w[j];
            }
        }
    } else {
        const std::size_t n_markets = pool.market_labels.size();
        for (std::size_t k = 0; k < n_markets; ++k) {
            const std::size_t m = rng.uniform_int(n_markets);
            for (std::size_t c = 0; c < pool.cells.size(); ++c) {
                const auto& src = pool.cells[c];
                auto& dst = resampled[c];
                for (int i : pool.market_cell_obs[m][c]) {
                    dst.x.push_back(src.x[i]);
                    dst.y.push_back(src.y[i]);
                    dst.w.push_back(src.w[i]);
                }
            }
        }
    }
    return delta_from_cells(resampled, pool.horizon_bins, fit_cfg);
}

}  // namespace

IntervalEstimate bootstrap_scale_effect(const std::map<CellKey, CellData>& cells, const std::string& domain,
                                        const BootstrapConfig& cfg, const FitConfig& fit_cfg, int size_lo,
                                        int size_hi, int horizon_bins) {
    if (cfg.replicates < 100) throw ConfigError("bootstrap: replicates must be >= 100");
    if (!(cfg.confidence > 0.0 && cfg.confidence < 1.0)) throw ConfigError("bootstrap: confidence in (0,1)");

    const DomainPool pool = build_pool(cells, domain, size_lo, size_hi, horizon_bins, fit_cfg);

    IntervalEstimate est;
    est.point = delta_from_cells(pool.cells, horizon_bins, fit_cfg);

    const int B = cfg.replicates;
    std::vector<double> values(B, std::numeric_limits<double>::quiet_NaN());
    auto run_range = [&](int lo, int hi) {
        for (int r = lo; r < hi; ++r) {
            try {
                values[r] = replicate_delta(pool, cfg, fit_cfg, static_cast<std::uint64_t>(r));
            } catch (const NumericalError&) {
                // degenerate refit: leave NaN, counted below
            } catch (const DataError&) {
            }
        }
    };
    const int threads = std::max(1, cfg.threads);
    if (threads == 1) {
        run_range(0, B);
    } else {
        std::vector<std::thread> workers;
        const int chunk = (B + threads - 1) / threads;
        for (int w = 0; w < threads; ++w) {
            const int lo = w * chunk;
            const int hi = std::min(B, lo + chunk);
            if (lo < hi) workers.emplace_back(run_range, lo, hi);
        }
        for (auto& t : workers) t.join();
    }

    for (double v : values) {
        if (std::isnan(v)) ++est.failed_replicates;
        else est.replicate_values.push_back(v);
    }
    if (static_cast<double>(est.failed_replicates) > cfg.max_failed_fraction * B) {
        std::ostringstream os;
        os << "bootstrap: " << est.failed_replicates << " of " << B
           << " replicates failed; estimand unstable under resampling";
        throw NumericalError(os.str());
    }

    std::vector<double> sorted = est.replicate_values;
    std::sort(sorted.begin(), sorted.end());
    const double alpha = 1.0 - cfg.confidence;
    est.lower = quantile_sorted(sorted, alpha / 2.0);
    est.upper = quantile_sorted(sorted, 1.0 - alpha / 2.0);
    return est;
}

}  // namespace pmcal
