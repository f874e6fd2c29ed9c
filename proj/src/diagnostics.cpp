#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pmcal/bayes.hpp"
#include "pmcal/errors.hpp"
#include "pmcal/stats.hpp"

namespace pmcal::bayes {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using Chains = std::vector<std::vector<double>>;

void require_shape(const Chains& chains) {
    if (chains.size() < 2) throw DataError("diagnostics require at least 2 chains");
    const std::size_t n = chains.front().size();
    for (const auto& c : chains) {
        if (c.size() != n) throw DataError("diagnostics: unequal chain lengths");
        if (c.size() < 4) throw DataError("diagnostics require at least 4 draws per chain");
    }
}

Chains split_halves(const Chains& chains) {
    Chains out;
    for (const auto& c : chains) {
        const std::size_t h = c.size() / 2;
        out.emplace_back(c.begin(), c.begin() + h);
        out.emplace_back(c.end() - h, c.end());
    }
    return out;
}

// Pooled average ranks -> normal scores via the (r - 3/8)/(N + 1/4) rule.
Chains rank_normalize(const Chains& chains) {
    const std::size_t m = chains.size();
    const std::size_t n = chains.front().size();
    const std::size_t total = m * n;

    struct Entry {
        double value;
        std::size_t chain, pos;
    };
    std::vector<Entry> pooled;
    pooled.reserve(total);
    for (std::size_t c = 0; c < m; ++c)
        for (std::size_t i = 0; i < n; ++i) pooled.push_back({chains[c][i], c, i});
    std::sort(pooled.begin(), pooled.end(), [](const Entry& a, const Entry& b) { return a.value < b.value; });

    Chains out(m, std::vector<double>(n, 0.0));
    std::size_t i = 0;
    while (i < total) {
        std::size_t j = i;
        while (j + 1 < total && pooled[j + 1].value == pooled[i].value) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
        const double z = normal_quantile((avg_rank - 0.375) / (static_cast<double>(total) + 0.25));
        for (std::size_t k = i; k <= j; ++k) out[pooled[k].chain][pooled[k].pos] = z;
        i = j + 1;
    }
    return out;
}

struct ChainMoments {
    double w = 0.0;         // mean within-chain variance
    double var_plus = 0.0;  // (n-1)/n W + B/n
    std::vector<double> means;
    std::size_t n = 0;
};

ChainMoments moments(const Chains& chains) {
    ChainMoments mo;
    mo.n = chains.front().size();
    double wsum = 0.0;
    for (const auto& c : chains) {
        mo.means.push_back(mean(c));
        wsum += variance(c);
    }
    mo.w = wsum / static_cast<double>(chains.size());
    const double b_over_n = variance(mo.means);  // B/n
    mo.var_plus = (static_cast<double>(mo.n) - 1.0) / static_cast<double>(mo.n) * mo.w + b_over_n;
    return mo;
}

double basic_rhat(const Chains& chains) {
    const ChainMoments mo = moments(chains);
    if (!(mo.w > 0.0)) return kNaN;
    return std::sqrt(mo.var_plus / mo.w);
}

double fold(double x, double med) { return std::fabs(x - med); }

}  // namespace

double split_rhat(const Chains& chains) {
    require_shape(chains);
    const Chains halves = split_halves(chains);

    const double bulk = basic_rhat(rank_normalize(halves));

    std::vector<double> pooled;
    for (const auto& c : halves) pooled.insert(pooled.end(), c.begin(), c.end());
    const double med = median(pooled);
    Chains folded = halves;
    for (auto& c : folded)
        for (auto& v : c) v = fold(v, med);
    const double tail = basic_rhat(rank_normalize(folded));

    if (std::isnan(bulk) || std::isnan(tail)) return kNaN;
    return std::max(bulk, tail);
}

double bulk_ess(const Chains& chains) {
    require_shape(chains);
    const Chains z = rank_normalize(split_halves(chains));
    const std::size_t m = z.size();
    const std::size_t n = z.front().size();
    const ChainMoments mo = moments(z);
    if (!(mo.var_plus > 0.0)) return kNaN;

    // lag-t autocovariance (1/n normalization), averaged over chains
    auto mean_acov = [&](std::size_t t) {
        double acc = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
            const auto& x = z[c];
            const double xb = mo.means[c];
            double s = 0.0;
            for (std::size_t i = 0; i + t < n; ++i) s += (x[i] - xb) * (x[i + t] - xb);
            acc += s / static_cast<double>(n);
        }
        return acc / static_cast<double>(m);
    };

    auto rho = [&](std::size_t t) {
        if (t == 0) return 1.0;
        if (t >= n) return 0.0;
        return 1.0 - (mo.w - mean_acov(t)) / mo.var_plus;
    };

    // Geyer initial positive sequence with monotone correction
    double sum_pairs = 0.0;
    double prev_pair = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
        double pair = rho(2 * k) + rho(2 * k + 1);
        if (k > 0 && pair <= 0.0) break;
        pair = std::min(pair, prev_pair);
        prev_pair = pair;
        sum_pairs += pair;
    }
    const double tau = -1.0 + 2.0 * sum_pairs;
    const double total = static_cast<double>(m) * static_cast<double>(n);
    if (!(tau > 0.0)) return total;
    return std::min(total, total / tau);
}

Diagnostics diagnostics(const PosteriorDraws& draws) {
    Diagnostics diag;
    diag.divergence_count = draws.divergence_count;
    diag.max_rhat = -std::numeric_limits<double>::infinity();
    diag.min_ess = std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t p = 0; p < draws.n_params(); ++p) {
        const auto chains = draws.chains_for(p);
        ParamDiagnostic pd;
        pd.name = draws.names[p];
        pd.rhat = split_rhat(chains);
        pd.ess = bulk_ess(chains);
        if (!std::isnan(pd.rhat)) {
            diag.max_rhat = std::max(diag.max_rhat, pd.rhat);
            any = true;
        }
        if (!std::isnan(pd.ess)) diag.min_ess = std::min(diag.min_ess, pd.ess);
        diag.params.push_back(std::move(pd));
    }
    if (!any) {
        diag.max_rhat = kNaN;
        diag.min_ess = kNaN;
    }
    return diag;
}

}  // namespace pmcal::bayes
