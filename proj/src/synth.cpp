#include "pmcal/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "pmcal/csv.hpp"
#include "pmcal/errors.hpp"
#include "pmcal/rng.hpp"
#include "pmcal/stats.hpp"

namespace pmcal::synth {

namespace {

constexpr std::int64_t kCloseTimeMs = 1900000000000LL;  // fixed anchor, ~2030

// Bin-midpoint horizon offsets; the open-ended bin uses 45 days.
std::int64_t horizon_mid_ms(const BinningConfig& bins, int t) {
    const auto& e = bins.horizon_edges_ms;
    const int T = bins.horizon_bins();
    if (e.empty()) return kMsPerHour;
    if (t == 0) return e.front() / 2;
    if (t >= T - 1) return e.back() + 15LL * kMsPerDay;
    return (e[t - 1] + e[t]) / 2;
}

// Log-uniform integer draw within the size bin's range.
std::int64_t draw_count(Rng& rng, const BinningConfig& bins, int s, std::int64_t large_max) {
    const auto& upper = bins.size_upper;
    const std::int64_t lo = (s == 0) ? 1 : upper[s - 1] + 1;
    const std::int64_t hi = (s < static_cast<int>(upper.size())) ? upper[s] : large_max;
    if (lo >= hi) return lo;
    const double u = rng.uniform(std::log(static_cast<double>(lo)), std::log(static_cast<double>(hi) + 1.0));
    return std::clamp(static_cast<std::int64_t>(std::exp(u)), lo, hi);
}

}  // namespace

SynthOutput generate(const SynthSpec& spec) {
    const int D = static_cast<int>(spec.domains.size());
    const int T = spec.bins.horizon_bins();
    const int S = spec.bins.size_bins();
    if (spec.components.D != D || spec.components.T != T || spec.components.S != S) {
        throw ConfigError("synth spec: component dimensions do not match domains/bins");
    }
    if (spec.markets_per_cell < 1 || spec.trades_per_market < 1) {
        throw ConfigError("synth spec: markets_per_cell and trades_per_market must be >= 1");
    }

    SynthOutput out;
    std::vector<std::pair<std::string, std::string>> prefix_rules;
    for (const auto& d : spec.domains) prefix_rules.emplace_back(d + "-", d);
    out.rules = compile_rules(std::move(prefix_rules));

    std::uint64_t cell_counter = 0;
    for (int d = 0; d < D; ++d) {
        for (int t = 0; t < T; ++t) {
            for (int s = 0; s < S; ++s) {
                const double theta = spec.components.predict(d, t, s);
                if (!(theta > 0.0)) {
                    std::ostringstream os;
                    os << "synth spec: nonpositive target slope " << theta << " in cell (" << spec.domains[d]
                       << ", t" << t << ", s" << s << ")";
                    throw ConfigError(os.str());
                }
                Rng rng(split_seed(spec.seed, cell_counter++));
                const std::int64_t trade_ts = kCloseTimeMs - horizon_mid_ms(spec.bins, t);
                for (int m = 0; m < spec.markets_per_cell; ++m) {
                    std::ostringstream id;
                    id << "M-" << spec.domains[d] << "-t" << t << "-s" << s << "-" << m;
                    MarketRecord market;
                    market.market_id = id.str();
                    market.event_ticker = spec.domains[d] + "-" + std::to_string(t) + "-" + std::to_string(s);
                    market.title = "synthetic market " + market.market_id;
                    market.close_time_ms = kCloseTimeMs;

                    const double latent_logit = rng.normal(spec.latent_logit_mean, spec.latent_logit_sd);
                    const double q = sigmoid(latent_logit);
                    market.outcome = rng.bernoulli(q) ? Outcome::yes : Outcome::no;
                    const double base_logit = (latent_logit - spec.intercept) / theta;

                    for (int k = 0; k < spec.trades_per_market; ++k) {
                        double p = sigmoid(base_logit + rng.normal(0.0, spec.price_jitter_sd));
                        ++out.total_trades;
                        if (p < 0.05 || p > 0.95) {
                            p = std::clamp(p, 0.05, 0.95);
                            ++out.clamped_prices;
                        }
                        TradeRecord trade;
                        trade.market_id = market.market_id;
                        trade.price_cents = std::clamp(static_cast<int>(std::lround(p * 100.0)), 5, 95);
                        trade.count = draw_count(rng, spec.bins, s, spec.large_count_max);
                        trade.side = rng.bernoulli(0.5) ? Side::yes : Side::no;
                        trade.timestamp_ms = trade_ts;
                        out.trades.push_back(std::move(trade));
                    }
                    out.markets.push_back(std::move(market));
                }
            }
        }
    }
    out.clamp_warning =
        out.total_trades > 0 && static_cast<double>(out.clamped_prices) > 0.2 * static_cast<double>(out.total_trades);
    return out;
}

void write_trades_csv(const std::string& path, const std::vector<TradeRecord>& trades) {
    csv::Writer w(path);
    w.raw_line("market_id,price_cents,count,side,timestamp_ms");
    for (const auto& t : trades) {
        std::ostringstream os;
        os << csv::escape_field(t.market_id) << ',' << t.price_cents << ',' << t.count << ','
           << (t.side == Side::yes ? "yes" : "no") << ',' << t.timestamp_ms;
        w.raw_line(os.str());
    }
    w.close();
}

void write_markets_csv(const std::string& path, const std::vector<MarketRecord>& markets) {
    csv::Writer w(path);
    w.raw_line("market_id,event_ticker,title,close_time_ms,outcome");
    for (const auto& m : markets) {
        std::ostringstream os;
        os << csv::escape_field(m.market_id) << ',' << csv::escape_field(m.event_ticker) << ','
           << csv::escape_field(m.title) << ',' << m.close_time_ms << ','
           << (m.outcome == Outcome::yes ? "yes" : (m.outcome == Outcome::no ? "no" : "unresolved"));
        w.raw_line(os.str());
    }
    w.close();
}

void write_rules_csv(const std::string& path, const DomainRuleSet& rules) {
    csv::Writer w(path);
    w.raw_line("match_kind,pattern,domain");
    for (const auto& r : rules.rules) {
        std::ostringstream os;
        os << (r.kind == MatchKind::ticker_prefix ? "ticker_prefix" : "title_regex") << ','
           << csv::escape_field(r.pattern) << ',' << csv::escape_field(r.domain);
        w.raw_line(os.str());
    }
    w.close();
}

SynthSpec uniform_spec(std::vector<std::string> domains, double theta, double a, int markets_per_cell,
                       int trades_per_market, std::uint64_t seed) {
    SynthSpec spec;
    spec.domains = std::move(domains);
    const int D = static_cast<int>(spec.domains.size());
    const int T = spec.bins.horizon_bins();
    const int S = spec.bins.size_bins();
    spec.components.D = D;
    spec.components.T = T;
    spec.components.S = S;
    spec.components.mu.assign(T, theta);
    spec.components.alpha.assign(D, 0.0);
    spec.components.beta.assign(static_cast<std::size_t>(D) * T, 0.0);
    spec.components.gamma.assign(static_cast<std::size_t>(D) * S, 0.0);
    spec.components.residual.assign(static_cast<std::size_t>(D) * T * S, 0.0);
    spec.intercept = a;
    spec.markets_per_cell = markets_per_cell;
    spec.trades_per_market = trades_per_market;
    spec.seed = seed;
    return spec;
}

ComponentSet random_component_set(int domains, int horizon_bins, int size_bins, std::uint64_t seed,
                                  double effect_scale) {
    Rng rng(seed);
    ComponentSet c;
    c.D = domains;
    c.T = horizon_bins;
    c.S = size_bins;
    c.mu.resize(horizon_bins);
    for (auto& m : c.mu) m = 1.0 + effect_scale * rng.normal();

    auto center = [](std::vector<double>& v) {
        double m = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        for (double& x : v) x -= m;
    };

    c.alpha.resize(domains);
    for (auto& a : c.alpha) a = effect_scale * rng.normal();
    center(c.alpha);

    // beta: doubly centred, b - rowmean - colmean + grandmean
    c.beta.assign(static_cast<std::size_t>(domains) * horizon_bins, 0.0);
    for (auto& b : c.beta) b = effect_scale * rng.normal();
    {
        std::vector<double> row_mean(domains, 0.0), col_mean(horizon_bins, 0.0);
        double grand = 0.0;
        for (int d = 0; d < domains; ++d) {
            for (int t = 0; t < horizon_bins; ++t) {
                const double v = c.beta[d * horizon_bins + t];
                row_mean[d] += v;
                col_mean[t] += v;
                grand += v;
            }
        }
        for (auto& r : row_mean) r /= horizon_bins;
        for (auto& cm : col_mean) cm /= domains;
        grand /= static_cast<double>(domains) * horizon_bins;
        for (int d = 0; d < domains; ++d)
            for (int t = 0; t < horizon_bins; ++t)
                c.beta[d * horizon_bins + t] -= row_mean[d] + col_mean[t] - grand;
    }

    c.gamma.assign(static_cast<std::size_t>(domains) * size_bins, 0.0);
    for (int d = 0; d < domains; ++d) {
        std::vector<double> g(size_bins);
        for (auto& x : g) x = effect_scale * rng.normal();
        center(g);
        for (int s = 0; s < size_bins; ++s) c.gamma[d * size_bins + s] = g[s];
    }

    c.residual.assign(static_cast<std::size_t>(domains) * horizon_bins * size_bins, 0.0);
    return c;
}

std::pair<double, double> oracle_fit(std::span<const Observation> observations, const FitConfig& cfg) {
    if (observations.size() < 2) throw DataError("oracle_fit requires at least 2 observations");

    // Independent objective evaluation (kept separate from the Newton path).
    std::vector<double> xs, ys, ws;
    double wsum = 0.0;
    for (const auto& o : observations) {
        xs.push_back(std::log(o.price_fraction / (1.0 - o.price_fraction)));
        ys.push_back(static_cast<double>(o.outcome));
        const double w =
            (cfg.weight_scheme == WeightScheme::contract) ? static_cast<double>(o.contract_count) : 1.0;
        ws.push_back(w);
        wsum += w;
    }
    const double ridge = (wsum / static_cast<double>(observations.size())) / cfg.regularization_C;
    auto objective = [&](double a, double b) {
        double obj = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double z = a + b * xs[i];
            double lp, lq;  // log pi, log(1-pi)
            if (z >= 0.0) {
                const double e = std::exp(-z);
                lp = -std::log1p(e);
                lq = -z - std::log1p(e);
            } else {
                const double e = std::exp(z);
                lp = z - std::log1p(e);
                lq = -std::log1p(e);
            }
            obj += ws[i] * (ys[i] * lp + (1.0 - ys[i]) * lq);
        }
        return obj - 0.5 * ridge * b * b;
    };

    double a_lo = -4.0, a_hi = 4.0, b_lo = 0.05, b_hi = 5.0;
    const double a_min = a_lo, a_max = a_hi, b_min = b_lo, b_max = b_hi;
    constexpr int kGrid = 41;
    double best_a = 0.0, best_b = 1.0;
    for (int round = 0; round < 14; ++round) {
        double best = -std::numeric_limits<double>::infinity();
        const double da = (a_hi - a_lo) / (kGrid - 1);
        const double db = (b_hi - b_lo) / (kGrid - 1);
        for (int i = 0; i < kGrid; ++i) {
            for (int j = 0; j < kGrid; ++j) {
                const double a = a_lo + i * da;
                const double b = b_lo + j * db;
                const double obj = objective(a, b);
                if (obj > best) {
                    best = obj;
                    best_a = a;
                    best_b = b;
                }
            }
        }
        if (round == 0 &&
            (best_a <= a_min + da / 2 || best_a >= a_max - da / 2 || best_b <= b_min + db / 2 ||
             best_b >= b_max - db / 2)) {
            throw NumericalError("oracle_fit: optimum on search boundary; range too small");
        }
        const double half_a = 1.5 * da, half_b = 1.5 * db;
        a_lo = std::max(a_min, best_a - half_a);
        a_hi = std::min(a_max, best_a + half_a);
        b_lo = std::max(b_min, best_b - half_b);
        b_hi = std::min(b_max, best_b + half_b);
        if (da < 1e-5 && db < 1e-5) break;
    }
    return {best_a, best_b};
}

}  // namespace pmcal::synth
