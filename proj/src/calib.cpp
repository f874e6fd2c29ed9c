#include "pmcal/calib.hpp"

#include <cmath>
#include <sstream>

#include "pmcal/errors.hpp"
#include "pmcal/stats.hpp"

namespace pmcal {

namespace {

struct Design {
    std::span<const double> x;  // logit price
    std::span<const double> y;
    std::span<const double> w;
    double sum_w = 0.0;
    double mean_w = 1.0;
};

Design check_design(std::span<const double> x, std::span<const double> y, std::span<const double> w) {
    if (x.size() < 2) throw DataError("fit requires at least 2 observations");
    if (x.size() != y.size() || x.size() != w.size()) throw DataError("fit: array length mismatch");
    Design d{x, y, w};
    bool any_yes = false, any_no = false;
    for (double yi : y) (yi > 0.5 ? any_yes : any_no) = true;
    if (!any_yes || !any_no) throw SeparationError("all outcomes identical; slope unbounded");
    bool distinct = false;
    for (double xi : x) {
        if (xi != x.front()) { distinct = true; break; }
    }
    if (!distinct) throw IdentificationError("all prices identical; design rank < 2");
    for (double wi : w) d.sum_w += wi;
    d.mean_w = d.sum_w / static_cast<double>(x.size());
    return d;
}

// Penalized objective and its derivatives at (a, b).
struct Eval {
    double obj = 0.0;
    double ga = 0.0, gb = 0.0;        // gradient
    double haa = 0.0, hab = 0.0, hbb = 0.0;  // negative Hessian (information)
};

Eval evaluate(const Design& d, double C, double a, double b, bool with_derivs) {
    Eval e;
    for (std::size_t i = 0; i < d.x.size(); ++i) {
        const double z = a + b * d.x[i];
        const double wi = d.w[i];
        // y log pi + (1-y) log(1-pi) = y*logsig(z) + (1-y)*logsig(-z)
        e.obj += wi * (d.y[i] * log_sigmoid(z) + (1.0 - d.y[i]) * log_sigmoid(-z));
        if (with_derivs) {
            const double pi = sigmoid(z);
            const double r = wi * (d.y[i] - pi);
            const double v = wi * pi * (1.0 - pi);
            e.ga += r;
            e.gb += r * d.x[i];
            e.haa += v;
            e.hab += v * d.x[i];
            e.hbb += v * d.x[i] * d.x[i];
        }
    }
    const double ridge = d.mean_w / C;
    e.obj -= 0.5 * ridge * b * b;
    if (with_derivs) {
        e.gb -= ridge * b;
        e.hbb += ridge;
    }
    return e;
}

}  // namespace

CalibrationFit fit_logistic_arrays(std::span<const double> x, std::span<const double> y,
                                   std::span<const double> w, const FitConfig& cfg,
                                   std::vector<double>* objective_trace) {
    if (cfg.regularization_C <= 0.0) throw ConfigError("regularization_C must be positive");
    const Design d = check_design(x, y, w);

    double a = 0.0, b = 0.0;
    Eval cur = evaluate(d, cfg.regularization_C, a, b, true);
    if (objective_trace) objective_trace->push_back(cur.obj);

    CalibrationFit fit;
    fit.n = x.size();
    fit.effective_weight = d.sum_w;

    int iter = 0;
    bool converged = false;
    for (; iter < cfg.max_iterations; ++iter) {
        // Newton step: solve [haa hab; hab hbb] * step = grad.
        const double det = cur.haa * cur.hbb - cur.hab * cur.hab;
        if (!(det > 0.0) || !std::isfinite(det)) {
            throw NumericalError("singular information matrix in logistic fit");
        }
        double step_a = (cur.hbb * cur.ga - cur.hab * cur.gb) / det;
        double step_b = (cur.haa * cur.gb - cur.hab * cur.ga) / det;

        // Halve until the penalized objective does not decrease.
        double scale = 1.0;
        Eval next;
        bool accepted = false;
        for (int h = 0; h < 60; ++h) {
            next = evaluate(d, cfg.regularization_C, a + scale * step_a, b + scale * step_b, true);
            if (std::isfinite(next.obj) && next.obj >= cur.obj) {
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if (!accepted) break;  // no ascent direction left at this precision
        a += scale * step_a;
        b += scale * step_b;
        cur = next;
        if (objective_trace) objective_trace->push_back(cur.obj);
        if (std::max(std::fabs(scale * step_a), std::fabs(scale * step_b)) < cfg.tolerance) {
            converged = true;
            ++iter;
            break;
        }
    }

    fit.intercept = a;
    fit.slope = b;
    fit.loglik = cur.obj;
    fit.converged = converged;
    fit.iterations = iter;

    const double det = cur.haa * cur.hbb - cur.hab * cur.hab;
    if (det > 0.0) {
        fit.se_a = std::sqrt(cur.hbb / det);
        fit.se_b = std::sqrt(cur.haa / det);
    }
    return fit;
}

CalibrationFit fit_logistic(std::span<const Observation> observations, const FitConfig& cfg,
                            std::vector<double>* objective_trace) {
    std::vector<double> x, y, w;
    x.reserve(observations.size());
    y.reserve(observations.size());
    w.reserve(observations.size());
    for (const auto& o : observations) {
        x.push_back(logit(o.price_fraction));
        y.push_back(static_cast<double>(o.outcome));
        w.push_back(cfg.weight_scheme == WeightScheme::contract ? static_cast<double>(o.contract_count) : 1.0);
    }
    return fit_logistic_arrays(x, y, w, cfg, objective_trace);
}

CalibrationFit fit_recalibration(const CellData& cell, const FitConfig& cfg) {
    try {
        return fit_logistic(cell.observations, cfg);
    } catch (const NumericalError& e) {
        std::ostringstream msg;
        msg << "cell (" << cell.key.domain << ", t" << cell.key.horizon_bin << ", s" << cell.key.size_bin
            << "): " << e.what();
        throw NumericalError(msg.str());
    }
}

CalibrationFit pooled_slope(std::span<const Observation> observations, const FitConfig& cfg) {
    return fit_logistic(observations, cfg);
}

std::map<std::string, LooEntry> leave_one_out(const std::map<std::string, std::vector<Observation>>& groups,
                                              const FitConfig& cfg) {
    if (groups.size() < 2) throw DataError("leave_one_out requires at least 2 groups");
    std::map<std::string, LooEntry> out;
    for (const auto& [label, _] : groups) {
        std::vector<Observation> pool;
        for (const auto& [other, obs] : groups) {
            if (other == label) continue;
            pool.insert(pool.end(), obs.begin(), obs.end());
        }
        LooEntry entry;
        try {
            entry.fit = fit_logistic(pool, cfg);
        } catch (const std::exception& e) {
            entry.error = e.what();
        }
        out.emplace(label, std::move(entry));
    }
    return out;
}

double recalibrate(double p, double theta) {
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("recalibrate: p must lie in (0,1)");
    if (!(theta > 0.0)) throw std::domain_error("recalibrate: theta must be positive");
    // p^t / (p^t + (1-p)^t) = sigmoid(t * logit(p))
    return sigmoid(theta * (std::log(p) - std::log1p(-p)));
}

WeightingGap weighting_gap(const std::map<int, double>& trade_slopes_by_bin,
                           const std::map<int, double>& contract_slopes_by_bin, int horizon_bins) {
    WeightingGap g;
    double sum = 0.0;
    for (int tau = 0; tau < horizon_bins; ++tau) {
        auto it_t = trade_slopes_by_bin.find(tau);
        auto it_c = contract_slopes_by_bin.find(tau);
        if (it_t == trade_slopes_by_bin.end() || it_c == contract_slopes_by_bin.end()) {
            g.skipped_bins.push_back(tau);
            continue;
        }
        g.bins.push_back(tau);
        g.gap.push_back(it_c->second - it_t->second);
        sum += g.gap.back();
    }
    if (g.bins.empty()) throw DataError("weighting_gap: no horizon bin present in both grids");
    g.mean_gap = sum / static_cast<double>(g.bins.size());
    return g;
}

WeightingGap weighting_gap_from_cells(const std::map<CellKey, CellData>& cells, const std::string& domain,
                                      FitConfig cfg, int horizon_bins) {
    std::map<int, std::vector<Observation>> pooled;
    for (const auto& [key, cell] : cells) {
        if (key.domain != domain) continue;
        auto& pool = pooled[key.horizon_bin];
        pool.insert(pool.end(), cell.observations.begin(), cell.observations.end());
    }
    std::map<int, double> trade_b, contract_b;
    for (auto& [tau, obs] : pooled) {
        try {
            cfg.weight_scheme = WeightScheme::trade;
            const double bt = fit_logistic(obs, cfg).slope;
            cfg.weight_scheme = WeightScheme::contract;
            const double bc = fit_logistic(obs, cfg).slope;
            trade_b[tau] = bt;
            contract_b[tau] = bc;
        } catch (const NumericalError&) {
            // degenerate bin: left out of both maps, reported as skipped
        }
    }
    return weighting_gap(trade_b, contract_b, horizon_bins);
}

std::string cells_csv_header() { return "domain,horizon_bin,size_bin,n,a,b,se_a,se_b,loglik,converged"; }

std::string cell_fit_row_csv(const CellFitRow& row) {
    std::ostringstream os;
    os << row.key.domain << ',' << row.key.horizon_bin << ',' << row.key.size_bin << ',' << row.fit.n << ','
       << fmt_double(row.fit.intercept) << ',' << fmt_double(row.fit.slope) << ',' << fmt_double(row.fit.se_a)
       << ',' << fmt_double(row.fit.se_b) << ',' << fmt_double(row.fit.loglik) << ','
       << (row.fit.converged ? 1 : 0);
    return os.str();
}

}  // namespace pmcal
