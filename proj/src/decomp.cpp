#include "pmcal/decomp.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "pmcal/csv.hpp"
#include "pmcal/errors.hpp"
#include "pmcal/stats.hpp"

namespace pmcal {

// --- SlopeGrid -------------------------------------------------------------

int SlopeGrid::domain_index(const std::string& label) const {
    for (int d = 0; d < D(); ++d) {
        if (domains[d] == label) return d;
    }
    return -1;
}

bool SlopeGrid::complete() const {
    return std::all_of(cells.begin(), cells.end(), [](const Cell& c) { return c.present; });
}

std::vector<std::string> SlopeGrid::missing_cells() const {
    std::vector<std::string> out;
    for (int d = 0; d < D(); ++d) {
        for (int t = 0; t < T; ++t) {
            for (int s = 0; s < S; ++s) {
                if (!at(d, t, s).present) {
                    std::ostringstream os;
                    os << "(" << domains[d] << ", t" << t << ", s" << s << ")";
                    out.push_back(os.str());
                }
            }
        }
    }
    return out;
}

void SlopeGrid::require_complete() const {
    if (complete()) return;
    const auto missing = missing_cells();
    std::ostringstream os;
    os << "incomplete slope grid, " << missing.size() << " missing cell(s):";
    for (std::size_t i = 0; i < missing.size() && i < 12; ++i) os << ' ' << missing[i];
    if (missing.size() > 12) os << " ...";
    throw StructuralError(os.str());
}

SlopeGrid SlopeGrid::from_fits(const std::map<CellKey, CalibrationFit>& fits, int T, int S) {
    SlopeGrid g;
    g.T = T;
    g.S = S;
    std::set<std::string> labels;
    for (const auto& [key, _] : fits) labels.insert(key.domain);
    g.domains.assign(labels.begin(), labels.end());
    g.cells.assign(static_cast<std::size_t>(g.D()) * T * S, {});
    for (const auto& [key, fit] : fits) {
        if (key.horizon_bin < 0 || key.horizon_bin >= T || key.size_bin < 0 || key.size_bin >= S) {
            throw StructuralError("cell key outside grid dimensions");
        }
        Cell& c = g.at(g.domain_index(key.domain), key.horizon_bin, key.size_bin);
        c.theta = fit.slope;
        c.se = fit.se_b;
        c.n = static_cast<long long>(fit.n);
        c.present = true;
    }
    return g;
}

SlopeGrid SlopeGrid::from_cells_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open cells file: " + path);
    std::string line;
    if (!csv::read_line(in, line)) throw DataError("empty cells file: " + path);

    struct Row {
        CellKey key;
        double b, se_b;
        long long n;
    };
    std::vector<Row> rows;
    int max_t = 0, max_s = 0;
    while (csv::read_line(in, line)) {
        if (line.empty()) continue;
        const auto f = csv::split_line(line);
        if (f.size() < 10) throw DataError("cells file: expected 10 columns");
        Row r;
        r.key.domain = f[0];
        r.key.horizon_bin = std::stoi(f[1]);
        r.key.size_bin = std::stoi(f[2]);
        r.n = std::stoll(f[3]);
        r.b = std::stod(f[5]);
        r.se_b = std::stod(f[7]);
        max_t = std::max(max_t, r.key.horizon_bin);
        max_s = std::max(max_s, r.key.size_bin);
        rows.push_back(std::move(r));
    }
    SlopeGrid g;
    g.T = max_t + 1;
    g.S = max_s + 1;
    std::set<std::string> labels;
    for (const auto& r : rows) labels.insert(r.key.domain);
    g.domains.assign(labels.begin(), labels.end());
    g.cells.assign(static_cast<std::size_t>(g.D()) * g.T * g.S, {});
    for (const auto& r : rows) {
        Cell& c = g.at(g.domain_index(r.key.domain), r.key.horizon_bin, r.key.size_bin);
        c.theta = r.b;
        c.se = r.se_b;
        c.n = r.n;
        c.present = true;
    }
    return g;
}

// --- sequential projection ---------------------------------------------------

namespace {

ComponentSet sequential_project(const SlopeGrid& grid, const std::vector<double>& values) {
    const int D = grid.D(), T = grid.T, S = grid.S;
    ComponentSet c;
    c.D = D;
    c.T = T;
    c.S = S;
    c.mu.assign(T, 0.0);
    c.alpha.assign(D, 0.0);
    c.beta.assign(static_cast<std::size_t>(D) * T, 0.0);
    c.gamma.assign(static_cast<std::size_t>(D) * S, 0.0);
    c.residual.assign(values.size(), 0.0);

    std::vector<double> r = values;
    auto idx = [&](int d, int t, int s) { return grid.index(d, t, s); };

    for (int t = 0; t < T; ++t) {
        double sum = 0.0;
        for (int d = 0; d < D; ++d)
            for (int s = 0; s < S; ++s) sum += r[idx(d, t, s)];
        c.mu[t] = sum / static_cast<double>(D * S);
    }
    for (int d = 0; d < D; ++d)
        for (int t = 0; t < T; ++t)
            for (int s = 0; s < S; ++s) r[idx(d, t, s)] -= c.mu[t];

    for (int d = 0; d < D; ++d) {
        double sum = 0.0;
        for (int t = 0; t < T; ++t)
            for (int s = 0; s < S; ++s) sum += r[idx(d, t, s)];
        c.alpha[d] = sum / static_cast<double>(T * S);
        for (int t = 0; t < T; ++t)
            for (int s = 0; s < S; ++s) r[idx(d, t, s)] -= c.alpha[d];
    }

    for (int d = 0; d < D; ++d) {
        for (int t = 0; t < T; ++t) {
            double sum = 0.0;
            for (int s = 0; s < S; ++s) sum += r[idx(d, t, s)];
            const double b = sum / static_cast<double>(S);
            c.beta[d * T + t] = b;
            for (int s = 0; s < S; ++s) r[idx(d, t, s)] -= b;
        }
    }

    for (int d = 0; d < D; ++d) {
        for (int s = 0; s < S; ++s) {
            double sum = 0.0;
            for (int t = 0; t < T; ++t) sum += r[idx(d, t, s)];
            const double gmm = sum / static_cast<double>(T);
            c.gamma[d * S + s] = gmm;
            for (int t = 0; t < T; ++t) r[idx(d, t, s)] -= gmm;
        }
    }

    c.residual = std::move(r);
    return c;
}

}  // namespace

ComponentSet fit_sequential(const SlopeGrid& grid) {
    grid.require_complete();
    std::vector<double> theta(grid.cells.size());
    for (std::size_t i = 0; i < grid.cells.size(); ++i) theta[i] = grid.cells[i].theta;
    return sequential_project(grid, theta);
}

// --- constrained-basis least squares ----------------------------------------

namespace {

// Effects (sum-to-zero) coding: K levels, K-1 columns.
double effect_code(int level, int col, int levels) {
    if (level == col) return 1.0;
    if (level == levels - 1) return -1.0;
    return 0.0;
}

struct Blocks {
    bool mu = false, alpha = false, beta = false, gamma = false, size_horizon = false;
};

Blocks blocks_of(const std::vector<Term>& terms) {
    Blocks b;
    for (Term t : terms) {
        switch (t) {
            case Term::mu: b.mu = true; break;
            case Term::alpha: b.alpha = true; break;
            case Term::beta: b.beta = true; break;
            case Term::gamma: b.gamma = true; break;
        }
    }
    return b;
}

int block_cols(const SlopeGrid& g, const Blocks& b) {
    int cols = 1;  // intercept
    if (b.mu) cols += g.T - 1;
    if (b.alpha) cols += g.D() - 1;
    if (b.beta) cols += (g.D() - 1) * (g.T - 1);
    if (b.gamma) cols += g.D() * (g.S - 1);
    if (b.size_horizon) cols += (g.T - 1) * (g.S - 1);
    return cols;
}

Eigen::MatrixXd build_design(const SlopeGrid& g, const Blocks& b) {
    const int D = g.D(), T = g.T, S = g.S;
    const int n = D * T * S;
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, block_cols(g, b));
    for (int d = 0; d < D; ++d) {
        for (int t = 0; t < T; ++t) {
            for (int s = 0; s < S; ++s) {
                const int row = g.index(d, t, s);
                int col = 0;
                X(row, col++) = 1.0;
                if (b.mu) {
                    for (int j = 0; j < T - 1; ++j) X(row, col++) = effect_code(t, j, T);
                }
                if (b.alpha) {
                    for (int j = 0; j < D - 1; ++j) X(row, col++) = effect_code(d, j, D);
                }
                if (b.beta) {
                    for (int i = 0; i < D - 1; ++i)
                        for (int j = 0; j < T - 1; ++j) X(row, col++) = effect_code(d, i, D) * effect_code(t, j, T);
                }
                if (b.gamma) {
                    for (int i = 0; i < D; ++i)
                        for (int j = 0; j < S - 1; ++j)
                            X(row, col++) = (d == i ? effect_code(s, j, S) : 0.0);
                }
                if (b.size_horizon) {
                    for (int i = 0; i < T - 1; ++i)
                        for (int j = 0; j < S - 1; ++j) X(row, col++) = effect_code(t, i, T) * effect_code(s, j, S);
                }
            }
        }
    }
    return X;
}

struct LsFit {
    Eigen::VectorXd fitted;
    double sse = 0.0;
};

LsFit weighted_ls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& sqrt_w) {
    const Eigen::MatrixXd Xw = sqrt_w.asDiagonal() * X;
    const Eigen::VectorXd yw = sqrt_w.asDiagonal() * y;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
    if (qr.rank() < X.cols()) {
        throw StructuralError("rank-deficient design in the constrained basis");
    }
    const Eigen::VectorXd coef = qr.solve(yw);
    LsFit fit;
    fit.fitted = X * coef;
    fit.sse = (sqrt_w.array() * (y - fit.fitted).array()).matrix().squaredNorm();
    return fit;
}

Eigen::VectorXd grid_theta(const SlopeGrid& g) {
    Eigen::VectorXd y(g.cells.size());
    for (std::size_t i = 0; i < g.cells.size(); ++i) y[static_cast<Eigen::Index>(i)] = g.cells[i].theta;
    return y;
}

double weighted_ss_total(const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
    const double wsum = w.sum();
    const double ybar = w.dot(y) / wsum;
    return (w.array() * (y.array() - ybar).square()).sum();
}

double sse_of_terms(const SlopeGrid& g, const Eigen::VectorXd& y, const Eigen::VectorXd& sqrt_w,
                    const Blocks& blocks) {
    return weighted_ls(build_design(g, blocks), y, sqrt_w).sse;
}

}  // namespace

VarianceTable variance_decomposition(const SlopeGrid& grid, const std::vector<Term>& order, SsType type) {
    grid.require_complete();
    if (order.empty()) throw ConfigError("variance_decomposition: empty term order");

    const Eigen::VectorXd y = grid_theta(grid);
    const Eigen::VectorXd w = Eigen::VectorXd::Ones(y.size());
    const double ss_tot = weighted_ss_total(y, w);

    VarianceTable table;
    table.type = type;
    table.order = order;
    table.ss_total = ss_tot;

    const double sse_full = sse_of_terms(grid, y, w, blocks_of(order));
    table.ss_residual = sse_full;
    table.total_r2 = 1.0 - sse_full / ss_tot;

    if (type == SsType::I) {
        std::vector<Term> sofar;
        double prev_r2 = 0.0;
        for (Term t : order) {
            sofar.push_back(t);
            const double r2 = 1.0 - sse_of_terms(grid, y, w, blocks_of(sofar)) / ss_tot;
            table.marginal_r2.push_back(r2 - prev_r2);
            prev_r2 = r2;
        }
    } else {
        // Factor sets: mu={T}, alpha={D}, beta={D,T}, gamma={D,S}.
        auto contains = [](Term outer, Term inner) {
            if (outer == inner) return true;
            if (outer == Term::beta) return inner == Term::mu || inner == Term::alpha;
            if (outer == Term::gamma) return inner == Term::alpha;
            return false;
        };
        for (Term t : order) {
            std::vector<Term> base;
            for (Term o : order) {
                if (o == t) continue;
                if (type == SsType::II && contains(o, t)) continue;  // marginality
                base.push_back(o);
            }
            std::vector<Term> with = base;
            with.push_back(t);
            const double ss = sse_of_terms(grid, y, w, blocks_of(base)) - sse_of_terms(grid, y, w, blocks_of(with));
            table.marginal_r2.push_back(ss / ss_tot);
        }
    }

    double run = 0.0;
    for (double m : table.marginal_r2) {
        run += m;
        table.cumulative_r2.push_back(run);
    }
    return table;
}

std::pair<ComponentSet, VarianceTable> fit_wls(const SlopeGrid& grid) {
    grid.require_complete();
    Eigen::VectorXd w(grid.cells.size());
    for (std::size_t i = 0; i < grid.cells.size(); ++i) {
        const double se = grid.cells[i].se;
        if (!(se > 0.0)) throw NumericalError("fit_wls: nonpositive standard error (degenerate weight)");
        w[static_cast<Eigen::Index>(i)] = 1.0 / (se * se);
    }
    const Eigen::VectorXd sqrt_w = w.array().sqrt();
    const Eigen::VectorXd y = grid_theta(grid);
    const double ss_tot = weighted_ss_total(y, w);

    const std::vector<Term> order = {Term::mu, Term::alpha, Term::beta, Term::gamma};
    const LsFit full = weighted_ls(build_design(grid, blocks_of(order)), y, sqrt_w);

    // The fitted surface lies in the model span, so the unweighted projection
    // recovers its unique constrained decomposition.
    std::vector<double> fitted(full.fitted.data(), full.fitted.data() + full.fitted.size());
    ComponentSet comp = sequential_project(grid, fitted);
    for (std::size_t i = 0; i < grid.cells.size(); ++i) {
        comp.residual[i] = y[static_cast<Eigen::Index>(i)] - fitted[i];
    }

    VarianceTable table;
    table.type = SsType::I;
    table.weighted = true;
    table.order = order;
    table.ss_total = ss_tot;
    table.ss_residual = full.sse;
    table.total_r2 = 1.0 - full.sse / ss_tot;
    std::vector<Term> sofar;
    double prev = 0.0;
    for (Term t : order) {
        sofar.push_back(t);
        const double r2 = 1.0 - sse_of_terms(grid, y, sqrt_w, blocks_of(sofar)) / ss_tot;
        table.marginal_r2.push_back(r2 - prev);
        prev = r2;
    }
    double run = 0.0;
    for (double m : table.marginal_r2) {
        run += m;
        table.cumulative_r2.push_back(run);
    }
    return {std::move(comp), std::move(table)};
}

// --- F tests -----------------------------------------------------------------

FTable make_f_table(const std::vector<std::pair<std::string, std::pair<double, double>>>& components,
                    double residual_ss, double residual_df) {
    if (!(residual_df > 0.0)) throw NumericalError("f-test: nonpositive residual df");
    FTable table;
    table.residual_ss = residual_ss;
    table.residual_df = residual_df;
    table.residual_ms = residual_ss / residual_df;
    for (const auto& [name, ssdf] : components) {
        const auto [ss, df] = ssdf;
        FRow row;
        row.source = name;
        row.ss = ss;
        row.df = df;
        row.ms = df > 0.0 ? ss / df : 0.0;
        if (ss <= 0.0) {
            row.f = 0.0;
            row.p_value = 1.0;
            row.partial_eta2 = 0.0;
        } else {
            row.f = row.ms / table.residual_ms;
            row.p_value = f_upper_tail(df, residual_df, row.f);
            row.partial_eta2 = ss / (ss + residual_ss);
        }
        table.components.push_back(std::move(row));
    }
    return table;
}

FTable f_tests(const SlopeGrid& grid) {
    const auto table = variance_decomposition(grid);
    const int D = grid.D(), T = grid.T, S = grid.S;
    const double df_mu = T - 1;
    const double df_alpha = D - 1;
    const double df_beta = static_cast<double>((D - 1) * (T - 1));
    const double df_gamma = static_cast<double>(D * (S - 1));
    const double df_res = static_cast<double>(D * T * S) - 1.0 - (df_mu + df_alpha + df_beta + df_gamma);
    const double ss_tot = table.ss_total;
    return make_f_table(
        {
            {"mu", {table.marginal_r2[0] * ss_tot, df_mu}},
            {"alpha", {table.marginal_r2[1] * ss_tot, df_alpha}},
            {"beta", {table.marginal_r2[2] * ss_tot, df_beta}},
            {"gamma", {table.marginal_r2[3] * ss_tot, df_gamma}},
        },
        table.ss_residual, df_res);
}

// --- scale effects ------------------------------------------------------------

ScaleEffect scale_effect_within(const SlopeGrid& grid, const std::string& domain) {
    const int d = grid.domain_index(domain);
    if (d < 0) throw DataError("scale_effect: unknown domain " + domain);
    ScaleEffect eff;
    eff.domain = domain;
    eff.size_lo = 0;
    eff.size_hi = grid.S - 1;
    eff.variant = ScaleVariant::within_horizon;
    double sum = 0.0;
    for (int t = 0; t < grid.T; ++t) {
        const auto& lo = grid.at(d, t, eff.size_lo);
        const auto& hi = grid.at(d, t, eff.size_hi);
        if (!lo.present || !hi.present) {
            std::ostringstream os;
            os << "scale_effect: missing cell (" << domain << ", t" << t << ", s"
               << (lo.present ? eff.size_hi : eff.size_lo) << ")";
            throw StructuralError(os.str());
        }
        const double diff = hi.theta - lo.theta;
        eff.per_horizon_diffs.push_back(diff);
        sum += diff;
    }
    eff.delta = sum / static_cast<double>(grid.T);
    return eff;
}

ScaleEffect scale_effect_aggregate(const std::map<CellKey, CellData>& cells, const std::string& domain,
                                   const FitConfig& cfg, int size_lo, int size_hi) {
    std::vector<Observation> lo, hi;
    for (const auto& [key, cell] : cells) {
        if (key.domain != domain) continue;
        if (key.size_bin == size_lo) lo.insert(lo.end(), cell.observations.begin(), cell.observations.end());
        if (key.size_bin == size_hi) hi.insert(hi.end(), cell.observations.begin(), cell.observations.end());
    }
    if (lo.empty() || hi.empty()) throw DataError("scale_effect aggregate: no data for domain " + domain);
    ScaleEffect eff;
    eff.domain = domain;
    eff.size_lo = size_lo;
    eff.size_hi = size_hi;
    eff.variant = ScaleVariant::aggregate;
    eff.delta = pooled_slope(hi, cfg).slope - pooled_slope(lo, cfg).slope;
    return eff;
}

// --- size x horizon check -------------------------------------------------

SizeHorizonCheck size_horizon_check(const SlopeGrid& grid, const std::map<CellKey, CellData>& cells) {
    grid.require_complete();
    const Eigen::VectorXd y = grid_theta(grid);
    const Eigen::VectorXd w = Eigen::VectorXd::Ones(y.size());
    const double ss_tot = weighted_ss_total(y, w);

    Blocks base = blocks_of({Term::mu, Term::alpha, Term::beta, Term::gamma});
    Blocks extended = base;
    extended.size_horizon = true;

    const double r2_base = 1.0 - sse_of_terms(grid, y, w, base) / ss_tot;
    const double r2_ext = 1.0 - sse_of_terms(grid, y, w, extended) / ss_tot;

    // gamma's increment with the shared interaction already in the model
    Blocks no_gamma = extended;
    no_gamma.gamma = false;
    const double r2_no_gamma = 1.0 - sse_of_terms(grid, y, w, no_gamma) / ss_tot;

    SizeHorizonCheck check;
    check.added_r2 = r2_ext - r2_base;
    check.gamma_r2_with_interaction = r2_ext - r2_no_gamma;
    check.domains = grid.domains;
    check.median_tau_hours.assign(grid.domains.size(), std::vector<double>(grid.S, 0.0));
    for (int d = 0; d < grid.D(); ++d) {
        for (int s = 0; s < grid.S; ++s) {
            std::vector<double> taus;
            for (const auto& [key, cell] : cells) {
                if (key.domain != grid.domains[d] || key.size_bin != s) continue;
                for (const auto& o : cell.observations) taus.push_back(o.tau_hours);
            }
            check.median_tau_hours[d][s] = taus.empty() ? 0.0 : median(std::move(taus));
        }
    }
    return check;
}

// --- cross-platform deltas ---------------------------------------------------

PlatformDelta platform_delta(const SlopeGrid& grid_a, const SlopeGrid& grid_b, const std::set<int>& reliable_bins) {
    if (grid_a.S != 1 || grid_b.S != 1) {
        throw StructuralError("platform_delta expects pooled grids with a single size bin");
    }
    if (grid_a.T != grid_b.T) throw StructuralError("platform_delta: horizon bin counts differ");

    std::vector<std::string> shared;
    for (const auto& d : grid_a.domains) {
        if (grid_b.domain_index(d) >= 0) shared.push_back(d);
    }
    if (shared.empty()) throw DataError("platform_delta: no overlapping domains");

    PlatformDelta out;
    for (const auto& label : shared) {
        const int da = grid_a.domain_index(label);
        const int db = grid_b.domain_index(label);
        double wsum = 0.0, sa = 0.0, sb = 0.0, sd = 0.0;
        for (int t = 0; t < grid_a.T; ++t) {
            const auto& ca = grid_a.at(da, t, 0);
            const auto& cb = grid_b.at(db, t, 0);
            if (!ca.present || !cb.present) continue;
            PlatformDelta::Row row;
            row.domain = label;
            row.horizon_bin = t;
            row.slope_a = ca.theta;
            row.slope_b = cb.theta;
            row.delta = cb.theta - ca.theta;
            row.reliable = reliable_bins.count(t) > 0;
            out.rows.push_back(row);
            if (row.reliable) {
                const double wt = static_cast<double>(cb.n);
                wsum += wt;
                sa += wt * row.slope_a;
                sb += wt * row.slope_b;
                sd += wt * row.delta;
            }
        }
        if (wsum > 0.0) {
            out.means.push_back({label, sa / wsum, sb / wsum, sd / wsum});
        }
    }
    return out;
}

}  // namespace pmcal
