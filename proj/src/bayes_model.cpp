#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "pmcal/bayes.hpp"
#include "pmcal/errors.hpp"

namespace pmcal::bayes {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Orthonormal sum-to-zero basis (Helmert columns): K levels, K-1 columns.
// Standard-normal raw coordinates then give an isotropic normal on the
// constrained subspace.
double helmert(int i, int k, int K) {
    (void)K;
    const double denom = std::sqrt((k + 1.0) * (k + 2.0));
    if (i <= k) return 1.0 / denom;
    if (i == k + 1) return -(k + 1.0) / denom;
    return 0.0;
}

}  // namespace

ModelSpec ModelSpec::defaults_for(const BinningConfig& bins) {
    ModelSpec spec;
    spec.representative_log_size = bins.representative_log_size;
    return spec;
}

HierarchicalModel::HierarchicalModel(const SlopeGrid& grid, ModelSpec spec)
    : grid_(grid), spec_(std::move(spec)), D_(grid.D()), T_(grid.T), S_(grid.S) {
    if (spec_.include_likelihood) grid_.require_complete();
    if (spec_.include_alpha && D_ < 2) throw ConfigError("alpha block requires at least 2 domains");
    if (spec_.include_beta && (D_ < 2 || T_ < 2)) throw ConfigError("beta block requires D,T >= 2");

    if (spec_.representative_log_size.empty()) {
        spec_.representative_log_size = BinningConfig{}.representative_log_size;
    }
    if (static_cast<int>(spec_.representative_log_size.size()) < S_) {
        throw ConfigError("representative_log_size shorter than the size-bin count");
    }
    double mean_log = 0.0;
    for (int s = 0; s < S_; ++s) mean_log += spec_.representative_log_size[s];
    mean_log /= S_;
    s_tilde_.resize(S_);
    for (int s = 0; s < S_; ++s) s_tilde_[s] = spec_.representative_log_size[s] - mean_log;

    int off = 0;
    u_mu_ = off;
    off += T_;
    if (spec_.include_alpha) {
        u_alpha_ = off;
        n_alpha_raw_ = D_ - 1;
        off += n_alpha_raw_;
    }
    if (spec_.include_beta) {
        u_beta_ = off;
        n_beta_raw_ = spec_.beta_doubly_centred ? (D_ - 1) * (T_ - 1) : (D_ - 1) * T_;
        off += n_beta_raw_;
    }
    if (spec_.include_delta) {
        u_delta_ = off;
        off += D_;
    }
    if (spec_.include_alpha) u_lsig_alpha_ = off++;
    if (spec_.include_beta) u_lsig_beta_ = off++;
    if (spec_.include_delta) u_lsig_delta_ = off++;
    if (!spec_.fixed_sigma) u_lsig_ = off++;
    dim_ = off;

    int c = 0;
    c_mu_ = c;
    for (int t = 0; t < T_; ++t) names_.push_back("mu." + std::to_string(t));
    c += T_;
    if (spec_.include_alpha) {
        c_alpha_ = c;
        for (const auto& d : grid_.domains) names_.push_back("alpha." + d);
        c += D_;
    }
    if (spec_.include_beta) {
        c_beta_ = c;
        for (const auto& d : grid_.domains)
            for (int t = 0; t < T_; ++t) names_.push_back("beta." + d + "." + std::to_string(t));
        c += D_ * T_;
    }
    if (spec_.include_delta) {
        c_delta_ = c;
        for (const auto& d : grid_.domains) names_.push_back("delta." + d);
        c += D_;
    }
    if (spec_.include_alpha) {
        c_sigma_alpha_ = c++;
        names_.push_back("sigma_alpha");
    }
    if (spec_.include_beta) {
        c_sigma_beta_ = c++;
        names_.push_back("sigma_beta");
    }
    if (spec_.include_delta) {
        c_sigma_delta_ = c++;
        names_.push_back("sigma_delta");
    }
    if (!spec_.fixed_sigma) {
        c_sigma_ = c++;
        names_.push_back("sigma");
    }
}

std::vector<double> HierarchicalModel::constrain(std::span<const double> q) const {
    std::vector<double> out(names_.size(), 0.0);
    for (int t = 0; t < T_; ++t) out[c_mu_ + t] = q[u_mu_ + t];

    if (spec_.include_alpha) {
        const double sig = std::exp(q[u_lsig_alpha_]);
        for (int d = 0; d < D_; ++d) {
            double v = 0.0;
            for (int k = 0; k < n_alpha_raw_; ++k) v += helmert(d, k, D_) * q[u_alpha_ + k];
            out[c_alpha_ + d] = sig * v;
        }
        out[c_sigma_alpha_] = sig;
    }
    if (spec_.include_beta) {
        const double sig = std::exp(q[u_lsig_beta_]);
        for (int d = 0; d < D_; ++d) {
            for (int t = 0; t < T_; ++t) {
                double v = 0.0;
                if (spec_.beta_doubly_centred) {
                    for (int k = 0; k < D_ - 1; ++k) {
                        const double hd = helmert(d, k, D_);
                        if (hd == 0.0) continue;
                        for (int l = 0; l < T_ - 1; ++l) {
                            v += hd * helmert(t, l, T_) * q[u_beta_ + k * (T_ - 1) + l];
                        }
                    }
                } else {
                    for (int k = 0; k < D_ - 1; ++k) {
                        v += helmert(d, k, D_) * q[u_beta_ + k * T_ + t];
                    }
                }
                out[c_beta_ + d * T_ + t] = sig * v;
            }
        }
        out[c_sigma_beta_] = sig;
    }
    if (spec_.include_delta) {
        const double sig = std::exp(q[u_lsig_delta_]);
        for (int d = 0; d < D_; ++d) out[c_delta_ + d] = sig * q[u_delta_ + d];
        out[c_sigma_delta_] = sig;
    }
    if (!spec_.fixed_sigma) out[c_sigma_] = std::exp(q[u_lsig_]);
    return out;
}

double HierarchicalModel::cell_mean(std::span<const double> constrained, int d, int t, int s) const {
    double m = constrained[c_mu_ + t];
    if (spec_.include_alpha) m += constrained[c_alpha_ + d];
    if (spec_.include_beta) m += constrained[c_beta_ + d * T_ + t];
    if (spec_.include_delta) m += constrained[c_delta_ + d] * s_tilde_[s];
    return m;
}

double HierarchicalModel::sigma_of(std::span<const double> constrained) const {
    if (spec_.fixed_sigma) return *spec_.fixed_sigma;
    return constrained[c_sigma_];
}

double HierarchicalModel::logp_grad(std::span<const double> q, std::span<double> grad) const {
    if (static_cast<int>(q.size()) != dim_ || static_cast<int>(grad.size()) != dim_) {
        throw ConfigError("logp_grad: dimension mismatch");
    }
    for (double v : q) {
        if (!std::isfinite(v)) throw NumericalError("logp_grad: non-finite input coordinate");
    }
    std::fill(grad.begin(), grad.end(), 0.0);

    const double neg_inf = -std::numeric_limits<double>::infinity();
    double logp = 0.0;

    const double sig_alpha = spec_.include_alpha ? std::exp(q[u_lsig_alpha_]) : 0.0;
    const double sig_beta = spec_.include_beta ? std::exp(q[u_lsig_beta_]) : 0.0;
    const double sig_delta = spec_.include_delta ? std::exp(q[u_lsig_delta_]) : 0.0;
    const double sigma = spec_.fixed_sigma ? *spec_.fixed_sigma : std::exp(q[u_lsig_]);
    if (!std::isfinite(sigma) || (spec_.include_alpha && !std::isfinite(sig_alpha)) ||
        (spec_.include_beta && !std::isfinite(sig_beta)) || (spec_.include_delta && !std::isfinite(sig_delta))) {
        return neg_inf;
    }

    // constrained effects
    std::vector<double> alpha(D_, 0.0), delta(D_, 0.0);
    std::vector<double> beta(static_cast<std::size_t>(D_) * T_, 0.0);
    if (spec_.include_alpha) {
        for (int d = 0; d < D_; ++d) {
            double v = 0.0;
            for (int k = 0; k < n_alpha_raw_; ++k) v += helmert(d, k, D_) * q[u_alpha_ + k];
            alpha[d] = sig_alpha * v;
        }
    }
    if (spec_.include_beta) {
        for (int d = 0; d < D_; ++d) {
            for (int t = 0; t < T_; ++t) {
                double v = 0.0;
                if (spec_.beta_doubly_centred) {
                    for (int k = 0; k < D_ - 1; ++k) {
                        const double hd = helmert(d, k, D_);
                        if (hd == 0.0) continue;
                        for (int l = 0; l < T_ - 1; ++l) v += hd * helmert(t, l, T_) * q[u_beta_ + k * (T_ - 1) + l];
                    }
                } else {
                    for (int k = 0; k < D_ - 1; ++k) v += helmert(d, k, D_) * q[u_beta_ + k * T_ + t];
                }
                beta[d * T_ + t] = sig_beta * v;
            }
        }
    }
    if (spec_.include_delta) {
        for (int d = 0; d < D_; ++d) delta[d] = sig_delta * q[u_delta_ + d];
    }

    // likelihood
    std::vector<double> g_alpha(D_, 0.0), g_delta(D_, 0.0);
    std::vector<double> g_beta(static_cast<std::size_t>(D_) * T_, 0.0);
    double dlog_sigma_lik = 0.0;
    if (spec_.include_likelihood) {
        const double inv_var = 1.0 / (sigma * sigma);
        for (int d = 0; d < D_; ++d) {
            for (int t = 0; t < T_; ++t) {
                for (int s = 0; s < S_; ++s) {
                    double m = q[u_mu_ + t];
                    if (spec_.include_alpha) m += alpha[d];
                    if (spec_.include_beta) m += beta[d * T_ + t];
                    if (spec_.include_delta) m += delta[d] * s_tilde_[s];
                    const double resid = grid_.at(d, t, s).theta - m;
                    logp += -0.5 * kLog2Pi - std::log(sigma) - 0.5 * resid * resid * inv_var;
                    const double r = resid * inv_var;
                    grad[u_mu_ + t] += r;
                    g_alpha[d] += r;
                    g_beta[d * T_ + t] += r;
                    g_delta[d] += r * s_tilde_[s];
                    dlog_sigma_lik += resid * resid * inv_var - 1.0;
                }
            }
        }
    }

    // mu prior
    const double inv_mu_var = 1.0 / (spec_.mu_prior_sd * spec_.mu_prior_sd);
    for (int t = 0; t < T_; ++t) {
        const double dev = q[u_mu_ + t] - spec_.mu_prior_mean;
        logp += -0.5 * kLog2Pi - std::log(spec_.mu_prior_sd) - 0.5 * dev * dev * inv_mu_var;
        grad[u_mu_ + t] -= dev * inv_mu_var;
    }

    auto raw_prior = [&](int off, int n) {
        for (int k = 0; k < n; ++k) {
            const double r = q[off + k];
            logp += -0.5 * kLog2Pi - 0.5 * r * r;
            grad[off + k] -= r;
        }
    };
    // half-Cauchy(hyper_scale) on sigma = exp(u), with the exp Jacobian
    auto scale_prior = [&](int off, double sigma_val) {
        const double ratio2 = (sigma_val / spec_.hyper_scale) * (sigma_val / spec_.hyper_scale);
        logp += std::log(2.0 / 3.14159265358979323846) - std::log(spec_.hyper_scale) - std::log1p(ratio2) +
                q[off];
        grad[off] += 1.0 - 2.0 * ratio2 / (1.0 + ratio2);
    };

    if (spec_.include_alpha) {
        raw_prior(u_alpha_, n_alpha_raw_);
        scale_prior(u_lsig_alpha_, sig_alpha);
        for (int k = 0; k < n_alpha_raw_; ++k) {
            double acc = 0.0;
            for (int d = 0; d < D_; ++d) acc += helmert(d, k, D_) * g_alpha[d];
            grad[u_alpha_ + k] += sig_alpha * acc;
        }
        double acc = 0.0;
        for (int d = 0; d < D_; ++d) acc += alpha[d] * g_alpha[d];
        grad[u_lsig_alpha_] += acc;
    }
    if (spec_.include_beta) {
        raw_prior(u_beta_, n_beta_raw_);
        scale_prior(u_lsig_beta_, sig_beta);
        if (spec_.beta_doubly_centred) {
            for (int k = 0; k < D_ - 1; ++k) {
                for (int l = 0; l < T_ - 1; ++l) {
                    double acc = 0.0;
                    for (int d = 0; d < D_; ++d) {
                        const double hd = helmert(d, k, D_);
                        if (hd == 0.0) continue;
                        for (int t = 0; t < T_; ++t) acc += hd * helmert(t, l, T_) * g_beta[d * T_ + t];
                    }
                    grad[u_beta_ + k * (T_ - 1) + l] += sig_beta * acc;
                }
            }
        } else {
            for (int k = 0; k < D_ - 1; ++k) {
                for (int t = 0; t < T_; ++t) {
                    double acc = 0.0;
                    for (int d = 0; d < D_; ++d) acc += helmert(d, k, D_) * g_beta[d * T_ + t];
                    grad[u_beta_ + k * T_ + t] += sig_beta * acc;
                }
            }
        }
        double acc = 0.0;
        for (int d = 0; d < D_; ++d)
            for (int t = 0; t < T_; ++t) acc += beta[d * T_ + t] * g_beta[d * T_ + t];
        grad[u_lsig_beta_] += acc;
    }
    if (spec_.include_delta) {
        raw_prior(u_delta_, D_);
        scale_prior(u_lsig_delta_, sig_delta);
        for (int d = 0; d < D_; ++d) grad[u_delta_ + d] += sig_delta * g_delta[d];
        double acc = 0.0;
        for (int d = 0; d < D_; ++d) acc += delta[d] * g_delta[d];
        grad[u_lsig_delta_] += acc;
    }
    if (!spec_.fixed_sigma) {
        scale_prior(u_lsig_, sigma);
        grad[u_lsig_] += dlog_sigma_lik;
    }

    return logp;
}

std::vector<std::vector<double>> PosteriorDraws::chains_for(std::size_t param) const {
    std::vector<std::vector<double>> out(draws.size());
    for (std::size_t c = 0; c < draws.size(); ++c) {
        out[c].reserve(draws[c].size());
        for (const auto& it : draws[c]) out[c].push_back(it[param]);
    }
    return out;
}

PosteriorDraws sample(const ModelSpec& spec, const SlopeGrid& grid, const SampleConfig& cfg) {
    HierarchicalModel model(grid, spec);
    NutsConfig nuts_cfg;
    nuts_cfg.chains = cfg.chains;
    nuts_cfg.warmup = cfg.warmup;
    nuts_cfg.keep = cfg.keep;
    nuts_cfg.target_accept = cfg.target_accept;
    nuts_cfg.max_depth = cfg.max_depth;
    nuts_cfg.seed = cfg.seed;
    nuts_cfg.threads = cfg.threads;
    const NutsResult raw = nuts_sample(model, nuts_cfg);

    PosteriorDraws out;
    out.names = model.parameter_names();
    out.stats = raw.stats;
    out.divergence_count = raw.divergence_count;
    out.divergence_warning = raw.divergence_warning;
    out.draws.resize(raw.draws.size());
    for (std::size_t c = 0; c < raw.draws.size(); ++c) {
        out.draws[c].reserve(raw.draws[c].size());
        for (const auto& q : raw.draws[c]) out.draws[c].push_back(model.constrain(q));
    }
    return out;
}

}  // namespace pmcal::bayes
