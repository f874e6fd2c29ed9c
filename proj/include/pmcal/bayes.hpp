#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pmcal/decomp.hpp"
#include "pmcal/nuts.hpp"

namespace pmcal::bayes {

// Hierarchical model for observed cell slopes:
//   theta_obs(d,t,s) ~ N(mu(t) + alpha_d + beta_d(t) + delta_d * s_tilde(s), sigma^2)
// with mu(t) ~ N(1, 0.5^2), non-centred standard-normal raws for the
// hierarchical effects, and half-Cauchy(1) hyperpriors on the four scales.
// alpha sums to zero; beta is doubly centred by default (a per-horizon
// single constraint is available by flag); delta is unconstrained.
struct ModelSpec {
    double mu_prior_mean = 1.0;
    double mu_prior_sd = 0.5;
    double hyper_scale = 1.0;
    // log representative trade size per size bin, centred internally
    std::vector<double> representative_log_size;
    bool beta_doubly_centred = true;

    // structure switches (full model by default)
    bool include_alpha = true;
    bool include_beta = true;
    bool include_delta = true;
    bool include_likelihood = true;
    std::optional<double> fixed_sigma;  // pin observation noise, drop its coordinate

    static ModelSpec defaults_for(const BinningConfig& bins = {});
};

class HierarchicalModel final : public Target {
public:
    HierarchicalModel(const SlopeGrid& grid, ModelSpec spec);

    int dim() const override { return dim_; }
    double logp_grad(std::span<const double> position, std::span<double> grad) const override;

    // Deterministic map from unconstrained coordinates to the constrained
    // parameter vector (mu, alpha, beta, delta, scales).
    std::vector<double> constrain(std::span<const double> position) const;
    const std::vector<std::string>& parameter_names() const { return names_; }
    int n_constrained() const { return static_cast<int>(names_.size()); }

    // offsets into the constrained vector; -1 when the block is absent
    int mu_offset() const { return c_mu_; }
    int alpha_offset() const { return c_alpha_; }
    int beta_offset() const { return c_beta_; }
    int delta_offset() const { return c_delta_; }
    int sigma_offset() const { return c_sigma_; }

    const SlopeGrid& grid() const { return grid_; }
    const ModelSpec& spec() const { return spec_; }
    const std::vector<double>& centred_log_sizes() const { return s_tilde_; }

    // Cell mean under one constrained draw; used by the predictive check.
    double cell_mean(std::span<const double> constrained, int d, int t, int s) const;
    double sigma_of(std::span<const double> constrained) const;

private:
    SlopeGrid grid_;
    ModelSpec spec_;
    std::vector<double> s_tilde_;
    int D_, T_, S_;

    // unconstrained layout
    int u_mu_ = -1, u_alpha_ = -1, u_beta_ = -1, u_delta_ = -1;
    int u_lsig_alpha_ = -1, u_lsig_beta_ = -1, u_lsig_delta_ = -1, u_lsig_ = -1;
    int n_alpha_raw_ = 0, n_beta_raw_ = 0;
    int dim_ = 0;

    // constrained layout
    int c_mu_ = -1, c_alpha_ = -1, c_beta_ = -1, c_delta_ = -1;
    int c_sigma_alpha_ = -1, c_sigma_beta_ = -1, c_sigma_delta_ = -1, c_sigma_ = -1;
    std::vector<std::string> names_;
};

struct PosteriorDraws {
    std::vector<std::string> names;
    std::vector<std::vector<std::vector<double>>> draws;  // [chain][iter][param]
    std::vector<std::vector<IterStats>> stats;            // [chain][iter]
    int divergence_count = 0;
    bool divergence_warning = false;

    std::size_t n_chains() const { return draws.size(); }
    std::size_t n_iters() const { return draws.empty() ? 0 : draws[0].size(); }
    std::size_t n_params() const { return names.size(); }
    // one parameter as [chain][iter]
    std::vector<std::vector<double>> chains_for(std::size_t param) const;
};

struct SampleConfig {
    int chains = 4;
    int warmup = 2000;
    int keep = 2000;
    double target_accept = 0.8;
    int max_depth = 10;
    std::uint64_t seed = 0;
    int threads = 1;
};

PosteriorDraws sample(const ModelSpec& spec, const SlopeGrid& grid, const SampleConfig& cfg);

// --- diagnostics ---------------------------------------------------------

// Rank-normalized split R-hat (max of bulk and tail-folded variants) and
// bulk effective sample size with Geyer initial-monotone truncation.
// Constant chains yield NaN.
double split_rhat(const std::vector<std::vector<double>>& chains);
double bulk_ess(const std::vector<std::vector<double>>& chains);

struct ParamDiagnostic {
    std::string name;
    double rhat = 0.0;
    double ess = 0.0;
};

struct Diagnostics {
    std::vector<ParamDiagnostic> params;
    double max_rhat = 0.0;
    double min_ess = 0.0;
    int divergence_count = 0;
};

Diagnostics diagnostics(const PosteriorDraws& draws);

// --- summaries -------------------------------------------------------------

struct ParamSummary {
    std::string name;
    double mean = 0.0;
    double sd = 0.0;
    double ci_lo = 0.0;  // 2.5%
    double ci_hi = 0.0;  // 97.5%
};

std::vector<ParamSummary> summarize(const PosteriorDraws& draws);

struct AlphaComparison {
    std::string domain;
    double post_mean = 0.0, sd = 0.0, ci_lo = 0.0, ci_hi = 0.0;
    double frequentist = 0.0;
};

// Bayesian domain intercepts against the frequentist decomposition.
std::vector<AlphaComparison> compare_alpha(const PosteriorDraws& draws, const SlopeGrid& grid,
                                           const ComponentSet& freq);

// --- posterior predictive ---------------------------------------------------

struct PPCCell {
    std::string domain;
    int horizon_bin = 0, size_bin = 0;
    double lower = 0.0, upper = 0.0, observed = 0.0;
    bool within = false;
    double ppc_p = 0.0;  // fraction of replicated slopes above observed
};

struct PPCResult {
    std::vector<PPCCell> cells;
    std::map<std::string, double> coverage_by_domain;
    double overall_coverage = 0.0;
};

PPCResult posterior_predictive(const PosteriorDraws& draws, const SlopeGrid& grid, const ModelSpec& spec,
                               std::uint64_t seed = 0);

}  // namespace pmcal::bayes
