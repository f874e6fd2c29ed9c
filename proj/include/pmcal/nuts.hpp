#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace pmcal::bayes {

// Differentiable unnormalized log density.
struct Target {
    virtual ~Target() = default;
    virtual int dim() const = 0;
    virtual double logp_grad(std::span<const double> position, std::span<double> grad) const = 0;
};

struct NutsConfig {
    int chains = 4;
    int warmup = 2000;
    int keep = 2000;
    double target_accept = 0.8;
    int max_depth = 10;
    std::uint64_t seed = 0;
    double init_radius = 0.5;  // uniform initialization box half-width
    int threads = 1;
    double divergence_threshold = 1000.0;  // energy error
    double max_divergent_fraction = 0.05;  // post-warmup warning level
};

struct IterStats {
    double accept_stat = 0.0;
    int tree_depth = 0;
    int n_leapfrog = 0;
    bool divergent = false;
    double energy = 0.0;
};

// Dynamic-trajectory HMC: multinomial state selection over the trajectory,
// U-turn termination, dual-averaging step size, and diagonal mass matrix
// adaptation in doubling warmup windows. Chains draw from seed-split RNG
// streams so results are identical under any thread count.
struct NutsResult {
    std::vector<std::vector<std::vector<double>>> draws;  // [chain][iter][dim]
    std::vector<std::vector<IterStats>> stats;            // [chain][iter]
    std::vector<double> step_size;                        // per chain, adapted
    std::vector<std::vector<double>> inv_mass;            // per chain diagonal
    int divergence_count = 0;  // post-warmup total
    bool divergence_warning = false;
};

NutsResult nuts_sample(const Target& target, const NutsConfig& cfg);

}  // namespace pmcal::bayes
