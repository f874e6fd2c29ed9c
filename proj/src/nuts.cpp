#include "pmcal/nuts.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>
#include <vector>

#include "pmcal/errors.hpp"
#include "pmcal/rng.hpp"

namespace pmcal::bayes {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct State {
    std::vector<double> q, p, grad;
    double logp = -kInf;
};

double log_add(double a, double b) {
    if (a == -kInf) return b;
    if (b == -kInf) return a;
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double kinetic(const std::vector<double>& p, const std::vector<double>& inv_mass) {
    double k = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) k += inv_mass[i] * p[i] * p[i];
    return 0.5 * k;
}

// Model evaluation that never throws on wild trajectories: non-finite
// coordinates or a model failure read as -inf log density.
double safe_logp(const Target& target, const std::vector<double>& q, std::vector<double>& grad) {
    for (double v : q) {
        if (!std::isfinite(v)) {
            std::fill(grad.begin(), grad.end(), 0.0);
            return -kInf;
        }
    }
    try {
        const double lp = target.logp_grad(q, grad);
        return std::isnan(lp) ? -kInf : lp;
    } catch (const NumericalError&) {
        std::fill(grad.begin(), grad.end(), 0.0);
        return -kInf;
    }
}

void leapfrog(const Target& target, State& z, double step, const std::vector<double>& inv_mass) {
    for (std::size_t i = 0; i < z.q.size(); ++i) z.p[i] += 0.5 * step * z.grad[i];
    for (std::size_t i = 0; i < z.q.size(); ++i) z.q[i] += step * inv_mass[i] * z.p[i];
    z.logp = safe_logp(target, z.q, z.grad);
    for (std::size_t i = 0; i < z.q.size(); ++i) z.p[i] += 0.5 * step * z.grad[i];
}

double hamiltonian(const State& z, const std::vector<double>& inv_mass) {
    if (z.logp == -kInf) return kInf;
    const double h = -z.logp + kinetic(z.p, inv_mass);
    return std::isnan(h) ? kInf : h;
}

bool uturn(const State& minus, const State& plus, const std::vector<double>& inv_mass) {
    double fwd = 0.0, bwd = 0.0;
    for (std::size_t i = 0; i < minus.q.size(); ++i) {
        const double dq = plus.q[i] - minus.q[i];
        bwd += dq * inv_mass[i] * minus.p[i];
        fwd += dq * inv_mass[i] * plus.p[i];
    }
    return bwd <= 0.0 || fwd <= 0.0;
}

struct Tree {
    State minus, plus;
    std::vector<double> sample_q;
    double sample_h = kInf;
    double lsw = -kInf;  // log sum of exp(H0 - H) over the subtree
    double sum_metro = 0.0;
    int n_leapfrog = 0;
    bool divergent = false;
    bool turning = false;
};

Tree build_tree(const Target& target, Rng& rng, int depth, const State& from, int dir, double h0, double step,
                const std::vector<double>& inv_mass, double divergence_threshold) {
    if (depth == 0) {
        Tree t;
        State z = from;
        leapfrog(target, z, dir * step, inv_mass);
        const double h = hamiltonian(z, inv_mass);
        const double dh = h - h0;
        t.sample_q = z.q;
        t.sample_h = h;
        t.minus = z;
        t.plus = std::move(z);
        t.n_leapfrog = 1;
        t.divergent = !(dh <= divergence_threshold);
        t.lsw = -dh;
        t.sum_metro = dh > 0.0 ? std::exp(-dh) : 1.0;
        return t;
    }

    Tree first = build_tree(target, rng, depth - 1, from, dir, h0, step, inv_mass, divergence_threshold);
    if (first.divergent || first.turning) return first;

    const State& edge = dir > 0 ? first.plus : first.minus;
    Tree second = build_tree(target, rng, depth - 1, edge, dir, h0, step, inv_mass, divergence_threshold);

    Tree merged;
    merged.n_leapfrog = first.n_leapfrog + second.n_leapfrog;
    merged.sum_metro = first.sum_metro + second.sum_metro;
    merged.divergent = second.divergent;
    merged.turning = second.turning;
    if (merged.divergent || merged.turning) return merged;

    merged.minus = dir > 0 ? std::move(first.minus) : std::move(second.minus);
    merged.plus = dir > 0 ? std::move(second.plus) : std::move(first.plus);
    merged.lsw = log_add(first.lsw, second.lsw);
    // multinomial choice between the two halves
    if (rng.uniform() < std::exp(second.lsw - merged.lsw)) {
        merged.sample_q = std::move(second.sample_q);
        merged.sample_h = second.sample_h;
    } else {
        merged.sample_q = std::move(first.sample_q);
        merged.sample_h = first.sample_h;
    }
    merged.turning = uturn(merged.minus, merged.plus, inv_mass);
    return merged;
}

struct Transition {
    IterStats stats;
};

Transition transition(const Target& target, Rng& rng, State& z, double step, const std::vector<double>& inv_mass,
                      int max_depth, double divergence_threshold) {
    for (std::size_t i = 0; i < z.p.size(); ++i) z.p[i] = rng.normal() / std::sqrt(inv_mass[i]);
    const double h0 = hamiltonian(z, inv_mass);

    State minus = z, plus = z;
    std::vector<double> sample_q = z.q;
    double sample_h = h0;
    double lsw = 0.0;
    double sum_metro = 0.0;
    int n_leapfrog = 0;
    bool divergent = false;
    int depth = 0;

    while (depth < max_depth) {
        const int dir = rng.bernoulli(0.5) ? 1 : -1;
        const State& edge = dir > 0 ? plus : minus;
        Tree t = build_tree(target, rng, depth, edge, dir, h0, step, inv_mass, divergence_threshold);
        n_leapfrog += t.n_leapfrog;
        sum_metro += t.sum_metro;
        if (t.divergent) {
            divergent = true;
            break;
        }
        if (t.turning) break;

        // biased progressive sampling toward the fresh subtree
        if (rng.uniform() < std::exp(t.lsw - lsw)) {
            sample_q = t.sample_q;
            sample_h = t.sample_h;
        }
        lsw = log_add(lsw, t.lsw);
        if (dir > 0) plus = std::move(t.plus);
        else minus = std::move(t.minus);
        ++depth;
        if (uturn(minus, plus, inv_mass)) break;
    }

    z.q = std::move(sample_q);
    z.logp = safe_logp(target, z.q, z.grad);

    Transition out;
    out.stats.accept_stat = n_leapfrog > 0 ? sum_metro / n_leapfrog : 0.0;
    out.stats.tree_depth = depth;
    out.stats.n_leapfrog = n_leapfrog;
    out.stats.divergent = divergent;
    out.stats.energy = sample_h;
    return out;
}

double find_reasonable_step(const Target& target, Rng& rng, const State& z0, const std::vector<double>& inv_mass) {
    double step = 1.0;
    State z = z0;
    for (std::size_t i = 0; i < z.p.size(); ++i) z.p[i] = rng.normal() / std::sqrt(inv_mass[i]);
    const double h0 = hamiltonian(z, inv_mass);

    auto accept_prob = [&](double eps) {
        State trial = z;
        leapfrog(target, trial, eps, inv_mass);
        const double h1 = hamiltonian(trial, inv_mass);
        return std::exp(h0 - h1);  // may be 0 or inf; handled by caller
    };

    double a = accept_prob(step);
    int guard = 0;
    while ((std::isnan(a) || a == 0.0) && guard++ < 60) {
        step *= 0.5;
        a = accept_prob(step);
    }
    const double dir = a > 0.5 ? 1.0 : -1.0;
    guard = 0;
    while (guard++ < 100) {
        if (dir > 0 && !(a > 0.5)) break;
        if (dir < 0 && !(a < 0.5)) break;
        step *= dir > 0 ? 2.0 : 0.5;
        if (step > 1e7 || step < 1e-10) break;
        a = accept_prob(step);
    }
    if (!(step > 0.0) || !std::isfinite(step)) throw NumericalError("step size search failed");
    return step;
}

// Nesterov dual averaging on log(step), Hoffman-Gelman constants.
struct DualAveraging {
    double mu = 0.0;
    double log_step = 0.0;
    double log_step_bar = 0.0;
    double h_bar = 0.0;
    int m = 0;
    static constexpr double gamma = 0.05, t0 = 10.0, kappa = 0.75;

    void restart(double step) {
        mu = std::log(10.0 * step);
        log_step = std::log(step);
        log_step_bar = 0.0;
        h_bar = 0.0;
        m = 0;
    }
    double update(double accept, double target_accept) {
        ++m;
        const double eta = 1.0 / (m + t0);
        h_bar = (1.0 - eta) * h_bar + eta * (target_accept - std::min(accept, 1.0));
        log_step = mu - std::sqrt(static_cast<double>(m)) / gamma * h_bar;
        const double x = std::pow(m, -kappa);
        log_step_bar = x * log_step + (1.0 - x) * log_step_bar;
        return std::exp(log_step);
    }
    double final_step() const { return std::exp(log_step_bar); }
};

struct Welford {
    std::vector<double> mean, m2;
    long n = 0;
    void reset(std::size_t d) {
        mean.assign(d, 0.0);
        m2.assign(d, 0.0);
        n = 0;
    }
    void add(const std::vector<double>& x) {
        ++n;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double d = x[i] - mean[i];
            mean[i] += d / static_cast<double>(n);
            m2[i] += d * (x[i] - mean[i]);
        }
    }
    // Regularized variance estimate toward unit scale.
    std::vector<double> regularized_variance() const {
        std::vector<double> v(mean.size(), 1.0);
        if (n < 2) return v;
        const double w = static_cast<double>(n) / (n + 5.0);
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = w * (m2[i] / static_cast<double>(n - 1)) + 1e-3 * (1.0 - w);
        }
        return v;
    }
};

std::vector<int> mass_window_ends(int warmup, int& init_buffer, int& term_buffer) {
    init_buffer = 75;
    term_buffer = 50;
    int base_window = 25;
    if (init_buffer + term_buffer + base_window > warmup) {
        init_buffer = static_cast<int>(0.15 * warmup);
        term_buffer = static_cast<int>(0.10 * warmup);
        base_window = warmup - init_buffer - term_buffer;
    }
    std::vector<int> ends;
    if (base_window <= 0) return ends;
    int start = init_buffer;
    int size = base_window;
    const int last = warmup - term_buffer;
    while (start < last) {
        int end = start + size;
        if (end + 2 * size > last) end = last;  // absorb the remainder
        ends.push_back(end);
        start = end;
        size *= 2;
    }
    return ends;
}

void run_chain(const Target& target, const NutsConfig& cfg, int chain, std::vector<std::vector<double>>& draws,
               std::vector<IterStats>& stats, double& final_step, std::vector<double>& final_inv_mass) {
    const int dim = target.dim();
    Rng rng(split_seed(cfg.seed, static_cast<std::uint64_t>(chain)));

    State z;
    z.q.resize(dim);
    z.p.assign(dim, 0.0);
    z.grad.assign(dim, 0.0);
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
        for (auto& qi : z.q) qi = rng.uniform(-cfg.init_radius, cfg.init_radius);
        z.logp = safe_logp(target, z.q, z.grad);
        ok = std::isfinite(z.logp);
    }
    if (!ok) throw NumericalError("chain initialization: log density not finite after 100 draws");

    std::vector<double> inv_mass(dim, 1.0);
    double step = find_reasonable_step(target, rng, z, inv_mass);
    DualAveraging da;
    da.restart(step);

    int init_buffer = 0, term_buffer = 0;
    const std::vector<int> window_ends = mass_window_ends(cfg.warmup, init_buffer, term_buffer);
    std::size_t next_window = 0;
    Welford acc;
    acc.reset(dim);

    for (int m = 0; m < cfg.warmup; ++m) {
        const Transition tr = transition(target, rng, z, step, inv_mass, cfg.max_depth, cfg.divergence_threshold);
        step = da.update(tr.stats.accept_stat, cfg.target_accept);
        const bool in_window = m >= init_buffer && m < cfg.warmup - term_buffer;
        if (in_window) acc.add(z.q);
        if (next_window < window_ends.size() && m + 1 == window_ends[next_window]) {
            inv_mass = acc.regularized_variance();
            acc.reset(dim);
            ++next_window;
            step = find_reasonable_step(target, rng, z, inv_mass);
            da.restart(step);
        }
    }
    if (cfg.warmup > 0) step = da.final_step();

    draws.clear();
    draws.reserve(cfg.keep);
    stats.clear();
    stats.reserve(cfg.keep);
    for (int m = 0; m < cfg.keep; ++m) {
        const Transition tr = transition(target, rng, z, step, inv_mass, cfg.max_depth, cfg.divergence_threshold);
        draws.push_back(z.q);
        stats.push_back(tr.stats);
    }
    final_step = step;
    final_inv_mass = inv_mass;
}

}  // namespace

NutsResult nuts_sample(const Target& target, const NutsConfig& cfg) {
    if (cfg.chains < 1) throw ConfigError("nuts: chains must be >= 1");
    if (cfg.keep < 1) throw ConfigError("nuts: keep must be >= 1");

    NutsResult result;
    result.draws.resize(cfg.chains);
    result.stats.resize(cfg.chains);
    result.step_size.resize(cfg.chains);
    result.inv_mass.resize(cfg.chains);

    std::vector<std::exception_ptr> errors(cfg.chains);
    auto run = [&](int c) {
        try {
            run_chain(target, cfg, c, result.draws[c], result.stats[c], result.step_size[c], result.inv_mass[c]);
        } catch (...) {
            errors[c] = std::current_exception();
        }
    };

    const int threads = std::max(1, std::min(cfg.threads, cfg.chains));
    if (threads == 1) {
        for (int c = 0; c < cfg.chains; ++c) run(c);
    } else {
        std::vector<std::thread> pool;
        for (int c = 0; c < cfg.chains; ++c) pool.emplace_back(run, c);
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    for (const auto& chain_stats : result.stats) {
        for (const auto& s : chain_stats) result.divergence_count += s.divergent ? 1 : 0;
    }
    const double total = static_cast<double>(cfg.chains) * cfg.keep;
    result.divergence_warning = result.divergence_count > cfg.max_divergent_fraction * total;
    return result;
}

}  // namespace pmcal::bayes
