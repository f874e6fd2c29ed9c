// pmcal — batch calibration analysis for prediction-market trade data.
// Subcommands compose through CSV artifacts; every run writes a manifest
// with the resolved configuration so artifacts are reproducible bit for bit.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pmcal/bayes.hpp"
#include "pmcal/calib.hpp"
#include "pmcal/csv.hpp"
#include "pmcal/decomp.hpp"
#include "pmcal/errors.hpp"
#include "pmcal/ingest.hpp"
#include "pmcal/resample.hpp"
#include "pmcal/stats.hpp"
#include "pmcal/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pmcal;

namespace {

constexpr const char* kVersion = "0.1.0";

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Tracks artifacts so a failed run leaves no partial outputs behind.
class Run {
public:
    Run(CLI::App* cmd, std::string out_dir) : cmd_(cmd), out_dir_(std::move(out_dir)) {
        fs::create_directories(out_dir_);
    }

    std::string path(const std::string& name) {
        artifacts_.push_back(name);
        return (fs::path(out_dir_) / name).string();
    }

    void write_manifest(std::uint64_t seed) {
        json manifest;
        manifest["command"] = cmd_->get_name();
        manifest["version"] = kVersion;
        manifest["seed"] = seed;
        json opts;
        for (const auto* opt : cmd_->get_options()) {
            if (opt->get_name().empty() || opt->count() == 0) continue;
            if (opt->get_name() == "--out" || opt->get_name() == "--config") continue;  // not content-affecting
            opts[opt->get_name()] = opt->as<std::string>();
        }
        manifest["options"] = opts;
        manifest["config_hash"] = hex64(fnv1a(cmd_->get_name() + "\n" + opts.dump()));
        manifest["artifacts"] = artifacts_;
        const std::string p = (fs::path(out_dir_) / "manifest.json").string();
        artifacts_.push_back("manifest.json");
        std::ofstream out(p, std::ios::binary);
        out << manifest.dump(2) << "\n";
        if (!out) throw DataError("cannot write manifest: " + p);
    }

    void discard() {
        for (const auto& name : artifacts_) {
            std::error_code ec;
            fs::remove(fs::path(out_dir_) / name, ec);
        }
    }

private:
    CLI::App* cmd_;
    std::string out_dir_;
    std::vector<std::string> artifacts_;
};

std::string fmt(double x) { return fmt_double(x); }

// --- shared option bundles -------------------------------------------------

struct InputOpts {
    std::string trades, markets, rules;
    void attach(CLI::App* cmd, bool required = true) {
        auto* t = cmd->add_option("--trades", trades, "trades CSV/JSONL path");
        auto* m = cmd->add_option("--markets", markets, "markets CSV/JSONL path");
        cmd->add_option("--rules", rules, "domain rule CSV path");
        if (required) {
            t->required();
            m->required();
        }
    }
    DomainRuleSet load_rules() const {
        if (rules.empty()) return DomainRuleSet{};
        return parse_rules_file(rules);
    }
};

struct FilterOpts {
    FilterConfig cfg;
    std::vector<int> reliable_bins;
    void attach(CLI::App* cmd) {
        cmd->add_option("--price-min", cfg.price_min, "minimum price in cents, inclusive");
        cmd->add_option("--price-max", cfg.price_max, "maximum price in cents, inclusive");
        cmd->add_option("--min-market-trades", cfg.min_trades_per_market, "drop markets with fewer trades");
        cmd->add_option("--min-cell-trades", cfg.min_trades_per_cell, "drop cells with fewer trades");
        cmd->add_option("--reliable-bins", reliable_bins, "keep only these horizon bins");
    }
    FilterConfig resolve() const {
        FilterConfig out = cfg;
        if (!reliable_bins.empty()) {
            out.reliable_horizon_mask = std::set<int>(reliable_bins.begin(), reliable_bins.end());
        }
        return out;
    }
};

struct FitOpts {
    FitConfig cfg;
    std::string weights = "contract";
    void attach(CLI::App* cmd) {
        cmd->add_option("--weights", weights, "trade|contract")->check(CLI::IsMember({"trade", "contract"}));
        cmd->add_option("-C,--regularization", cfg.regularization_C, "L2 strength on the slope");
        cmd->add_option("--max-iterations", cfg.max_iterations);
        cmd->add_option("--tolerance", cfg.tolerance);
    }
    FitConfig resolve() const {
        FitConfig out = cfg;
        out.weight_scheme = (weights == "trade") ? WeightScheme::trade : WeightScheme::contract;
        return out;
    }
};

struct Dataset {
    std::vector<TradeRecord> trades;
    std::vector<MarketRecord> markets;
    DomainRuleSet rules;
};

Dataset load_dataset(const InputOpts& in) {
    Dataset d;
    auto tr = parse_trades_file(in.trades);
    auto mk = parse_markets_file(in.markets);
    for (const auto& e : tr.ledger) std::cerr << "warning: trades line " << e.line << ": " << e.message << "\n";
    for (const auto& e : mk.ledger) std::cerr << "warning: markets line " << e.line << ": " << e.message << "\n";
    d.trades = std::move(tr.records);
    d.markets = std::move(mk.records);
    d.rules = in.load_rules();
    return d;
}

std::map<CellKey, CellData> build_cells(const Dataset& d, const BinningConfig& bins, const FilterConfig& filt) {
    auto grid = assemble_grid(d.trades, d.markets, d.rules, bins, filt);
    for (std::size_t i = 0; i < grid.ledger.size() && i < 20; ++i) {
        std::cerr << "warning: trade " << grid.ledger[i].line << ": " << grid.ledger[i].message << "\n";
    }
    if (grid.ledger.size() > 20) std::cerr << "warning: " << grid.ledger.size() << " join problems total\n";
    return std::move(grid.cells);
}

std::map<CellKey, CalibrationFit> fit_all_cells(const std::map<CellKey, CellData>& cells, const FitConfig& cfg) {
    std::map<CellKey, CalibrationFit> fits;
    for (const auto& [key, cell] : cells) fits[key] = fit_recalibration(cell, cfg);
    return fits;
}

std::map<CellKey, CalibrationFit> fit_pooled_over_sizes(const std::map<CellKey, CellData>& cells,
                                                        const FitConfig& cfg) {
    std::map<CellKey, std::vector<Observation>> pooled;
    for (const auto& [key, cell] : cells) {
        auto& pool = pooled[CellKey{key.domain, key.horizon_bin, 0}];
        pool.insert(pool.end(), cell.observations.begin(), cell.observations.end());
    }
    std::map<CellKey, CalibrationFit> fits;
    for (const auto& [key, obs] : pooled) fits[key] = pooled_slope(obs, cfg);
    return fits;
}

void write_cells_csv(const std::string& path, const std::map<CellKey, CalibrationFit>& fits) {
    csv::Writer w(path);
    w.raw_line(cells_csv_header());
    for (const auto& [key, fit] : fits) w.raw_line(cell_fit_row_csv({key, fit}));
    w.close();
}

std::string pvalue_text(double p) { return p < 1e-300 ? std::string("<1e-300") : fmt(p); }

void write_variance_rows(csv::Writer& w, const VarianceTable& t) {
    static const char* names[] = {"mu", "alpha", "beta", "gamma"};
    const char* type = t.type == SsType::I ? "I" : (t.type == SsType::II ? "II" : "III");
    for (std::size_t i = 0; i < t.order.size(); ++i) {
        w.row({type, t.weighted ? "1" : "0", names[static_cast<int>(t.order[i])], fmt(t.marginal_r2[i]),
               fmt(t.cumulative_r2[i])});
    }
    w.row({type, t.weighted ? "1" : "0", "residual", fmt(t.ss_residual / t.ss_total), ""});
    w.row({type, t.weighted ? "1" : "0", "total", fmt(t.total_r2), fmt(t.total_r2)});
}

void write_components_csv(const std::string& path, const SlopeGrid& grid, const ComponentSet& c) {
    csv::Writer w(path);
    w.raw_line("component,level_1,level_2,value");
    for (int t = 0; t < c.T; ++t) w.row({"mu", std::to_string(t), "", fmt(c.mu[t])});
    for (int d = 0; d < c.D; ++d) w.row({"alpha", grid.domains[d], "", fmt(c.alpha[d])});
    for (int d = 0; d < c.D; ++d)
        for (int t = 0; t < c.T; ++t) w.row({"beta", grid.domains[d], std::to_string(t), fmt(c.beta_at(d, t))});
    for (int d = 0; d < c.D; ++d)
        for (int s = 0; s < c.S; ++s) w.row({"gamma", grid.domains[d], std::to_string(s), fmt(c.gamma_at(d, s))});
    w.close();
}

void write_augmented_csv(const std::string& path, const SlopeGrid& grid, const ComponentSet& c) {
    csv::Writer w(path);
    w.raw_line("domain,horizon_bin,size_bin,n,theta,se,mu,alpha,beta,gamma,fitted,residual");
    for (int d = 0; d < grid.D(); ++d)
        for (int t = 0; t < grid.T; ++t)
            for (int s = 0; s < grid.S; ++s) {
                const auto& cell = grid.at(d, t, s);
                w.row({grid.domains[d], std::to_string(t), std::to_string(s), std::to_string(cell.n),
                       fmt(cell.theta), fmt(cell.se), fmt(c.mu[t]), fmt(c.alpha[d]), fmt(c.beta_at(d, t)),
                       fmt(c.gamma_at(d, s)), fmt(c.predict(d, t, s)), fmt(c.residual[grid.index(d, t, s)])});
            }
    w.close();
}

// --- synth spec file ---------------------------------------------------------

synth::SynthSpec load_synth_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open synth spec: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("synth spec parse error: ") + e.what());
    }

    synth::SynthSpec spec;
    try {
        spec.domains = j.at("domains").get<std::vector<std::string>>();
        const int D = static_cast<int>(spec.domains.size());
        const int T = spec.bins.horizon_bins();
        const int S = spec.bins.size_bins();
        auto& c = spec.components;
        c.D = D;
        c.T = T;
        c.S = S;
        c.mu = j.value("mu", std::vector<double>(T, 1.0));
        c.alpha = j.value("alpha", std::vector<double>(D, 0.0));
        c.residual.assign(static_cast<std::size_t>(D) * T * S, 0.0);
        c.beta.assign(static_cast<std::size_t>(D) * T, 0.0);
        c.gamma.assign(static_cast<std::size_t>(D) * S, 0.0);
        if (j.contains("beta")) {
            const auto rows = j.at("beta").get<std::vector<std::vector<double>>>();
            if (static_cast<int>(rows.size()) != D) throw ConfigError("synth spec: beta needs one row per domain");
            for (int d = 0; d < D; ++d) {
                if (static_cast<int>(rows[d].size()) != T) {
                    throw ConfigError("synth spec: beta rows need one entry per horizon bin");
                }
                for (int t = 0; t < T; ++t) c.beta[d * T + t] = rows[d][t];
            }
        }
        if (j.contains("gamma")) {
            const auto rows = j.at("gamma").get<std::vector<std::vector<double>>>();
            if (static_cast<int>(rows.size()) != D) throw ConfigError("synth spec: gamma needs one row per domain");
            for (int d = 0; d < D; ++d) {
                if (static_cast<int>(rows[d].size()) != S) {
                    throw ConfigError("synth spec: gamma rows need one entry per size bin");
                }
                for (int s = 0; s < S; ++s) c.gamma[d * S + s] = rows[d][s];
            }
        }
        if (static_cast<int>(c.mu.size()) != T) throw ConfigError("synth spec: mu needs one entry per horizon bin");
        if (static_cast<int>(c.alpha.size()) != D) throw ConfigError("synth spec: alpha needs one entry per domain");
        spec.intercept = j.value("intercept", 0.0);
        spec.markets_per_cell = j.value("markets_per_cell", 100);
        spec.trades_per_market = j.value("trades_per_market", 20);
        spec.latent_logit_mean = j.value("latent_logit_mean", 0.0);
        spec.latent_logit_sd = j.value("latent_logit_sd", 1.2);
        spec.price_jitter_sd = j.value("price_jitter_sd", 0.05);
        spec.seed = j.value("seed", static_cast<std::uint64_t>(0));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("synth spec: ") + e.what());
    }

    static const std::set<std::string> known = {
        "domains", "mu", "alpha", "beta", "gamma", "intercept", "markets_per_cell", "trades_per_market",
        "latent_logit_mean", "latent_logit_sd", "price_jitter_sd", "seed"};
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) throw ConfigError("synth spec: unknown key '" + key + "'");
    }
    return spec;
}

// --- draws csv round trip ------------------------------------------------------

void write_draws_csv(const std::string& path, const bayes::PosteriorDraws& draws) {
    csv::Writer w(path);
    std::string header = "chain,iter";
    for (const auto& n : draws.names) header += "," + n;
    w.raw_line(header);
    for (std::size_t c = 0; c < draws.n_chains(); ++c) {
        for (std::size_t i = 0; i < draws.draws[c].size(); ++i) {
            std::string line = std::to_string(c) + "," + std::to_string(i);
            for (double v : draws.draws[c][i]) line += "," + fmt(v);
            w.raw_line(line);
        }
    }
    w.close();
}

bayes::PosteriorDraws read_draws_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open draws file: " + path);
    std::string line;
    if (!csv::read_line(in, line)) throw DataError("empty draws file");
    const auto header = csv::split_line(line);
    if (header.size() < 3 || header[0] != "chain" || header[1] != "iter") {
        throw DataError("draws file: expected chain,iter,<parameters> header");
    }
    bayes::PosteriorDraws draws;
    draws.names.assign(header.begin() + 2, header.end());
    while (csv::read_line(in, line)) {
        if (line.empty()) continue;
        const auto f = csv::split_line(line);
        if (f.size() != header.size()) throw DataError("draws file: ragged row");
        const std::size_t chain = std::stoul(f[0]);
        if (chain >= draws.draws.size()) draws.draws.resize(chain + 1);
        std::vector<double> row(draws.names.size());
        for (std::size_t i = 0; i < row.size(); ++i) row[i] = std::stod(f[i + 2]);
        draws.draws[chain].push_back(std::move(row));
    }
    if (draws.draws.empty()) throw DataError("draws file: no draws");
    return draws;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prediction-market calibration analysis engine"};
    app.set_config("--config", "", "INI-style config file; command-line flags win");
    app.require_subcommand(1);

    auto* cmd_stats = app.add_subcommand("ingest-stats", "per-domain dataset summary");
    InputOpts stats_in;
    stats_in.attach(cmd_stats);
    std::string stats_out = "out";
    cmd_stats->add_option("--out", stats_out, "output directory");

    auto* cmd_fit = app.add_subcommand("fit-cells", "fit the per-cell recalibration matrix");
    InputOpts fit_in;
    fit_in.attach(cmd_fit);
    FilterOpts fit_filter;
    fit_filter.attach(cmd_fit);
    FitOpts fit_fit;
    fit_fit.attach(cmd_fit);
    bool fit_pool_sizes = false;
    cmd_fit->add_flag("--pool-sizes", fit_pool_sizes, "pool size bins: one fit per (domain, horizon)");
    std::string fit_out = "out";
    cmd_fit->add_option("--out", fit_out, "output directory");

    auto* cmd_dec = app.add_subcommand("decompose", "additive decomposition and variance attribution");
    std::string dec_cells, dec_out = "out", dec_type = "I";
    bool dec_wls = false;
    cmd_dec->add_option("--cells", dec_cells, "cells.csv from fit-cells")->required();
    cmd_dec->add_option("--type", dec_type, "sum-of-squares type")->check(CLI::IsMember({"I", "II", "III"}));
    cmd_dec->add_flag("--wls", dec_wls, "also run the inverse-variance weighted fit");
    cmd_dec->add_option("--out", dec_out, "output directory");

    auto* cmd_scale = app.add_subcommand("scale-effect", "Large-minus-Single slope gaps per domain");
    std::string scale_cells, scale_out = "out", scale_domain;
    InputOpts scale_in;
    scale_in.attach(cmd_scale, false);
    FilterOpts scale_filter;
    scale_filter.attach(cmd_scale);
    FitOpts scale_fit;
    scale_fit.attach(cmd_scale);
    cmd_scale->add_option("--cells", scale_cells, "cells.csv from fit-cells")->required();
    cmd_scale->add_option("--domain", scale_domain, "restrict to one domain");
    cmd_scale->add_option("--out", scale_out, "output directory");

    auto* cmd_boot = app.add_subcommand("bootstrap", "bootstrap CI for a domain's scale effect");
    InputOpts boot_in;
    boot_in.attach(cmd_boot);
    FilterOpts boot_filter;
    boot_filter.attach(cmd_boot);
    FitOpts boot_fit;
    boot_fit.attach(cmd_boot);
    std::string boot_domain, boot_method = "cell", boot_out = "out";
    int boot_B = 1000, boot_threads = 1;
    double boot_conf = 0.95;
    std::uint64_t boot_seed = 0;
    cmd_boot->add_option("--domain", boot_domain)->required();
    cmd_boot->add_option("--method", boot_method, "cell|clustered")->check(CLI::IsMember({"cell", "clustered"}));
    cmd_boot->add_option("-B,--replicates", boot_B);
    cmd_boot->add_option("--confidence", boot_conf);
    cmd_boot->add_option("--seed", boot_seed);
    cmd_boot->add_option("--threads", boot_threads);
    cmd_boot->add_option("--out", boot_out, "output directory");

    auto* cmd_bayes = app.add_subcommand("bayes", "hierarchical model posterior by gradient MCMC");
    std::string bayes_cells, bayes_out = "out";
    int bayes_chains = 4, bayes_warmup = 2000, bayes_keep = 2000, bayes_depth = 10, bayes_threads = 1;
    double bayes_accept = 0.8;
    std::uint64_t bayes_seed = 0;
    bool bayes_single_centred = false;
    cmd_bayes->add_option("--cells", bayes_cells)->required();
    cmd_bayes->add_option("--chains", bayes_chains);
    cmd_bayes->add_option("--warmup", bayes_warmup);
    cmd_bayes->add_option("--keep", bayes_keep);
    cmd_bayes->add_option("--target-accept", bayes_accept);
    cmd_bayes->add_option("--max-depth", bayes_depth);
    cmd_bayes->add_option("--seed", bayes_seed);
    cmd_bayes->add_option("--threads", bayes_threads);
    cmd_bayes->add_flag("--beta-single-centred", bayes_single_centred,
                        "constrain beta per horizon only, not per domain");
    cmd_bayes->add_option("--out", bayes_out, "output directory");

    auto* cmd_ppc = app.add_subcommand("ppc", "posterior predictive check of a draws file");
    std::string ppc_cells, ppc_draws, ppc_out = "out";
    std::uint64_t ppc_seed = 0;
    bool ppc_single_centred = false;
    cmd_ppc->add_option("--cells", ppc_cells)->required();
    cmd_ppc->add_option("--draws", ppc_draws)->required();
    cmd_ppc->add_option("--seed", ppc_seed);
    cmd_ppc->add_flag("--beta-single-centred", ppc_single_centred);
    cmd_ppc->add_option("--out", ppc_out, "output directory");

    auto* cmd_rec = app.add_subcommand("recalibrate", "transform a raw price through a fitted slope");
    double rec_price = 0.0, rec_slope = 0.0;
    std::string rec_cells, rec_domain;
    int rec_horizon = -1, rec_size = -1;
    cmd_rec->add_option("--price", rec_price, "raw market price in (0,1)")->required();
    cmd_rec->add_option("--slope", rec_slope, "slope theta; alternative to the matrix lookup");
    cmd_rec->add_option("--cells", rec_cells, "cells.csv for slope lookup");
    cmd_rec->add_option("--domain", rec_domain);
    cmd_rec->add_option("--horizon", rec_horizon);
    cmd_rec->add_option("--size", rec_size);

    auto* cmd_synth = app.add_subcommand("synth", "generate synthetic markets with a known structure");
    std::string synth_spec_path, synth_out = "out";
    cmd_synth->add_option("--spec", synth_spec_path, "JSON component spec")->required();
    cmd_synth->add_option("--out", synth_out, "output directory");

    auto* cmd_cmp = app.add_subcommand("compare-platforms", "pooled slope deltas between two matrices");
    std::string cmp_a, cmp_b, cmp_out = "out";
    std::vector<int> cmp_reliable = {2, 3, 4, 5, 6, 7, 8};
    cmd_cmp->add_option("--cells-a", cmp_a, "baseline platform pooled cells.csv")->required();
    cmd_cmp->add_option("--cells-b", cmp_b, "comparison platform pooled cells.csv")->required();
    cmd_cmp->add_option("--reliable-bins", cmp_reliable, "horizon bins used for domain means");
    cmd_cmp->add_option("--out", cmp_out, "output directory");

    auto* cmd_rob = app.add_subcommand("robustness", "variance decomposition across filter/ridge variants");
    InputOpts rob_in;
    rob_in.attach(cmd_rob);
    FilterOpts rob_filter;
    rob_filter.attach(cmd_rob);
    FitOpts rob_fit;
    rob_fit.attach(cmd_rob);
    std::string rob_out = "out";
    cmd_rob->add_option("--out", rob_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    Run* active_run = nullptr;
    try {
        if (cmd_stats->parsed()) {
            Run run(cmd_stats, stats_out);
            active_run = &run;
            const auto d = load_dataset(stats_in);
            const auto stats = dataset_stats(d.trades, d.markets, d.rules);
            csv::Writer w(run.path("stats.csv"));
            w.raw_line("domain,markets,trades,contracts,resolved_pct,median_volume,base_rate_pct");
            std::size_t tm = 0, tt = 0;
            long double tc = 0;
            for (const auto& s : stats) {
                w.row({s.domain, std::to_string(s.markets), std::to_string(s.trades),
                       fmt(static_cast<double>(s.contracts)), fmt(s.resolved_pct), fmt(s.median_volume),
                       fmt(s.base_rate_pct)});
                tm += s.markets;
                tt += s.trades;
                tc += s.contracts;
            }
            w.row({"TOTAL", std::to_string(tm), std::to_string(tt), fmt(static_cast<double>(tc)), "", "", ""});
            w.close();
            run.write_manifest(0);
        } else if (cmd_fit->parsed()) {
            Run run(cmd_fit, fit_out);
            active_run = &run;
            const auto d = load_dataset(fit_in);
            const auto cells = build_cells(d, {}, fit_filter.resolve());
            const auto cfg = fit_fit.resolve();
            const auto fits = fit_pool_sizes ? fit_pooled_over_sizes(cells, cfg) : fit_all_cells(cells, cfg);
            write_cells_csv(run.path("cells.csv"), fits);
            run.write_manifest(0);
            std::cout << "fitted " << fits.size() << " cells\n";
        } else if (cmd_dec->parsed()) {
            Run run(cmd_dec, dec_out);
            active_run = &run;
            const auto grid = SlopeGrid::from_cells_csv(dec_cells);
            const auto comp = fit_sequential(grid);
            write_components_csv(run.path("components.csv"), grid, comp);
            write_augmented_csv(run.path("cells_augmented.csv"), grid, comp);

            const SsType type = dec_type == "I" ? SsType::I : (dec_type == "II" ? SsType::II : SsType::III);
            csv::Writer vw(run.path("variance.csv"));
            vw.raw_line("type,weighted,component,marginal_r2,cumulative_r2");
            const auto table =
                variance_decomposition(grid, {Term::mu, Term::alpha, Term::beta, Term::gamma}, type);
            write_variance_rows(vw, table);
            if (dec_wls) {
                const auto [wcomp, wtable] = fit_wls(grid);
                write_variance_rows(vw, wtable);
                write_components_csv(run.path("wls_components.csv"), grid, wcomp);
            }
            vw.close();

            const auto ft = f_tests(grid);
            csv::Writer fw(run.path("ftests.csv"));
            fw.raw_line("source,ss,df,ms,f,p_value,partial_eta2");
            for (const auto& row : ft.components) {
                fw.row({row.source, fmt(row.ss), fmt(row.df), fmt(row.ms), fmt(row.f),
                        fmt(row.p_value < 1e-300 ? 0.0 : row.p_value), fmt(row.partial_eta2)});
                std::cout << row.source << ": F=" << fmt(row.f) << " p=" << pvalue_text(row.p_value)
                          << " partial_eta2=" << fmt(row.partial_eta2) << "\n";
            }
            fw.row({"residual", fmt(ft.residual_ss), fmt(ft.residual_df), fmt(ft.residual_ms), "", "", ""});
            fw.close();
            run.write_manifest(0);
            std::cout << "total R2 (" << dec_type << ") = " << fmt(table.total_r2) << "\n";
        } else if (cmd_scale->parsed()) {
            Run run(cmd_scale, scale_out);
            active_run = &run;
            const auto grid = SlopeGrid::from_cells_csv(scale_cells);
            const std::vector<std::string> domains =
                scale_domain.empty() ? grid.domains : std::vector<std::string>{scale_domain};
            csv::Writer w(run.path("scale_effect.csv"));
            std::string header = "domain,variant,delta,size_lo,size_hi";
            for (int t = 0; t < grid.T; ++t) header += ",diff_t" + std::to_string(t);
            w.raw_line(header);
            for (const auto& dom : domains) {
                const auto eff = scale_effect_within(grid, dom);
                std::string line = dom + ",within_horizon," + fmt(eff.delta) + "," +
                                   std::to_string(eff.size_lo) + "," + std::to_string(eff.size_hi);
                for (double v : eff.per_horizon_diffs) line += "," + fmt(v);
                w.raw_line(line);
            }
            if (!scale_in.trades.empty()) {
                const auto d = load_dataset(scale_in);
                const auto cells = build_cells(d, {}, scale_filter.resolve());
                for (const auto& dom : domains) {
                    const auto eff = scale_effect_aggregate(cells, dom, scale_fit.resolve(), 0, grid.S - 1);
                    std::string line = dom + ",aggregate," + fmt(eff.delta) + "," +
                                       std::to_string(eff.size_lo) + "," + std::to_string(eff.size_hi);
                    for (int t = 0; t < grid.T; ++t) line += ",";
                    w.raw_line(line);
                }
            }
            w.close();
            run.write_manifest(0);
        } else if (cmd_boot->parsed()) {
            Run run(cmd_boot, boot_out);
            active_run = &run;
            const auto d = load_dataset(boot_in);
            const auto cells = build_cells(d, {}, boot_filter.resolve());
            BootstrapConfig cfg;
            cfg.replicates = boot_B;
            cfg.method = boot_method == "cell" ? BootstrapMethod::cell_level : BootstrapMethod::market_clustered;
            cfg.confidence = boot_conf;
            cfg.seed = boot_seed;
            cfg.threads = boot_threads;
            const auto est = bootstrap_scale_effect(cells, boot_domain, cfg, boot_fit.resolve());
            csv::Writer w(run.path("bootstrap.csv"));
            w.raw_line("domain,method,B,point,lower,upper,failed");
            w.row({boot_domain, boot_method == "cell" ? "cell_level" : "market_clustered",
                   std::to_string(boot_B), fmt(est.point), fmt(est.lower), fmt(est.upper),
                   std::to_string(est.failed_replicates)});
            w.close();
            csv::Writer rw(run.path("bootstrap_replicates.csv"));
            rw.raw_line("replicate,delta");
            for (std::size_t i = 0; i < est.replicate_values.size(); ++i) {
                rw.row({std::to_string(i), fmt(est.replicate_values[i])});
            }
            rw.close();
            run.write_manifest(boot_seed);
            std::cout << boot_domain << " delta=" << fmt(est.point) << " CI=[" << fmt(est.lower) << ", "
                      << fmt(est.upper) << "] failed=" << est.failed_replicates << "\n";
        } else if (cmd_bayes->parsed()) {
            Run run(cmd_bayes, bayes_out);
            active_run = &run;
            const auto grid = SlopeGrid::from_cells_csv(bayes_cells);
            auto spec = bayes::ModelSpec::defaults_for(BinningConfig{});
            spec.beta_doubly_centred = !bayes_single_centred;
            bayes::SampleConfig cfg;
            cfg.chains = bayes_chains;
            cfg.warmup = bayes_warmup;
            cfg.keep = bayes_keep;
            cfg.target_accept = bayes_accept;
            cfg.max_depth = bayes_depth;
            cfg.seed = bayes_seed;
            cfg.threads = bayes_threads;
            const auto draws = bayes::sample(spec, grid, cfg);
            if (draws.divergence_warning) {
                std::cerr << "warning: " << draws.divergence_count
                          << " divergent transitions post-warmup; estimates may be biased\n";
            }
            write_draws_csv(run.path("draws.csv"), draws);

            const auto diag = bayes::diagnostics(draws);
            csv::Writer dw(run.path("diagnostics.csv"));
            dw.raw_line("parameter,rhat,ess,divergences");
            for (const auto& p : diag.params) dw.row({p.name, fmt(p.rhat), fmt(p.ess), ""});
            dw.row({"_global", fmt(diag.max_rhat), fmt(diag.min_ess), std::to_string(diag.divergence_count)});
            dw.close();

            const auto summaries = bayes::summarize(draws);
            csv::Writer sw(run.path("summary.csv"));
            sw.raw_line("parameter,mean,sd,ci_2.5,ci_97.5");
            for (const auto& s : summaries) sw.row({s.name, fmt(s.mean), fmt(s.sd), fmt(s.ci_lo), fmt(s.ci_hi)});
            sw.close();

            const auto freq = fit_sequential(grid);
            const auto cmp = bayes::compare_alpha(draws, grid, freq);
            csv::Writer cw(run.path("alpha_compare.csv"));
            cw.raw_line("domain,post_mean,sd,ci_2.5,ci_97.5,frequentist");
            for (const auto& row : cmp) {
                cw.row({row.domain, fmt(row.post_mean), fmt(row.sd), fmt(row.ci_lo), fmt(row.ci_hi),
                        fmt(row.frequentist)});
            }
            cw.close();
            run.write_manifest(bayes_seed);
            std::cout << "max rhat=" << fmt(diag.max_rhat) << " min ess=" << fmt(diag.min_ess)
                      << " divergences=" << diag.divergence_count << "\n";
        } else if (cmd_ppc->parsed()) {
            Run run(cmd_ppc, ppc_out);
            active_run = &run;
            const auto grid = SlopeGrid::from_cells_csv(ppc_cells);
            const auto draws = read_draws_csv(ppc_draws);
            auto spec = bayes::ModelSpec::defaults_for(BinningConfig{});
            spec.beta_doubly_centred = !ppc_single_centred;
            const auto ppc = bayes::posterior_predictive(draws, grid, spec, ppc_seed);
            csv::Writer w(run.path("ppc.csv"));
            w.raw_line("domain,horizon_bin,size_bin,observed,lower,upper,within,ppc_p");
            for (const auto& c : ppc.cells) {
                w.row({c.domain, std::to_string(c.horizon_bin), std::to_string(c.size_bin), fmt(c.observed),
                       fmt(c.lower), fmt(c.upper), c.within ? "1" : "0", fmt(c.ppc_p)});
            }
            w.close();
            csv::Writer cw(run.path("ppc_coverage.csv"));
            cw.raw_line("domain,coverage");
            for (const auto& [dom, cov] : ppc.coverage_by_domain) cw.row({dom, fmt(cov)});
            cw.row({"_overall", fmt(ppc.overall_coverage)});
            cw.close();
            run.write_manifest(ppc_seed);
            std::cout << "ppc coverage=" << fmt(ppc.overall_coverage) << "\n";
        } else if (cmd_rec->parsed()) {
            double slope = rec_slope;
            if (slope <= 0.0) {
                if (rec_cells.empty() || rec_domain.empty() || rec_horizon < 0 || rec_size < 0) {
                    throw ConfigError("recalibrate needs --slope or (--cells --domain --horizon --size)");
                }
                const auto grid = SlopeGrid::from_cells_csv(rec_cells);
                const int d = grid.domain_index(rec_domain);
                if (d < 0) throw DataError("unknown domain: " + rec_domain);
                if (rec_horizon >= grid.T || rec_size >= grid.S) throw ConfigError("bin index out of range");
                const auto& cell = grid.at(d, rec_horizon, rec_size);
                if (!cell.present) throw DataError("cell not present in matrix");
                slope = cell.theta;
            }
            std::cout << fmt(recalibrate(rec_price, slope)) << "\n";
        } else if (cmd_synth->parsed()) {
            Run run(cmd_synth, synth_out);
            active_run = &run;
            const auto spec = load_synth_spec(synth_spec_path);
            const auto out = synth::generate(spec);
            if (out.clamp_warning) {
                std::cerr << "warning: " << out.clamped_prices << " of " << out.total_trades
                          << " prices hit the clamp; target distribution too extreme\n";
            }
            synth::write_trades_csv(run.path("trades.csv"), out.trades);
            synth::write_markets_csv(run.path("markets.csv"), out.markets);
            synth::write_rules_csv(run.path("rules.csv"), out.rules);
            run.write_manifest(spec.seed);
            std::cout << "generated " << out.trades.size() << " trades across " << out.markets.size()
                      << " markets\n";
        } else if (cmd_cmp->parsed()) {
            Run run(cmd_cmp, cmp_out);
            active_run = &run;
            const auto grid_a = SlopeGrid::from_cells_csv(cmp_a);
            const auto grid_b = SlopeGrid::from_cells_csv(cmp_b);
            const auto delta =
                platform_delta(grid_a, grid_b, std::set<int>(cmp_reliable.begin(), cmp_reliable.end()));
            csv::Writer w(run.path("compare.csv"));
            w.raw_line("domain,horizon_bin,slope_a,slope_b,delta,reliable");
            for (const auto& row : delta.rows) {
                w.row({row.domain, std::to_string(row.horizon_bin), fmt(row.slope_a), fmt(row.slope_b),
                       fmt(row.delta), row.reliable ? "1" : "0"});
            }
            w.close();
            csv::Writer mw(run.path("compare_means.csv"));
            mw.raw_line("domain,mean_a,mean_b,mean_delta");
            for (const auto& m : delta.means) mw.row({m.domain, fmt(m.mean_a), fmt(m.mean_b), fmt(m.mean_delta)});
            mw.close();
            run.write_manifest(0);
        } else if (cmd_rob->parsed()) {
            Run run(cmd_rob, rob_out);
            active_run = &run;
            const auto d = load_dataset(rob_in);
            csv::Writer w(run.path("robustness.csv"));
            w.raw_line("price_min,price_max,C,mu_r2,alpha_r2,beta_r2,gamma_r2,total_r2");
            const int ranges[3][2] = {{2, 98}, {5, 95}, {10, 90}};
            const double cs[3] = {1.0, 10.0, 100.0};
            for (const auto& range : ranges) {
                for (double c_val : cs) {
                    FilterConfig filt = rob_filter.resolve();
                    filt.price_min = range[0];
                    filt.price_max = range[1];
                    FitConfig fc = rob_fit.resolve();
                    fc.regularization_C = c_val;
                    const auto cells = build_cells(d, {}, filt);
                    const auto fits = fit_all_cells(cells, fc);
                    const auto grid = SlopeGrid::from_fits(fits);
                    const auto table = variance_decomposition(grid);
                    w.row({std::to_string(range[0]), std::to_string(range[1]), fmt(c_val),
                           fmt(table.marginal_r2[0]), fmt(table.marginal_r2[1]), fmt(table.marginal_r2[2]),
                           fmt(table.marginal_r2[3]), fmt(table.total_r2)});
                }
            }
            w.close();
            run.write_manifest(0);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        if (active_run) active_run->discard();
        return 2;
    } catch (const CLI::Error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        if (active_run) active_run->discard();
        return 2;
    } catch (const std::domain_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        if (active_run) active_run->discard();
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        if (active_run) active_run->discard();
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        if (active_run) active_run->discard();
        return 4;
    }
    return 0;
}
