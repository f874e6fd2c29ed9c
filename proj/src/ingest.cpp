#include "pmcal/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include <json.hpp>

#include "pmcal/csv.hpp"
#include "pmcal/errors.hpp"
#include "pmcal/stats.hpp"

namespace pmcal {

namespace {

bool parse_i64(const std::string& s, std::int64_t& out) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last && !s.empty();
}

bool parse_side(const std::string& s, Side& out) {
    if (s == "yes") { out = Side::yes; return true; }
    if (s == "no") { out = Side::no; return true; }
    return false;
}

bool parse_outcome(const std::string& s, Outcome& out) {
    if (s == "yes") { out = Outcome::yes; return true; }
    if (s == "no") { out = Outcome::no; return true; }
    if (s == "unresolved") { out = Outcome::unresolved; return true; }
    return false;
}

// Column lookup by header name; extra columns are ignored.
std::unordered_map<std::string, std::size_t> header_index(const std::vector<std::string>& header) {
    std::unordered_map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < header.size(); ++i) idx[header[i]] = i;
    return idx;
}

std::size_t require_column(const std::unordered_map<std::string, std::size_t>& idx, const char* name) {
    auto it = idx.find(name);
    if (it == idx.end()) throw DataError(std::string("missing required column: ") + name);
    return it->second;
}

std::string validate_trade(TradeRecord& t) {
    if (t.market_id.empty()) return "empty market_id";
    if (t.price_cents < 1 || t.price_cents > 99) return "price outside [1,99]";
    if (t.count < 1) return "count < 1";
    return {};
}

std::string validate_market(MarketRecord& m) {
    if (m.market_id.empty()) return "empty market_id";
    return {};
}

template <typename Record, typename RowFn>
ParseResult<Record> parse_stream(std::istream& in, const ParseOptions& opts, RowFn from_row) {
    ParseResult<Record> result;
    std::string line;
    std::size_t lineno = 0;

    std::vector<std::string> header;
    if (opts.format == InputFormat::csv) {
        if (!csv::read_line(in, line)) throw DataError("empty input: header row required");
        ++lineno;
        header = csv::split_line(line);
    }

    while (csv::read_line(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        ++result.total_rows;
        try {
            Record rec = from_row(line, header);
            result.records.push_back(std::move(rec));
        } catch (const std::exception& e) {
            result.ledger.push_back({lineno, e.what()});
        }
    }

    if (result.total_rows > 0) {
        const double bad = static_cast<double>(result.ledger.size()) / static_cast<double>(result.total_rows);
        if (bad > opts.max_bad_fraction) {
            std::ostringstream msg;
            msg << result.ledger.size() << " of " << result.total_rows
                << " rows malformed (first at line " << result.ledger.front().line << ": "
                << result.ledger.front().message << ")";
            throw DataError(msg.str());
        }
    }
    return result;
}

TradeRecord trade_from_csv(const std::string& line, std::size_t c_market, std::size_t c_price,
                           std::size_t c_count, std::size_t c_side, std::size_t c_ts) {
    const auto fields = csv::split_line(line);
    const std::size_t needed = std::max({c_market, c_price, c_count, c_side, c_ts});
    if (fields.size() <= needed) throw DataError("too few fields");
    TradeRecord t;
    t.market_id = fields[c_market];
    std::int64_t price = 0;
    if (!parse_i64(fields[c_price], price)) throw DataError("bad price_cents");
    t.price_cents = static_cast<int>(price);
    if (!parse_i64(fields[c_count], t.count)) throw DataError("bad count");
    if (!parse_side(fields[c_side], t.side)) throw DataError("bad side");
    if (!parse_i64(fields[c_ts], t.timestamp_ms)) throw DataError("bad timestamp_ms");
    if (auto err = validate_trade(t); !err.empty()) throw DataError(err);
    return t;
}

TradeRecord trade_from_json(const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    TradeRecord t;
    t.market_id = j.at("market_id").get<std::string>();
    t.price_cents = j.at("price_cents").get<int>();
    t.count = j.at("count").get<std::int64_t>();
    if (!parse_side(j.at("side").get<std::string>(), t.side)) throw DataError("bad side");
    t.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
    if (auto err = validate_trade(t); !err.empty()) throw DataError(err);
    return t;
}

MarketRecord market_from_csv(const std::string& line, std::size_t c_market, std::size_t c_ticker,
                             std::size_t c_title, std::size_t c_close, std::size_t c_outcome) {
    const auto fields = csv::split_line(line);
    const std::size_t needed = std::max({c_market, c_ticker, c_title, c_close, c_outcome});
    if (fields.size() <= needed) throw DataError("too few fields");
    MarketRecord m;
    m.market_id = fields[c_market];
    m.event_ticker = fields[c_ticker];
    m.title = fields[c_title];
    if (!parse_i64(fields[c_close], m.close_time_ms)) throw DataError("bad close_time_ms");
    if (!parse_outcome(fields[c_outcome], m.outcome)) throw DataError("bad outcome");
    if (auto err = validate_market(m); !err.empty()) throw DataError(err);
    return m;
}

MarketRecord market_from_json(const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    MarketRecord m;
    m.market_id = j.at("market_id").get<std::string>();
    m.event_ticker = j.value("event_ticker", std::string{});
    m.title = j.value("title", std::string{});
    m.close_time_ms = j.at("close_time_ms").get<std::int64_t>();
    if (!parse_outcome(j.at("outcome").get<std::string>(), m.outcome)) throw DataError("bad outcome");
    if (auto err = validate_market(m); !err.empty()) throw DataError(err);
    return m;
}

}  // namespace

ParseResult<TradeRecord> parse_trades(std::istream& in, const ParseOptions& opts) {
    if (opts.format == InputFormat::jsonl) {
        return parse_stream<TradeRecord>(in, opts, [](const std::string& line, const std::vector<std::string>&) {
            return trade_from_json(line);
        });
    }
    // Resolve columns from the header once, on first use.
    struct Cols {
        std::size_t market, price, count, side, ts;
        bool ready = false;
    };
    auto cols = std::make_shared<Cols>();
    return parse_stream<TradeRecord>(in, opts, [cols](const std::string& line, const std::vector<std::string>& header) {
        if (!cols->ready) {
            const auto idx = header_index(header);
            cols->market = require_column(idx, "market_id");
            cols->price = require_column(idx, "price_cents");
            cols->count = require_column(idx, "count");
            cols->side = require_column(idx, "side");
            cols->ts = require_column(idx, "timestamp_ms");
            cols->ready = true;
        }
        return trade_from_csv(line, cols->market, cols->price, cols->count, cols->side, cols->ts);
    });
}

ParseResult<MarketRecord> parse_markets(std::istream& in, const ParseOptions& opts) {
    if (opts.format == InputFormat::jsonl) {
        return parse_stream<MarketRecord>(in, opts, [](const std::string& line, const std::vector<std::string>&) {
            return market_from_json(line);
        });
    }
    struct Cols {
        std::size_t market, ticker, title, close, outcome;
        bool ready = false;
    };
    auto cols = std::make_shared<Cols>();
    return parse_stream<MarketRecord>(in, opts, [cols](const std::string& line, const std::vector<std::string>& header) {
        if (!cols->ready) {
            const auto idx = header_index(header);
            cols->market = require_column(idx, "market_id");
            cols->ticker = require_column(idx, "event_ticker");
            cols->title = require_column(idx, "title");
            cols->close = require_column(idx, "close_time_ms");
            cols->outcome = require_column(idx, "outcome");
            cols->ready = true;
        }
        return market_from_csv(line, cols->market, cols->ticker, cols->title, cols->close, cols->outcome);
    });
}

namespace {

ParseOptions with_format_from_path(const std::string& path, ParseOptions opts) {
    if (path.size() >= 6 && path.compare(path.size() - 6, 6, ".jsonl") == 0) opts.format = InputFormat::jsonl;
    return opts;
}

}  // namespace

ParseResult<TradeRecord> parse_trades_file(const std::string& path, const ParseOptions& opts) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open trades file: " + path);
    return parse_trades(in, with_format_from_path(path, opts));
}

ParseResult<MarketRecord> parse_markets_file(const std::string& path, const ParseOptions& opts) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open markets file: " + path);
    return parse_markets(in, with_format_from_path(path, opts));
}

// --- domain classification ---------------------------------------------

DomainRuleSet parse_rules(std::istream& in) {
    DomainRuleSet set;
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    while (csv::read_line(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto fields = csv::split_line(line);
        if (!header_seen) {
            header_seen = true;
            if (fields.size() >= 1 && fields[0] == "match_kind") continue;  // header optional
        }
        if (fields.size() < 3) throw ConfigError("rule line " + std::to_string(lineno) + ": expected match_kind,pattern,domain");
        DomainRule rule;
        if (fields[0] == "ticker_prefix") {
            rule.kind = MatchKind::ticker_prefix;
        } else if (fields[0] == "title_regex") {
            rule.kind = MatchKind::title_regex;
        } else {
            throw ConfigError("rule line " + std::to_string(lineno) + ": unknown match_kind '" + fields[0] + "'");
        }
        rule.pattern = fields[1];
        rule.domain = fields[2];
        if (rule.kind == MatchKind::title_regex) {
            try {
                rule.compiled = std::make_shared<const std::regex>(rule.pattern);
            } catch (const std::regex_error& e) {
                throw ConfigError("rule line " + std::to_string(lineno) + ": bad regex: " + e.what());
            }
        }
        set.rules.push_back(std::move(rule));
    }
    return set;
}

DomainRuleSet parse_rules_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open rules file: " + path);
    return parse_rules(in);
}

DomainRuleSet compile_rules(std::vector<std::pair<std::string, std::string>> prefix_rules, const std::string& fallback) {
    DomainRuleSet set;
    set.fallback_domain = fallback;
    for (auto& [prefix, domain] : prefix_rules) {
        set.rules.push_back({MatchKind::ticker_prefix, std::move(prefix), std::move(domain), nullptr});
    }
    return set;
}

std::string classify_domain(const MarketRecord& market, const DomainRuleSet& rules) {
    for (const auto& rule : rules.rules) {
        if (rule.kind == MatchKind::ticker_prefix) {
            if (market.event_ticker.rfind(rule.pattern, 0) == 0) return rule.domain;
        } else {
            if (rule.compiled && std::regex_search(market.title, *rule.compiled)) return rule.domain;
        }
    }
    return rules.fallback_domain;
}

// --- binning -----------------------------------------------------------

BinAssignment bin_trade(const TradeRecord& trade, const MarketRecord& market, const BinningConfig& cfg) {
    BinAssignment a;
    const std::int64_t tau = market.close_time_ms - trade.timestamp_ms;
    if (tau < 0) {
        a.negative_horizon = true;
        a.horizon_bin = 0;
    } else {
        a.horizon_bin = cfg.horizon_bin(tau);
    }
    a.size_bin = cfg.size_bin(trade.count);
    return a;
}

// --- grid assembly -------------------------------------------------------

GridResult assemble_grid(const std::vector<TradeRecord>& trades, const std::vector<MarketRecord>& markets,
                         const DomainRuleSet& rules, const BinningConfig& bins, const FilterConfig& filt) {
    if (filt.price_min < 1 || filt.price_min >= filt.price_max || filt.price_max > 99) {
        throw ConfigError("price filter must satisfy 1 <= price_min < price_max <= 99");
    }

    GridResult result;
    result.counts.input_trades = trades.size();

    std::unordered_map<std::string, std::size_t> market_index;
    market_index.reserve(markets.size());
    for (std::size_t i = 0; i < markets.size(); ++i) market_index.emplace(markets[i].market_id, i);

    // Market-level trade counts come before any trade-level filtering.
    std::vector<std::int64_t> market_trades(markets.size(), 0);
    for (const auto& t : trades) {
        auto it = market_index.find(t.market_id);
        if (it != market_index.end()) ++market_trades[it->second];
    }

    std::vector<std::string> domain_cache(markets.size());
    std::vector<bool> domain_known(markets.size(), false);

    for (std::size_t ti = 0; ti < trades.size(); ++ti) {
        const auto& t = trades[ti];
        auto it = market_index.find(t.market_id);
        if (it == market_index.end()) {
            result.ledger.push_back({ti + 1, "unknown market_id: " + t.market_id});
            ++result.counts.unknown_market;
            continue;
        }
        const std::size_t mi = it->second;
        const MarketRecord& m = markets[mi];
        if (m.outcome == Outcome::unresolved) {
            ++result.counts.unresolved_market;
            continue;
        }
        if (market_trades[mi] < filt.min_trades_per_market) {
            ++result.counts.below_market_minimum;
            continue;
        }
        if (t.price_cents < filt.price_min || t.price_cents > filt.price_max) {
            ++result.counts.price_filtered;
            continue;
        }
        const BinAssignment bin = bin_trade(t, m, bins);
        if (bin.negative_horizon && filt.drop_negative_horizon) {
            ++result.counts.negative_horizon;
            continue;
        }
        if (filt.reliable_horizon_mask && !filt.reliable_horizon_mask->count(bin.horizon_bin)) {
            ++result.counts.masked_horizon;
            continue;
        }
        if (!domain_known[mi]) {
            domain_cache[mi] = classify_domain(m, rules);
            domain_known[mi] = true;
        }
        CellKey key{domain_cache[mi], bin.horizon_bin, bin.size_bin};
        auto& cell = result.cells[key];
        cell.key = key;
        Observation obs;
        obs.price_fraction = t.price_cents / 100.0;
        obs.outcome = (m.outcome == Outcome::yes) ? 1 : 0;
        obs.contract_count = t.count;
        obs.market_id = t.market_id;
        obs.tau_hours = static_cast<double>(m.close_time_ms - t.timestamp_ms) / static_cast<double>(kMsPerHour);
        cell.observations.push_back(std::move(obs));
    }

    // Per-cell sample threshold, then a canonical observation order so the
    // grid is identical under any permutation of the input rows.
    for (auto it = result.cells.begin(); it != result.cells.end();) {
        auto& obs = it->second.observations;
        if (obs.size() < static_cast<std::size_t>(filt.min_trades_per_cell)) {
            result.counts.in_small_cells += obs.size();
            it = result.cells.erase(it);
            continue;
        }
        std::sort(obs.begin(), obs.end(), [](const Observation& a, const Observation& b) {
            return std::tie(a.market_id, a.tau_hours, a.price_fraction, a.contract_count, a.outcome) <
                   std::tie(b.market_id, b.tau_hours, b.price_fraction, b.contract_count, b.outcome);
        });
        result.counts.kept += obs.size();
        ++it;
    }
    return result;
}

// --- dataset summary -------------------------------------------------------

std::vector<DomainStats> dataset_stats(const std::vector<TradeRecord>& trades,
                                       const std::vector<MarketRecord>& markets, const DomainRuleSet& rules) {
    std::unordered_map<std::string, std::size_t> market_index;
    for (std::size_t i = 0; i < markets.size(); ++i) market_index.emplace(markets[i].market_id, i);

    std::vector<std::int64_t> market_trades(markets.size(), 0);
    std::vector<long double> market_contracts(markets.size(), 0);
    for (const auto& t : trades) {
        auto it = market_index.find(t.market_id);
        if (it == market_index.end()) continue;
        ++market_trades[it->second];
        market_contracts[it->second] += static_cast<long double>(t.count);
    }

    struct Acc {
        std::size_t markets = 0, trades = 0, resolved = 0, yes = 0;
        long double contracts = 0;
        std::vector<double> volumes;
    };
    std::map<std::string, Acc> by_domain;
    for (std::size_t i = 0; i < markets.size(); ++i) {
        const auto& m = markets[i];
        Acc& acc = by_domain[classify_domain(m, rules)];
        ++acc.markets;
        acc.trades += static_cast<std::size_t>(market_trades[i]);
        acc.contracts += market_contracts[i];
        if (m.outcome != Outcome::unresolved) {
            ++acc.resolved;
            if (m.outcome == Outcome::yes) ++acc.yes;
        }
        if (market_trades[i] > 0) acc.volumes.push_back(static_cast<double>(market_trades[i]));
    }

    std::vector<DomainStats> out;
    for (auto& [domain, acc] : by_domain) {
        DomainStats s;
        s.domain = domain;
        s.markets = acc.markets;
        s.trades = acc.trades;
        s.contracts = acc.contracts;
        s.resolved_pct = acc.markets ? 100.0 * static_cast<double>(acc.resolved) / static_cast<double>(acc.markets) : 0.0;
        s.base_rate_pct = acc.resolved ? 100.0 * static_cast<double>(acc.yes) / static_cast<double>(acc.resolved) : 0.0;
        s.median_volume = acc.volumes.empty() ? 0.0 : median(acc.volumes);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace pmcal
