#pragma once

#include <iosfwd>
#include <map>
#include <memory>
#include <regex>
#include <string>
#include <vector>

#include "pmcal/types.hpp"

namespace pmcal {

enum class InputFormat { csv, jsonl };

// Bad rows are recorded, not silently dropped; the whole parse aborts only
// when more than max_bad_fraction of rows are malformed.
struct LedgerEntry {
    std::size_t line = 0;
    std::string message;
};

struct ParseOptions {
    InputFormat format = InputFormat::csv;
    double max_bad_fraction = 0.01;
};

template <typename Record>
struct ParseResult {
    std::vector<Record> records;
    std::vector<LedgerEntry> ledger;
    std::size_t total_rows = 0;
};

ParseResult<TradeRecord> parse_trades(std::istream& in, const ParseOptions& opts = {});
ParseResult<MarketRecord> parse_markets(std::istream& in, const ParseOptions& opts = {});

ParseResult<TradeRecord> parse_trades_file(const std::string& path, const ParseOptions& opts = {});
ParseResult<MarketRecord> parse_markets_file(const std::string& path, const ParseOptions& opts = {});

// --- domain classification ---------------------------------------------

enum class MatchKind { ticker_prefix, title_regex };

struct DomainRule {
    MatchKind kind = MatchKind::ticker_prefix;
    std::string pattern;
    std::string domain;
    std::shared_ptr<const std::regex> compiled;  // title_regex only
};

// Ordered rule list; first match wins. Regexes compile at load so bad
// patterns fail configuration, never classification.
struct DomainRuleSet {
    std::vector<DomainRule> rules;
    std::string fallback_domain = "Other";
};

DomainRuleSet parse_rules(std::istream& in);
DomainRuleSet parse_rules_file(const std::string& path);
DomainRuleSet compile_rules(std::vector<std::pair<std::string, std::string>> prefix_rules,
                            const std::string& fallback = "Other");

std::string classify_domain(const MarketRecord& market, const DomainRuleSet& rules);

// --- binning -------------------------------------------------------------

struct BinAssignment {
    int horizon_bin = 0;
    int size_bin = 0;
    bool negative_horizon = false;  // trade after close; bin clamped to 0
};

BinAssignment bin_trade(const TradeRecord& trade, const MarketRecord& market, const BinningConfig& cfg);

// --- grid assembly ---------------------------------------------------------

struct FilterCounts {
    std::size_t input_trades = 0;
    std::size_t unknown_market = 0;
    std::size_t unresolved_market = 0;
    std::size_t below_market_minimum = 0;
    std::size_t price_filtered = 0;
    std::size_t negative_horizon = 0;
    std::size_t masked_horizon = 0;
    std::size_t in_small_cells = 0;  // dropped with their under-threshold cell
    std::size_t kept = 0;            // observations in the returned grid
};

struct GridResult {
    std::map<CellKey, CellData> cells;
    std::vector<LedgerEntry> ledger;
    FilterCounts counts;
};

GridResult assemble_grid(const std::vector<TradeRecord>& trades,
                         const std::vector<MarketRecord>& markets,
                         const DomainRuleSet& rules,
                         const BinningConfig& bins = {},
                         const FilterConfig& filt = {});

// --- dataset summary -------------------------------------------------------

struct DomainStats {
    std::string domain;
    std::size_t markets = 0;
    std::size_t trades = 0;
    long double contracts = 0;
    double resolved_pct = 0.0;      // share of markets with a yes/no outcome
    double median_volume = 0.0;     // median trades per market (markets with >=1 trade)
    double base_rate_pct = 0.0;     // resolved markets with outcome = yes
};

std::vector<DomainStats> dataset_stats(const std::vector<TradeRecord>& trades,
                                       const std::vector<MarketRecord>& markets,
                                       const DomainRuleSet& rules);

}  // namespace pmcal
