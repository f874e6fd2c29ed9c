#include <doctest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "pmcal/errors.hpp"
#include "pmcal/ingest.hpp"
#include "test_support.hpp"

using namespace pmcal;

#ifndef PMCAL_TEST_DATA_DIR
#define PMCAL_TEST_DATA_DIR "tests/data"
#endif

namespace {

std::string data_path(const std::string& name) { return std::string(PMCAL_TEST_DATA_DIR) + "/" + name; }

MarketRecord market(const std::string& id, const std::string& ticker, std::int64_t close, Outcome outcome,
                    const std::string& title = "t") {
    MarketRecord m;
    m.market_id = id;
    m.event_ticker = ticker;
    m.title = title;
    m.close_time_ms = close;
    m.outcome = outcome;
    return m;
}

TradeRecord trade(const std::string& id, int price, std::int64_t count, std::int64_t ts) {
    TradeRecord t;
    t.market_id = id;
    t.price_cents = price;
    t.count = count;
    t.side = Side::yes;
    t.timestamp_ms = ts;
    return t;
}

}  // namespace

TEST_SUITE("ingest") {

TEST_CASE("single csv row maps fields directly") {
    std::istringstream in("market_id,price_cents,count,side,timestamp_ms\nm1,62,40,yes,1700000000000\n");
    const auto result = parse_trades(in);
    REQUIRE(result.records.size() == 1);
    CHECK(result.records[0].market_id == "m1");
    CHECK(result.records[0].price_cents == 62);
    CHECK(result.records[0].count == 40);
    CHECK(result.records[0].side == Side::yes);
    CHECK(result.records[0].timestamp_ms == 1700000000000LL);
}

TEST_CASE("committed three-row fixture parses in file order") {
    const auto result = parse_trades_file(data_path("trades_small.csv"));
    REQUIRE(result.records.size() == 3);
    CHECK(result.records[0].market_id == "m1");
    CHECK(result.records[1].market_id == "m2");
    CHECK(result.records[2].price_cents == 70);
    CHECK(result.ledger.empty());
}

TEST_CASE("out-of-range price lands in the ledger") {
    std::ostringstream file;
    file << "market_id,price_cents,count,side,timestamp_ms\n";
    for (int i = 0; i < 200; ++i) file << "m" << i << ",50,1,yes,1000\n";
    file << "bad,0,1,yes,1000\n";
    std::istringstream in(file.str());
    const auto result = parse_trades(in);
    CHECK(result.records.size() == 200);
    REQUIRE(result.ledger.size() == 1);
    CHECK(result.ledger[0].line == 202);  // header + 200 rows + 1
    CHECK(result.ledger[0].message.find("price") != std::string::npos);
}

TEST_CASE("parse aborts when more than 1% of rows are malformed") {
    std::ostringstream file;
    file << "market_id,price_cents,count,side,timestamp_ms\n";
    for (int i = 0; i < 50; ++i) file << "m,50,1,yes,1000\n";
    file << "bad,0,1,yes,1000\nbad,101,1,yes,1000\n";
    std::istringstream in(file.str());
    CHECK_THROWS_AS((void)parse_trades(in), DataError);
}

TEST_CASE("jsonl trades parse") {
    std::istringstream in(
        R"({"market_id":"m1","price_cents":62,"count":40,"side":"yes","timestamp_ms":1700000000000})"
        "\n"
        R"({"market_id":"m2","price_cents":35,"count":1,"side":"no","timestamp_ms":1700000100000})"
        "\n");
    const auto result = parse_trades(in, {.format = InputFormat::jsonl});
    REQUIRE(result.records.size() == 2);
    CHECK(result.records[1].side == Side::no);
}

TEST_CASE("markets csv parses quoted titles and outcomes") {
    const auto result = parse_markets_file(data_path("markets_small.csv"));
    REQUIRE(result.records.size() == 3);
    CHECK(result.records[0].title == "Will the Lakers win, tonight?");
    CHECK(result.records[0].outcome == Outcome::yes);
    CHECK(result.records[2].outcome == Outcome::unresolved);
}

TEST_CASE("classification: fallback, prefix rule, first match wins") {
    const MarketRecord m = market("x", "KXNBAGAME-25NOV28", 0, Outcome::yes, "NBA game");
    CHECK(classify_domain(m, DomainRuleSet{}) == "Other");

    const auto rules = parse_rules_file(data_path("rules_small.csv"));
    CHECK(classify_domain(m, rules) == "Sports");
    CHECK(classify_domain(market("y", "KXBTC-DEC", 0, Outcome::no), rules) == "Crypto");
    CHECK(classify_domain(market("z", "NONE", 0, Outcome::no, "Election night"), rules) == "Politics");

    DomainRuleSet two;
    two.rules.push_back({MatchKind::ticker_prefix, "KX", "First", nullptr});
    two.rules.push_back({MatchKind::ticker_prefix, "KXNBA", "Second", nullptr});
    CHECK(classify_domain(m, two) == "First");
}

TEST_CASE("classification is pure") {
    const auto rules = parse_rules_file(data_path("rules_small.csv"));
    const MarketRecord m = market("x", "KXNBA-1", 0, Outcome::yes);
    const std::string first = classify_domain(m, rules);
    for (int i = 0; i < 10; ++i) CHECK(classify_domain(m, rules) == first);
}

TEST_CASE("bad regex fails at rule load") {
    std::istringstream in("match_kind,pattern,domain\ntitle_regex,[unclosed,Politics\n");
    CHECK_THROWS_AS((void)parse_rules(in), ConfigError);
}

TEST_CASE("horizon and size binning") {
    const BinningConfig bins;
    const MarketRecord m = market("m", "T", 100 * kMsPerHour, Outcome::yes);

    auto bin_of = [&](std::int64_t tau_ms, std::int64_t count) {
        return bin_trade(trade("m", 50, count, m.close_time_ms - tau_ms), m, bins);
    };

    CHECK(bin_of(90 * 60 * 1000, 1).horizon_bin == 1);  // 90 minutes
    CHECK(bin_of(0, 1).horizon_bin == 0);
    CHECK(bin_of(1 * kMsPerHour, 1).horizon_bin == 1);  // left-closed
    CHECK(bin_of(30 * kMsPerDay, 1).horizon_bin == 8);
    CHECK(bin_of(30 * kMsPerDay - 1, 1).horizon_bin == 7);
    CHECK(bin_of(365 * kMsPerDay, 1).horizon_bin == 8);

    CHECK(bin_of(1000, 1).size_bin == 0);
    CHECK(bin_of(1000, 2).size_bin == 1);
    CHECK(bin_of(1000, 10).size_bin == 1);
    CHECK(bin_of(1000, 11).size_bin == 2);
    CHECK(bin_of(1000, 100).size_bin == 2);
    CHECK(bin_of(1000, 101).size_bin == 3);

    const auto neg = bin_of(-5, 1);
    CHECK(neg.negative_horizon);
}

TEST_CASE("assemble_grid applies the filter chain") {
    const DomainRuleSet rules = compile_rules({{"A", "Alpha"}});
    BinningConfig bins;
    FilterConfig filt;
    filt.min_trades_per_market = 2;
    filt.min_trades_per_cell = 3;

    std::vector<MarketRecord> markets = {
        market("m1", "A1", 1000 * kMsPerHour, Outcome::yes),
        market("m2", "A2", 1000 * kMsPerHour, Outcome::no),
        market("m3", "A3", 1000 * kMsPerHour, Outcome::unresolved),
        market("m4", "A4", 1000 * kMsPerHour, Outcome::yes),
    };
    const std::int64_t ts = 1000 * kMsPerHour - 30 * 60 * 1000;  // tau = 30min -> bin 0
    std::vector<TradeRecord> trades = {
        trade("m1", 50, 1, ts),   trade("m1", 3, 1, ts),    trade("m1", 95, 1, ts),
        trade("m1", 60, 1, ts),   trade("m2", 40, 1, ts),   trade("m2", 45, 1, ts),
        trade("m3", 50, 1, ts),   trade("m3", 55, 1, ts),
        trade("m4", 50, 1, ts),                               // below market minimum
        trade("ghost", 50, 1, ts),                            // unknown market
    };

    const auto grid = assemble_grid(trades, markets, rules, bins, filt);
    CHECK(grid.counts.unknown_market == 1);
    CHECK(grid.counts.unresolved_market == 2);
    CHECK(grid.counts.below_market_minimum == 1);
    CHECK(grid.counts.price_filtered == 1);  // the 3-cent trade
    REQUIRE(grid.ledger.size() == 1);

    // m1 contributes 3 kept trades and m2 two; single cell (Alpha, 0, 0) has 5 >= 3
    const CellKey key{"Alpha", 0, 0};
    REQUIRE(grid.cells.count(key) == 1);
    CHECK(grid.cells.at(key).observations.size() == 5);
    CHECK(grid.counts.kept == 5);

    // price filter endpoints are inclusive
    const auto& obs = grid.cells.at(key).observations;
    CHECK(std::any_of(obs.begin(), obs.end(), [](const Observation& o) { return o.price_fraction == 0.95; }));
}

TEST_CASE("cell threshold is >=") {
    const DomainRuleSet rules = compile_rules({{"A", "Alpha"}});
    FilterConfig filt;
    filt.min_trades_per_market = 1;
    filt.min_trades_per_cell = 200;
    std::vector<MarketRecord> markets = {market("m1", "A1", 1000 * kMsPerHour, Outcome::yes)};
    std::vector<TradeRecord> trades;
    const std::int64_t ts = 1000 * kMsPerHour - 1000;
    for (int i = 0; i < 200; ++i) trades.push_back(trade("m1", 50, 1, ts));
    const auto grid = assemble_grid(trades, markets, rules, {}, filt);
    REQUIRE(grid.cells.size() == 1);
    CHECK(grid.cells.begin()->second.observations.size() == 200);
}

TEST_CASE("grid is invariant under input permutation") {
    const DomainRuleSet rules = compile_rules({{"A", "Alpha"}, {"B", "Beta"}});
    FilterConfig filt;
    filt.min_trades_per_market = 1;
    filt.min_trades_per_cell = 1;

    Rng rng(99);
    std::vector<MarketRecord> markets;
    std::vector<TradeRecord> trades;
    for (int m = 0; m < 20; ++m) {
        const std::string id = "m" + std::to_string(m);
        markets.push_back(market(id, m % 2 ? "A" : "B", 1000 * kMsPerHour,
                                 rng.bernoulli(0.5) ? Outcome::yes : Outcome::no));
        for (int k = 0; k < 30; ++k) {
            trades.push_back(trade(id, 5 + static_cast<int>(rng.uniform_int(91)),
                                   1 + static_cast<std::int64_t>(rng.uniform_int(300)),
                                   1000 * kMsPerHour - static_cast<std::int64_t>(rng.uniform_int(40 * 24) + 1) *
                                                           kMsPerHour));
        }
    }
    const auto grid1 = assemble_grid(trades, markets, rules, {}, filt);

    std::mt19937 shuffler(5);
    std::shuffle(trades.begin(), trades.end(), shuffler);
    std::shuffle(markets.begin(), markets.end(), shuffler);
    const auto grid2 = assemble_grid(trades, markets, rules, {}, filt);

    REQUIRE(grid1.cells.size() == grid2.cells.size());
    auto it2 = grid2.cells.begin();
    std::size_t total = 0;
    for (auto it1 = grid1.cells.begin(); it1 != grid1.cells.end(); ++it1, ++it2) {
        CHECK(it1->first == it2->first);
        REQUIRE(it1->second.observations.size() == it2->second.observations.size());
        for (std::size_t i = 0; i < it1->second.observations.size(); ++i) {
            const auto& a = it1->second.observations[i];
            const auto& b = it2->second.observations[i];
            CHECK(a.market_id == b.market_id);
            CHECK(a.price_fraction == b.price_fraction);
            CHECK(a.contract_count == b.contract_count);
            CHECK(a.outcome == b.outcome);
        }
        total += it1->second.observations.size();
    }
    // every filtered trade lands in exactly one cell
    CHECK(total == grid1.counts.kept);
}

TEST_CASE("reliable horizon mask drops other bins") {
    const DomainRuleSet rules = compile_rules({{"A", "Alpha"}});
    FilterConfig filt;
    filt.min_trades_per_market = 1;
    filt.min_trades_per_cell = 1;
    filt.reliable_horizon_mask = std::set<int>{2, 3};
    std::vector<MarketRecord> markets = {market("m1", "A", 1000 * kMsPerHour, Outcome::yes)};
    std::vector<TradeRecord> trades = {
        trade("m1", 50, 1, 1000 * kMsPerHour - 30 * 60 * 1000),      // bin 0
        trade("m1", 50, 1, 1000 * kMsPerHour - 4 * kMsPerHour),      // bin 2
        trade("m1", 50, 1, 1000 * kMsPerHour - 8 * kMsPerHour),      // bin 3
    };
    const auto grid = assemble_grid(trades, markets, rules, {}, filt);
    CHECK(grid.counts.masked_horizon == 1);
    CHECK(grid.counts.kept == 2);
}

TEST_CASE("dataset stats basics") {
    const DomainRuleSet rules = compile_rules({{"A", "Alpha"}});
    SUBCASE("single market") {
        std::vector<MarketRecord> markets = {market("m1", "A", 1000, Outcome::yes)};
        std::vector<TradeRecord> trades = {trade("m1", 50, 2, 1), trade("m1", 60, 3, 2), trade("m1", 40, 5, 3)};
        const auto stats = dataset_stats(trades, markets, rules);
        REQUIRE(stats.size() == 1);
        CHECK(stats[0].domain == "Alpha");
        CHECK(stats[0].base_rate_pct == doctest::Approx(100.0));
        CHECK(stats[0].median_volume == doctest::Approx(3.0));
        CHECK(stats[0].contracts == doctest::Approx(10.0));
    }
    SUBCASE("two markets split yes/no") {
        std::vector<MarketRecord> markets = {market("m1", "A", 1000, Outcome::yes),
                                             market("m2", "A", 1000, Outcome::no)};
        std::vector<TradeRecord> trades = {trade("m1", 50, 1, 1), trade("m2", 50, 1, 1)};
        const auto stats = dataset_stats(trades, markets, rules);
        REQUIRE(stats.size() == 1);
        CHECK(stats[0].base_rate_pct == doctest::Approx(50.0));
        CHECK(stats[0].markets == 2);
    }
}

}  // TEST_SUITE
