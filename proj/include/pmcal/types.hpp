#pragma once

#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace pmcal {

enum class Side { yes, no };
enum class Outcome { yes, no, unresolved };

// One executed trade. Prices are integer cents in [1, 99].
struct TradeRecord {
    std::string market_id;
    int price_cents = 0;
    std::int64_t count = 0;
    Side side = Side::yes;
    std::int64_t timestamp_ms = 0;
};

// One resolvable binary contract.
struct MarketRecord {
    std::string market_id;
    std::string event_ticker;
    std::string title;
    std::int64_t close_time_ms = 0;
    Outcome outcome = Outcome::unresolved;
};

constexpr std::int64_t kMsPerHour = 3600LL * 1000;
constexpr std::int64_t kMsPerDay = 24 * kMsPerHour;

// Horizon and size binning for the (domain, horizon, size) grid.
struct BinningConfig {
    // Upper edges of the first T-1 horizon bins, in ms; the last bin is
    // unbounded. Bins are left-closed, right-open.
    std::vector<std::int64_t> horizon_edges_ms = {
        1 * kMsPerHour, 3 * kMsPerHour,  6 * kMsPerHour, 12 * kMsPerHour,
        24 * kMsPerHour, 48 * kMsPerHour, 7 * kMsPerDay,  30 * kMsPerDay};
    // Upper bounds (inclusive) of the first S-1 size bins; the last bin is
    // unbounded. Defaults: Single=1, Small=2-10, Medium=11-100, Large=>100.
    std::vector<std::int64_t> size_upper = {1, 10, 100};
    // Representative log trade size per bin (geometric mean of the bin
    // range, Large capped at 1000); centred downstream where needed.
    std::vector<double> representative_log_size = {
        0.0,
        0.5 * (std::log(2.0) + std::log(10.0)),
        0.5 * (std::log(11.0) + std::log(100.0)),
        0.5 * (std::log(101.0) + std::log(1000.0))};

    int horizon_bins() const { return static_cast<int>(horizon_edges_ms.size()) + 1; }
    int size_bins() const { return static_cast<int>(size_upper.size()) + 1; }

    int horizon_bin(std::int64_t tau_ms) const {
        int b = 0;
        while (b < static_cast<int>(horizon_edges_ms.size()) && tau_ms >= horizon_edges_ms[b]) ++b;
        return b;
    }
    int size_bin(std::int64_t count) const {
        int b = 0;
        while (b < static_cast<int>(size_upper.size()) && count > size_upper[b]) ++b;
        return b;
    }

    static const std::array<const char*, 9> kHorizonLabels;
    static const std::array<const char*, 4> kSizeLabels;
};

inline const std::array<const char*, 9> BinningConfig::kHorizonLabels = {
    "0-1h", "1-3h", "3-6h", "6-12h", "12-24h", "24-48h", "2d-1w", "1w-1mo", "1mo+"};
inline const std::array<const char*, 4> BinningConfig::kSizeLabels = {"Single", "Small", "Medium", "Large"};

struct FilterConfig {
    int price_min = 5;   // cents, inclusive
    int price_max = 95;  // cents, inclusive
    int min_trades_per_market = 10;
    int min_trades_per_cell = 200;
    bool drop_negative_horizon = true;
    std::optional<std::set<int>> reliable_horizon_mask;  // keep only these bins
};

struct CellKey {
    std::string domain;
    int horizon_bin = 0;
    int size_bin = 0;

    auto operator<=>(const CellKey&) const = default;
};

struct Observation {
    double price_fraction = 0.0;  // cents / 100
    int outcome = 0;              // 1 iff market resolved yes
    std::int64_t contract_count = 1;
    std::string market_id;
    double tau_hours = 0.0;  // time-to-resolution at execution
};

struct CellData {
    CellKey key;
    std::vector<Observation> observations;
};

}  // namespace pmcal
