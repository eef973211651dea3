#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "pdselect/corpus.hpp"
#include "pdselect/divergence.hpp"
#include "pdselect/errors.hpp"
#include "pdselect/math.hpp"
#include "pdselect/rng.hpp"

namespace pdselect {

enum class Strategy { PD, RAND, HIGH, MID };

inline std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::PD: return "PD";
        case Strategy::RAND: return "RAND";
        case Strategy::HIGH: return "HIGH";
        case Strategy::MID: return "MID";
    }
    throw DataError("unknown strategy");
}

inline Strategy strategy_from_name(const std::string& name) {
    if (name == "PD") return Strategy::PD;
    if (name == "RAND") return Strategy::RAND;
    if (name == "HIGH") return Strategy::HIGH;
    if (name == "MID") return Strategy::MID;
    throw DataError("unknown strategy '" + name + "'");
}

struct PdStats {
    double min = 0.0;
    double mean = 0.0;
    double max = 0.0;
};

struct SelectionReport {
    Strategy strategy = Strategy::PD;
    double lambda = 0.0;
    std::optional<std::uint64_t> seed;  // RAND only
    std::vector<std::string> selected_ids;
    std::optional<PdStats> selected_stats;    // absent when the selection is empty
    std::optional<PdStats> complement_stats;  // absent when lambda = 1
};

namespace detail {

inline std::optional<PdStats> stats_of(const std::vector<double>& v) {
    if (v.empty()) return std::nullopt;
    PdStats s;
    s.min = *std::min_element(v.begin(), v.end());
    s.max = *std::max_element(v.begin(), v.end());
    s.mean = mean_or_zero(v);
    return s;
}

/// Row indices ordered by (pd ascending, id ascending); the one total order
/// every strategy deduces its window from.
inline std::vector<std::size_t> pd_order(const PdScoreTable& table) {
    std::vector<std::size_t> order(table.rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (table.rows[a].pd != table.rows[b].pd) return table.rows[a].pd < table.rows[b].pd;
        return table.rows[a].id < table.rows[b].id;
    });
    return order;
}

inline SelectionReport finish_report(const PdScoreTable& table, Strategy strategy, double lambda,
                                     std::optional<std::uint64_t> seed,
                                     const std::vector<std::size_t>& picked) {
    SelectionReport report;
    report.strategy = strategy;
    report.lambda = lambda;
    report.seed = seed;
    std::vector<double> sel_pd, comp_pd;
    std::unordered_set<std::size_t> in_sel(picked.begin(), picked.end());
    for (std::size_t i : picked) {
        report.selected_ids.push_back(table.rows[i].id);
        sel_pd.push_back(table.rows[i].pd);
    }
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        if (!in_sel.count(i)) comp_pd.push_back(table.rows[i].pd);
    }
    report.selected_stats = stats_of(sel_pd);
    report.complement_stats = stats_of(comp_pd);
    return report;
}

inline void check_selection_args(const PdScoreTable& table, double lambda) {
    if (table.rows.empty()) throw DataError("empty PD table");
    if (!(lambda > 0.0 && lambda <= 1.0)) throw DataError("lambda must be in (0,1]");
}

}  // namespace detail

/// Budget under a fraction lambda: round-half-even of lambda*n, capped.
inline std::size_t selection_budget(double lambda, std::size_t n) {
    return scaled_count(lambda, n);
}

/// Keep the round(lambda*n) rows with the most negative pd; ties broken by
/// ascending id so selection is a pure function of the table.
inline SelectionReport select_pd(const PdScoreTable& table, double lambda) {
    detail::check_selection_args(table, lambda);
    const auto order = detail::pd_order(table);
    const std::size_t m = selection_budget(lambda, order.size());
    return detail::finish_report(table, Strategy::PD, lambda, std::nullopt,
                                 {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m)});
}

inline SelectionReport select_baseline(const PdScoreTable& table, Strategy strategy, double lambda,
                                       std::uint64_t seed = 0) {
    if (strategy == Strategy::PD) return select_pd(table, lambda);
    detail::check_selection_args(table, lambda);
    const std::size_t n = table.rows.size();
    const std::size_t m = selection_budget(lambda, n);
    std::vector<std::size_t> picked;
    switch (strategy) {
        case Strategy::RAND: {
            Rng rng(seed);
            picked = rng.sample_indices(n, m);
            return detail::finish_report(table, strategy, lambda, seed, picked);
        }
        case Strategy::HIGH: {
            auto order = detail::pd_order(table);
            // Largest pd first; the id tiebreak stays ascending.
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                if (table.rows[a].pd != table.rows[b].pd) return table.rows[a].pd > table.rows[b].pd;
                return table.rows[a].id < table.rows[b].id;
            });
            picked.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
            return detail::finish_report(table, strategy, lambda, std::nullopt, picked);
        }
        case Strategy::MID: {
            const auto order = detail::pd_order(table);
            const std::size_t start = (n - m) / 2;
            picked.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                          order.begin() + static_cast<std::ptrdiff_t>(start + m));
            return detail::finish_report(table, strategy, lambda, std::nullopt, picked);
        }
        case Strategy::PD: break;
    }
    throw DataError("unknown strategy");
}

/// Writes the selected pairs as a loadable corpus file. Records keep their
/// dataset order and content regardless of the strategy's internal ordering.
inline void write_subset(const AggregatedDataset& ds, const SelectionReport& report,
                         const std::string& path) {
    const auto index = index_by_id(ds);
    std::unordered_set<std::size_t> keep;
    for (const auto& id : report.selected_ids) {
        const auto it = index.find(id);
        if (it == index.end()) throw DataError("selected id '" + id + "' not in dataset");
        keep.insert(it->second);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << dataset_header_json(ds).dump() << '\n';
    for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
        if (keep.count(i)) out << pair_to_json(ds, ds.pairs[i]).dump() << '\n';
    }
    if (!out) throw DataError("I/O error while writing '" + path + "'");
}

namespace detail {

inline ordered_json stats_json(const std::optional<PdStats>& s) {
    if (!s) return nullptr;
    ordered_json j;
    j["min"] = s->min;
    j["mean"] = s->mean;
    j["max"] = s->max;
    return j;
}

inline std::optional<PdStats> stats_from_json(const ordered_json& j) {
    if (j.is_null()) return std::nullopt;
    PdStats s;
    s.min = j.at("min").get<double>();
    s.mean = j.at("mean").get<double>();
    s.max = j.at("max").get<double>();
    return s;
}

}  // namespace detail

inline ordered_json report_to_json(const SelectionReport& report) {
    ordered_json j;
    j["strategy"] = strategy_name(report.strategy);
    j["lambda"] = report.lambda;
    if (report.strategy == Strategy::RAND && report.seed) j["seed"] = *report.seed;
    j["selected_ids"] = report.selected_ids;
    j["pd_stats"] = {{"selected", detail::stats_json(report.selected_stats)},
                     {"complement", detail::stats_json(report.complement_stats)}};
    return j;
}

inline void save_report(const SelectionReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << report_to_json(report).dump(2) << '\n';
    if (!out) throw DataError("I/O error while writing '" + path + "'");
}

inline SelectionReport load_report(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    ordered_json j;
    try {
        j = ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad report file '" + path + "': " + e.what());
    }
    SelectionReport report;
    try {
        report.strategy = strategy_from_name(j.at("strategy").get<std::string>());
        report.lambda = j.at("lambda").get<double>();
        if (j.contains("seed")) report.seed = j["seed"].get<std::uint64_t>();
        report.selected_ids = j.at("selected_ids").get<std::vector<std::string>>();
        if (j.contains("pd_stats")) {
            report.selected_stats = detail::stats_from_json(j["pd_stats"].at("selected"));
            report.complement_stats = detail::stats_from_json(j["pd_stats"].at("complement"));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad report file '" + path + "': " + e.what());
    }
    std::unordered_set<std::string> uniq(report.selected_ids.begin(), report.selected_ids.end());
    if (uniq.size() != report.selected_ids.size()) {
        throw DataError("duplicate ids in report '" + path + "'");
    }
    return report;
}

}  // namespace pdselect
