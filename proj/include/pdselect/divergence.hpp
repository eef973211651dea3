#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pdselect/corpus.hpp"
#include "pdselect/errors.hpp"
#include "pdselect/math.hpp"
#include "pdselect/parallel.hpp"
#include "pdselect/reward.hpp"

namespace pdselect {

/// Foreign-aspect score gap on a pair, length-penalized with the same rho
/// used at training time.
inline double pseudo_gap(const RewardModel& model, const PreferencePair& pair, double rho) {
    if (pair.aspect == model.aspect) {
        throw DataError("pseudo_gap is cross-aspect only (pair '" + pair.id + "' belongs to aspect " +
                        std::to_string(model.aspect) + ")");
    }
    return reward_score(model, pair.chosen) - reward_score(model, pair.rejected) -
           rho * static_cast<double>(pair.len_diff());
}

struct QuantileScales {
    double gamma = 0.0;
    std::vector<double> q;  // one per aspect, from foreign-aspect gaps only
};

/// Clip gap/q into [-1,1]; a zero scale degenerates to the sign so the
/// consensus direction survives division-by-zero.
inline double normalize_gap(double gap, double q) {
    if (!(q >= 0.0)) throw DataError("quantile scale must be >= 0");
    if (q == 0.0) return sign_of(gap);
    return std::clamp(gap / q, -1.0, 1.0);
}

namespace detail {

inline void check_models(const AggregatedDataset& ds, const std::vector<RewardModel>& models) {
    if (static_cast<int>(models.size()) != ds.kappa()) {
        throw DataError("expected " + std::to_string(ds.kappa()) + " models, got " +
                        std::to_string(models.size()));
    }
    for (int k = 0; k < ds.kappa(); ++k) {
        const auto& m = models[static_cast<std::size_t>(k)];
        if (m.aspect != k) {
            throw DataError("model at position " + std::to_string(k) + " is for aspect " +
                            std::to_string(m.aspect) + "; models must be ordered by aspect");
        }
        if (static_cast<int>(m.weights.size()) != ds.feature_dim) {
            throw DataError("model for aspect " + std::to_string(k) + " has dimension " +
                            std::to_string(m.weights.size()) + ", dataset has " +
                            std::to_string(ds.feature_dim));
        }
    }
}

/// gaps[k][i] = pseudo_gap(model_k, pair_i) for foreign pairs; own-aspect
/// slots hold 0 and are never read.
inline std::vector<std::vector<double>> gap_matrix(const AggregatedDataset& ds,
                                                   const std::vector<RewardModel>& models,
                                                   double rho, int threads) {
    const auto kappa = static_cast<std::size_t>(ds.kappa());
    const std::size_t n = ds.pairs.size();
    std::vector<std::vector<double>> gaps(kappa, std::vector<double>(n, 0.0));
    parallel_for(n, threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const PreferencePair& p = ds.pairs[i];
            for (std::size_t k = 0; k < kappa; ++k) {
                if (static_cast<int>(k) == p.aspect) continue;
                gaps[k][i] = pseudo_gap(models[k], p, rho);
            }
        }
    });
    return gaps;
}

inline std::vector<double> quantiles_from_gaps(const AggregatedDataset& ds,
                                               const std::vector<std::vector<double>>& gaps,
                                               double gamma) {
    const auto kappa = static_cast<std::size_t>(ds.kappa());
    std::vector<double> q(kappa, 0.0);
    std::vector<double> abs_gaps;
    for (std::size_t k = 0; k < kappa; ++k) {
        abs_gaps.clear();
        for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
            if (ds.pairs[i].aspect == static_cast<int>(k)) continue;
            abs_gaps.push_back(std::fabs(gaps[k][i]));
        }
        if (abs_gaps.empty()) continue;
        std::sort(abs_gaps.begin(), abs_gaps.end());
        q[k] = abs_gaps[nearest_rank(gamma, abs_gaps.size()) - 1];
    }
    return q;
}

}  // namespace detail

/// Per-aspect nearest-rank gamma-quantile of the absolute foreign gaps.
inline QuantileScales compute_quantile_scales(const AggregatedDataset& ds,
                                              const std::vector<RewardModel>& models, double rho,
                                              double gamma, int threads = 1) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw DataError("gamma must be in (0,1)");
    detail::check_models(ds, models);
    QuantileScales scales;
    scales.gamma = gamma;
    scales.q = detail::quantiles_from_gaps(ds, detail::gap_matrix(ds, models, rho, threads), gamma);
    return scales;
}

struct PdRow {
    std::string id;
    int aspect = 0;
    std::vector<double> raw_gaps;         // per aspect; own slot 0, unused
    std::vector<double> normalized_gaps;  // per aspect; own slot 0, excluded from pd
    double pd = 0.0;
};

struct PdScoreTable {
    std::vector<std::string> aspect_names;
    double gamma = 0.0;
    std::vector<double> q;
    std::vector<PdRow> rows;  // dataset order
};

/// Full PD pass: cross gaps, quantile scaling, clipped normalization, then
/// pd = -sum of foreign normalized gaps (ascending aspect order).
inline PdScoreTable compute_pd_table(const AggregatedDataset& ds,
                                     const std::vector<RewardModel>& models, double rho,
                                     double gamma, int threads = 1) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw DataError("gamma must be in (0,1)");
    detail::check_models(ds, models);
    const auto kappa = static_cast<std::size_t>(ds.kappa());
    const auto gaps = detail::gap_matrix(ds, models, rho, threads);

    PdScoreTable table;
    table.aspect_names = ds.aspect_names;
    table.gamma = gamma;
    table.q = detail::quantiles_from_gaps(ds, gaps, gamma);
    table.rows.resize(ds.pairs.size());
    parallel_for(ds.pairs.size(), threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const PreferencePair& p = ds.pairs[i];
            PdRow& row = table.rows[i];
            row.id = p.id;
            row.aspect = p.aspect;
            row.raw_gaps.assign(kappa, 0.0);
            row.normalized_gaps.assign(kappa, 0.0);
            double sum = 0.0;
            for (std::size_t k = 0; k < kappa; ++k) {
                if (static_cast<int>(k) == p.aspect) continue;
                row.raw_gaps[k] = gaps[k][i];
                row.normalized_gaps[k] = normalize_gap(gaps[k][i], table.q[k]);
                sum += row.normalized_gaps[k];
            }
            row.pd = -sum + 0.0;  // + 0.0 turns the empty-sum -0.0 into +0.0
        }
    });
    return table;
}

/// JSONL: one row object per pair (dataset order), then a trailer line with
/// gamma and the per-aspect scales.
inline void save_pd_table(const PdScoreTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    for (const auto& row : table.rows) {
        ordered_json j;
        j["id"] = row.id;
        j["aspect"] = table.aspect_names[static_cast<std::size_t>(row.aspect)];
        ordered_json gaps = ordered_json::object();
        for (std::size_t k = 0; k < table.aspect_names.size(); ++k) {
            if (static_cast<int>(k) == row.aspect) continue;
            gaps[table.aspect_names[k]] = row.normalized_gaps[k];
        }
        j["normalized_gaps"] = gaps;
        j["pd"] = row.pd;
        out << j.dump() << '\n';
    }
    ordered_json trailer;
    trailer["gamma"] = table.gamma;
    ordered_json q = ordered_json::object();
    for (std::size_t k = 0; k < table.aspect_names.size(); ++k) q[table.aspect_names[k]] = table.q[k];
    trailer["q"] = q;
    out << trailer.dump() << '\n';
    if (!out) throw DataError("I/O error while writing '" + path + "'");
}

inline PdScoreTable load_pd_table(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::vector<ordered_json> lines;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        try {
            lines.push_back(ordered_json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw DataError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (lines.empty()) throw DataError("no rows in '" + path + "'");
    const ordered_json trailer = lines.back();
    lines.pop_back();
    if (!trailer.contains("gamma") || !trailer.contains("q")) {
        throw DataError("missing trailer line in '" + path + "'");
    }

    PdScoreTable table;
    table.gamma = trailer["gamma"].get<double>();
    std::unordered_map<std::string, int> aspect_index;
    for (const auto& [name, value] : trailer["q"].items()) {
        aspect_index.emplace(name, static_cast<int>(table.aspect_names.size()));
        table.aspect_names.push_back(name);
        table.q.push_back(value.get<double>());
        if (!(table.q.back() >= 0.0)) throw DataError("negative quantile scale in '" + path + "'");
    }

    const auto kappa = table.aspect_names.size();
    for (const auto& j : lines) {
        PdRow row;
        try {
            row.id = j.at("id").get<std::string>();
            const std::string aspect_name = j.at("aspect").get<std::string>();
            const auto it = aspect_index.find(aspect_name);
            if (it == aspect_index.end()) {
                throw DataError("unknown aspect '" + aspect_name + "' in row '" + row.id + "'");
            }
            row.aspect = it->second;
            row.normalized_gaps.assign(kappa, 0.0);
            double sum = 0.0;
            for (const auto& [name, value] : j.at("normalized_gaps").items()) {
                const auto git = aspect_index.find(name);
                if (git == aspect_index.end() || git->second == row.aspect) {
                    throw DataError("bad gap key '" + name + "' in row '" + row.id + "'");
                }
                row.normalized_gaps[static_cast<std::size_t>(git->second)] = value.get<double>();
            }
            for (std::size_t k = 0; k < kappa; ++k) {
                if (static_cast<int>(k) == row.aspect) continue;
                const double g = row.normalized_gaps[k];
                if (!(g >= -1.0 && g <= 1.0)) {
                    throw DataError("normalized gap out of [-1,1] in row '" + row.id + "'");
                }
                sum += g;
            }
            row.pd = j.at("pd").get<double>();
            if (std::fabs(row.pd + sum) > 1e-12) {
                throw DataError("pd does not match its gaps in row '" + row.id + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw DataError("bad table row: " + std::string(e.what()));
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

}  // namespace pdselect
