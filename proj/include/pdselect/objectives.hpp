#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "pdselect/corpus.hpp"
#include "pdselect/divergence.hpp"
#include "pdselect/errors.hpp"
#include "pdselect/math.hpp"

namespace pdselect {

struct MarginRecord {
    std::string pair_id;
    double margin = 0.0;  // policy/reference log-ratio gap, scaled by beta
    double pd = 0.0;
};

/// Constants of the loss bounds: c1/c2 bracket the selected margins, c0/l1
/// summarize the complement, lambda is the selected fraction. lambda = 1 is
/// allowed with the declared empty-complement convention c0 = l1 = 0.
struct BoundParams {
    double c0 = 0.0;
    double c1 = 0.0;
    double c2 = 0.0;
    double l1 = 0.0;
    double lambda = 1.0;
    int kappa = 1;
    double r_bound = 1.0;

    void validate() const {
        if (!(c1 <= c2)) throw DataError("bound params require c1 <= c2");
        if (!(l1 >= 0.0)) throw DataError("bound params require l1 >= 0");
        if (!(lambda > 0.0 && lambda <= 1.0)) throw DataError("lambda must be in (0,1]");
        if (kappa < 1) throw DataError("kappa must be >= 1");
        if (!(r_bound > 0.0)) throw DataError("r_bound must be > 0");
    }
};

inline double preference_margin(const PreferencePair& pair, double beta) {
    if (!(beta > 0.0)) throw DataError("beta must be > 0");
    if (!pair.chosen.logp_policy || !pair.chosen.logp_ref || !pair.rejected.logp_policy ||
        !pair.rejected.logp_ref) {
        throw DataError("pair '" + pair.id + "' is missing log-probability fields");
    }
    return beta * ((*pair.chosen.logp_policy - *pair.chosen.logp_ref) -
                   (*pair.rejected.logp_policy - *pair.rejected.logp_ref));
}

/// Mean of -log sigmoid(kappa*margin + pd). Softplus-stable: finite for
/// arguments far beyond +-700.
inline double dmpo_loss(const std::vector<MarginRecord>& records, int kappa, bool use_pd) {
    if (records.empty()) throw DataError("no margin records");
    if (kappa < 1) throw DataError("kappa must be >= 1");
    double sum = 0.0;
    for (const auto& r : records) {
        const double arg = static_cast<double>(kappa) * r.margin + (use_pd ? r.pd : 0.0);
        sum += neg_log_sigmoid(arg);
    }
    return sum / static_cast<double>(records.size());
}

inline double dpo_loss(const std::vector<MarginRecord>& records) {
    if (records.empty()) throw DataError("no margin records");
    double sum = 0.0;
    for (const auto& r : records) sum += neg_log_sigmoid(r.margin);
    return sum / static_cast<double>(records.size());
}

/// Honest bound constants measured from the records themselves.
inline BoundParams estimate_bound_params(const std::vector<MarginRecord>& selected,
                                         const std::vector<MarginRecord>& complement, int kappa,
                                         double r_bound) {
    if (selected.empty()) throw DataError("no selected records");
    if (kappa < 1) throw DataError("kappa must be >= 1");
    if (!(r_bound > 0.0)) throw DataError("r_bound must be > 0");
    BoundParams p;
    p.kappa = kappa;
    p.r_bound = r_bound;
    p.c1 = selected.front().margin;
    p.c2 = selected.front().margin;
    for (const auto& r : selected) {
        p.c1 = std::min(p.c1, r.margin);
        p.c2 = std::max(p.c2, r.margin);
    }
    double margin_sum = 0.0;
    double l1_sum = 0.0;
    for (const auto& r : complement) {
        margin_sum += r.margin;
        l1_sum += neg_log_sigmoid(static_cast<double>(kappa) * r.margin);
    }
    if (!complement.empty()) {
        p.c0 = margin_sum / static_cast<double>(complement.size());
        p.l1 = l1_sum / static_cast<double>(complement.size());
    }
    p.lambda = static_cast<double>(selected.size()) /
               static_cast<double>(selected.size() + complement.size());
    return p;
}

struct Bounds {
    double lower = 0.0;
    double upper = 0.0;
};

/// Sandwich bounds on the selected+complement mixture loss. The complement
/// terms vanish under the lambda = 1 convention.
inline Bounds dmpo_bounds(const std::vector<double>& pd_selected,
                          const std::vector<double>& pd_complement, const BoundParams& params) {
    if (pd_selected.empty()) throw DataError("no selected pd values");
    params.validate();
    const double n_sel = static_cast<double>(pd_selected.size());
    const double n_tot = n_sel + static_cast<double>(pd_complement.size());
    if (std::fabs(params.lambda - n_sel / n_tot) > 1e-9) {
        throw DataError("lambda does not match the pd list sizes");
    }
    const double kappa = static_cast<double>(params.kappa);
    const double lam = params.lambda;

    Bounds b;
    b.lower = lam * neg_log_sigmoid(kappa * params.c2 + mean_or_zero(pd_selected));
    double upper_sel = 0.0;
    for (double pd : pd_selected) upper_sel += neg_log_sigmoid(kappa * params.c1 + pd);
    b.upper = lam * (upper_sel / n_sel);

    if (!pd_complement.empty()) {
        b.lower += (1.0 - lam) * neg_log_sigmoid(kappa * params.c0 + mean_or_zero(pd_complement));
        double comp_nls = 0.0;
        for (double pd : pd_complement) comp_nls += neg_log_sigmoid(pd);
        b.upper += (1.0 - lam) * (comp_nls / static_cast<double>(pd_complement.size()) + params.l1);
    }
    return b;
}

/// Side condition of the selection-optimality claim.
inline bool mild_condition(const BoundParams& params) {
    return 2.0 * static_cast<double>(params.kappa - 1) * params.r_bound /
               static_cast<double>(params.kappa) <=
           params.c2 - params.c0;
}

inline double win_score(long long wins, long long losses, long long total) {
    if (total <= 0) throw DataError("total must be positive");
    if (wins < 0 || losses < 0) throw DataError("counts must be nonnegative");
    if (wins + losses > total) throw DataError("wins + losses exceed total");
    return static_cast<double>(wins - losses) / static_cast<double>(total) + 1.0;
}

/// Pairs margins (from logp fields) with pd values (from the table) by id.
inline std::vector<MarginRecord> compute_margins(const AggregatedDataset& ds,
                                                 const PdScoreTable& table, double beta) {
    std::unordered_map<std::string, double> pd_by_id;
    pd_by_id.reserve(table.rows.size());
    for (const auto& row : table.rows) pd_by_id.emplace(row.id, row.pd);
    std::vector<MarginRecord> records;
    records.reserve(ds.pairs.size());
    for (const auto& p : ds.pairs) {
        const auto it = pd_by_id.find(p.id);
        if (it == pd_by_id.end()) throw DataError("pair '" + p.id + "' has no PD table row");
        MarginRecord r;
        r.pair_id = p.id;
        r.margin = preference_margin(p, beta);
        r.pd = it->second;
        records.push_back(std::move(r));
    }
    return records;
}

inline void save_margins(const std::vector<MarginRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    for (const auto& r : records) {
        ordered_json j;
        j["id"] = r.pair_id;
        j["margin"] = r.margin;
        j["pd"] = r.pd;
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("I/O error while writing '" + path + "'");
}

inline std::vector<MarginRecord> load_margins(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::vector<MarginRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        try {
            const ordered_json j = ordered_json::parse(line);
            MarginRecord r;
            r.pair_id = j.at("id").get<std::string>();
            r.margin = j.at("margin").get<double>();
            r.pd = j.at("pd").get<double>();
            if (!std::isfinite(r.margin)) {
                throw DataError("non-finite margin for '" + r.pair_id + "'");
            }
            records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw DataError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (records.empty()) throw DataError("no records in '" + path + "'");
    return records;
}

inline ordered_json bound_params_to_json(const BoundParams& p) {
    ordered_json j;
    j["c0"] = p.c0;
    j["c1"] = p.c1;
    j["c2"] = p.c2;
    j["l1"] = p.l1;
    j["lambda"] = p.lambda;
    j["kappa"] = p.kappa;
    j["r_bound"] = p.r_bound;
    return j;
}

inline ordered_json bounds_report_json(const Bounds& b, double measured, const BoundParams& p) {
    ordered_json j;
    j["lower"] = b.lower;
    j["upper"] = b.upper;
    j["measured"] = measured;
    j["mild_condition"] = mild_condition(p);
    j["params"] = bound_params_to_json(p);
    return j;
}

}  // namespace pdselect
