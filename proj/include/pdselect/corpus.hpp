#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "pdselect/errors.hpp"

namespace pdselect {

using ordered_json = nlohmann::ordered_json;

/// One candidate response. Raw text is optional; the pipeline operates on
/// caller-supplied feature vectors and token counts only.
struct Response {
    std::optional<std::string> text;
    std::vector<double> features;
    std::int64_t length = 0;
    std::optional<double> logp_policy;  // sum log-prob under the policy
    std::optional<double> logp_ref;     // sum log-prob under the reference
};

/// Synthetic-data ground truth: latent holistic and per-aspect scores,
/// plus the conflict flag (aspect order contradicts holistic order).
struct GroundTruth {
    double holistic_chosen = 0.0;
    double holistic_rejected = 0.0;
    std::vector<double> aspect_scores_chosen;
    std::vector<double> aspect_scores_rejected;
    bool conflict = false;
};

/// A labeled pair tagged with the single sub-preference aspect that
/// produced its label.
struct PreferencePair {
    std::string id;
    int aspect = 0;  // index into AggregatedDataset::aspect_names
    std::string prompt_id;
    Response chosen;
    Response rejected;
    std::optional<GroundTruth> truth;

    std::int64_t len_diff() const { return chosen.length - rejected.length; }
};

/// Union of kappa sub-preference datasets; each pair belongs to exactly one.
struct AggregatedDataset {
    std::vector<std::string> aspect_names;
    int feature_dim = 0;
    std::vector<PreferencePair> pairs;
    std::optional<ordered_json> synth_config;  // echoed into the header line

    int kappa() const { return static_cast<int>(aspect_names.size()); }
};

/// Evaluates Definition-style conflict at the pair's own aspect: the aspect
/// says chosen wins strictly while the holistic score says it loses.
inline bool conflict_flag(const GroundTruth& t, int aspect) {
    return t.aspect_scores_chosen[static_cast<std::size_t>(aspect)] >
               t.aspect_scores_rejected[static_cast<std::size_t>(aspect)] &&
           t.holistic_chosen < t.holistic_rejected;
}

namespace detail {

inline DataError line_error(std::size_t line_no, const std::string& msg) {
    return DataError("line " + std::to_string(line_no) + ": " + msg);
}

inline void check_finite_features(const std::vector<double>& v,
                                  const std::string& where, const std::string& id,
                                  std::size_t line_no) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw line_error(line_no, where + " has a non-finite feature value (record '" + id + "')");
        }
    }
}

inline Response parse_response(const ordered_json& j, int feature_dim,
                               const std::string& where, const std::string& id,
                               std::size_t line_no) {
    if (!j.is_object()) throw line_error(line_no, where + " must be an object (record '" + id + "')");
    Response r;
    if (!j.contains("features") || !j["features"].is_array()) {
        throw line_error(line_no, where + ".features missing or not an array (record '" + id + "')");
    }
    r.features = j["features"].get<std::vector<double>>();
    if (static_cast<int>(r.features.size()) != feature_dim) {
        throw line_error(line_no, where + ".features has " + std::to_string(r.features.size()) +
                                      " entries, expected " + std::to_string(feature_dim) +
                                      " (record '" + id + "')");
    }
    check_finite_features(r.features, where, id, line_no);
    if (!j.contains("length") || !j["length"].is_number_integer()) {
        throw line_error(line_no, where + ".length missing or not an integer (record '" + id + "')");
    }
    r.length = j["length"].get<std::int64_t>();
    if (r.length < 0) throw line_error(line_no, where + ".length is negative (record '" + id + "')");
    if (j.contains("text")) r.text = j["text"].get<std::string>();
    if (j.contains("logp_policy")) r.logp_policy = j["logp_policy"].get<double>();
    if (j.contains("logp_ref")) r.logp_ref = j["logp_ref"].get<double>();
    return r;
}

inline ordered_json response_to_json(const Response& r) {
    ordered_json j;
    j["features"] = r.features;
    j["length"] = r.length;
    if (r.text) j["text"] = *r.text;
    if (r.logp_policy) j["logp_policy"] = *r.logp_policy;
    if (r.logp_ref) j["logp_ref"] = *r.logp_ref;
    return j;
}

}  // namespace detail

/// Loads and validates a corpus JSONL file: one header line declaring
/// kappa/aspects/feature_dim, then one pair per line. Fail-fast with line
/// numbers; record order is preserved.
inline AggregatedDataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");

    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    // Drop trailing blank lines; blank lines elsewhere are rejected below.
    while (!lines.empty() && lines.back().find_first_not_of(" \t") == std::string::npos) {
        lines.pop_back();
    }
    if (lines.empty()) throw DataError("no records in '" + path + "'");
    if (lines[0].size() >= 3 && static_cast<unsigned char>(lines[0][0]) == 0xEF &&
        static_cast<unsigned char>(lines[0][1]) == 0xBB &&
        static_cast<unsigned char>(lines[0][2]) == 0xBF) {
        throw DataError("UTF-8 BOM not allowed in '" + path + "'");
    }

    AggregatedDataset ds;
    std::unordered_map<std::string, int> aspect_index;
    {
        ordered_json header;
        try {
            header = ordered_json::parse(lines[0]);
        } catch (const nlohmann::json::exception& e) {
            throw detail::line_error(1, std::string("header parse error: ") + e.what());
        }
        if (!header.is_object() || !header.contains("kappa") || !header.contains("aspects") ||
            !header.contains("feature_dim")) {
            throw detail::line_error(1, "header must declare kappa, aspects, feature_dim");
        }
        const int kappa = header["kappa"].get<int>();
        if (kappa < 1) throw detail::line_error(1, "kappa must be >= 1");
        ds.aspect_names = header["aspects"].get<std::vector<std::string>>();
        if (static_cast<int>(ds.aspect_names.size()) != kappa) {
            throw detail::line_error(1, "aspects list length does not match kappa");
        }
        ds.feature_dim = header["feature_dim"].get<int>();
        if (ds.feature_dim < 1) throw detail::line_error(1, "feature_dim must be >= 1");
        for (int k = 0; k < kappa; ++k) {
            if (!aspect_index.emplace(ds.aspect_names[static_cast<std::size_t>(k)], k).second) {
                throw detail::line_error(1, "duplicate aspect name '" +
                                                ds.aspect_names[static_cast<std::size_t>(k)] + "'");
            }
        }
        if (header.contains("synth_config")) ds.synth_config = header["synth_config"];
    }

    std::unordered_set<std::string> seen_ids;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::size_t line_no = i + 1;
        if (lines[i].find_first_not_of(" \t") == std::string::npos) {
            throw detail::line_error(line_no, "blank line inside record stream");
        }
        ordered_json j;
        try {
            j = ordered_json::parse(lines[i]);
        } catch (const nlohmann::json::exception& e) {
            throw detail::line_error(line_no, std::string("parse error: ") + e.what());
        }
        if (!j.is_object()) throw detail::line_error(line_no, "record is not an object");

        PreferencePair p;
        if (!j.contains("id") || !j["id"].is_string()) {
            throw detail::line_error(line_no, "record is missing a string id");
        }
        p.id = j["id"].get<std::string>();
        if (!seen_ids.insert(p.id).second) {
            throw detail::line_error(line_no, "duplicate id '" + p.id + "'");
        }
        if (!j.contains("aspect") || !j["aspect"].is_string()) {
            throw detail::line_error(line_no, "record '" + p.id + "' is missing a string aspect");
        }
        const std::string aspect_name = j["aspect"].get<std::string>();
        const auto it = aspect_index.find(aspect_name);
        if (it == aspect_index.end()) {
            throw detail::line_error(line_no, "unknown aspect '" + aspect_name + "' (record '" + p.id + "')");
        }
        p.aspect = it->second;
        p.prompt_id = j.value("prompt_id", std::string{});
        if (!j.contains("chosen") || !j.contains("rejected")) {
            throw detail::line_error(line_no, "record '" + p.id + "' must have chosen and rejected");
        }
        p.chosen = detail::parse_response(j["chosen"], ds.feature_dim, "chosen", p.id, line_no);
        p.rejected = detail::parse_response(j["rejected"], ds.feature_dim, "rejected", p.id, line_no);

        if (j.contains("truth")) {
            const auto& t = j["truth"];
            GroundTruth g;
            try {
                g.holistic_chosen = t.at("holistic_chosen").get<double>();
                g.holistic_rejected = t.at("holistic_rejected").get<double>();
                g.aspect_scores_chosen = t.at("aspect_scores_chosen").get<std::vector<double>>();
                g.aspect_scores_rejected = t.at("aspect_scores_rejected").get<std::vector<double>>();
            } catch (const nlohmann::json::exception& e) {
                throw detail::line_error(line_no, "bad truth record for '" + p.id + "': " + e.what());
            }
            const auto kappa = ds.aspect_names.size();
            if (g.aspect_scores_chosen.size() != kappa || g.aspect_scores_rejected.size() != kappa) {
                throw detail::line_error(line_no, "truth aspect score vectors must have kappa entries (record '" + p.id + "')");
            }
            g.conflict = conflict_flag(g, p.aspect);
            p.truth = std::move(g);
        }
        ds.pairs.push_back(std::move(p));
    }
    if (ds.pairs.empty()) throw DataError("no records in '" + path + "'");
    return ds;
}

inline ordered_json pair_to_json(const AggregatedDataset& ds, const PreferencePair& p) {
    ordered_json j;
    j["id"] = p.id;
    j["aspect"] = ds.aspect_names[static_cast<std::size_t>(p.aspect)];
    j["prompt_id"] = p.prompt_id;
    j["chosen"] = detail::response_to_json(p.chosen);
    j["rejected"] = detail::response_to_json(p.rejected);
    if (p.truth) {
        ordered_json t;
        t["holistic_chosen"] = p.truth->holistic_chosen;
        t["holistic_rejected"] = p.truth->holistic_rejected;
        t["aspect_scores_chosen"] = p.truth->aspect_scores_chosen;
        t["aspect_scores_rejected"] = p.truth->aspect_scores_rejected;
        j["truth"] = t;
    }
    return j;
}

inline ordered_json dataset_header_json(const AggregatedDataset& ds) {
    ordered_json h;
    h["kappa"] = ds.kappa();
    h["aspects"] = ds.aspect_names;
    h["feature_dim"] = ds.feature_dim;
    if (ds.synth_config) h["synth_config"] = *ds.synth_config;
    return h;
}

/// Writes the corpus JSONL format (header + one pair per line, UTF-8, no BOM).
inline void save_dataset(const AggregatedDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << dataset_header_json(ds).dump() << '\n';
    for (const auto& p : ds.pairs) out << pair_to_json(ds, p).dump() << '\n';
    if (!out) throw DataError("I/O error while writing '" + path + "'");
}

/// Split of one aspect slice by length difference. Ties len(chosen)==len(rejected)
/// land in plus, matching the >= in the D_k^+ definition.
struct LengthPartition {
    std::vector<std::string> plus;
    std::vector<std::string> minus;
};

inline LengthPartition partition_by_length(const AggregatedDataset& ds, int aspect) {
    if (aspect < 0 || aspect >= ds.kappa()) {
        throw DataError("aspect index " + std::to_string(aspect) + " out of range (kappa=" +
                        std::to_string(ds.kappa()) + ")");
    }
    LengthPartition part;
    for (const auto& p : ds.pairs) {
        if (p.aspect != aspect) continue;
        if (p.chosen.length >= p.rejected.length) {
            part.plus.push_back(p.id);
        } else {
            part.minus.push_back(p.id);
        }
    }
    return part;
}

struct DatasetSummary {
    std::size_t n_pairs = 0;
    int kappa = 0;
    int feature_dim = 0;
    std::vector<std::size_t> aspect_counts;
    std::vector<std::size_t> plus_counts;
    std::vector<std::size_t> minus_counts;
    std::vector<double> f_plus;   // 0 when the aspect slice is empty
    std::vector<double> f_minus;
    std::vector<double> hist_edges;
    std::vector<std::size_t> hist_counts;  // size hist_edges.size() + 1
    std::size_t n_with_truth = 0;
    std::optional<double> conflict_rate;  // present iff every pair has truth
};

inline DatasetSummary dataset_summary(const AggregatedDataset& ds) {
    DatasetSummary s;
    s.n_pairs = ds.pairs.size();
    s.kappa = ds.kappa();
    s.feature_dim = ds.feature_dim;
    const auto kappa = static_cast<std::size_t>(ds.kappa());
    s.aspect_counts.assign(kappa, 0);
    s.plus_counts.assign(kappa, 0);
    s.minus_counts.assign(kappa, 0);
    s.hist_edges = {-1000, -500, -200, -100, -50, -20, -5, 0, 5, 20, 50, 100, 200, 500, 1000};
    s.hist_counts.assign(s.hist_edges.size() + 1, 0);

    std::size_t conflicts = 0;
    for (const auto& p : ds.pairs) {
        const auto k = static_cast<std::size_t>(p.aspect);
        ++s.aspect_counts[k];
        if (p.chosen.length >= p.rejected.length) {
            ++s.plus_counts[k];
        } else {
            ++s.minus_counts[k];
        }
        const auto d = static_cast<double>(p.len_diff());
        std::size_t bin = 0;
        while (bin < s.hist_edges.size() && d >= s.hist_edges[bin]) ++bin;
        ++s.hist_counts[bin];
        if (p.truth) {
            ++s.n_with_truth;
            if (p.truth->conflict) ++conflicts;
        }
    }
    s.f_plus.assign(kappa, 0.0);
    s.f_minus.assign(kappa, 0.0);
    for (std::size_t k = 0; k < kappa; ++k) {
        if (s.aspect_counts[k] > 0) {
            const auto n = static_cast<double>(s.aspect_counts[k]);
            s.f_plus[k] = static_cast<double>(s.plus_counts[k]) / n;
            s.f_minus[k] = static_cast<double>(s.minus_counts[k]) / n;
        }
    }
    if (s.n_with_truth == s.n_pairs && s.n_pairs > 0) {
        s.conflict_rate = static_cast<double>(conflicts) / static_cast<double>(s.n_pairs);
    }
    return s;
}

inline ordered_json summary_to_json(const DatasetSummary& s) {
    ordered_json j;
    j["n_pairs"] = s.n_pairs;
    j["kappa"] = s.kappa;
    j["feature_dim"] = s.feature_dim;
    j["aspect_counts"] = s.aspect_counts;
    j["plus_counts"] = s.plus_counts;
    j["minus_counts"] = s.minus_counts;
    j["f_plus"] = s.f_plus;
    j["f_minus"] = s.f_minus;
    j["len_diff_histogram"] = {{"edges", s.hist_edges}, {"counts", s.hist_counts}};
    j["n_with_truth"] = s.n_with_truth;
    if (s.conflict_rate) j["conflict_rate"] = *s.conflict_rate;
    return j;
}

/// Index of pair id -> position; duplicate-free by load_dataset's contract.
inline std::unordered_map<std::string, std::size_t> index_by_id(const AggregatedDataset& ds) {
    std::unordered_map<std::string, std::size_t> m;
    m.reserve(ds.pairs.size());
    for (std::size_t i = 0; i < ds.pairs.size(); ++i) m.emplace(ds.pairs[i].id, i);
    return m;
}

}  // namespace pdselect
