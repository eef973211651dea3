#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "pdselect/corpus.hpp"
#include "pdselect/errors.hpp"
#include "pdselect/math.hpp"
#include "pdselect/rng.hpp"

namespace pdselect {

struct SynthConfig {
    std::int64_t n_prompts = 1000;
    int responses_per_prompt = 4;
    int kappa = 4;
    double conflict_target = 0.3;   // fraction of pairs whose aspect contradicts holistic order
    double length_bias_prob = 0.5;  // P(chosen is the longer response); 0.5 = unbiased
    int feature_dim = 5;
    double feature_noise = 0.05;
    double margin_noise = 0.1;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_prompts < 1) throw DataError("n_prompts must be >= 1");
        if (responses_per_prompt < 2) throw DataError("responses_per_prompt must be >= 2");
        if (kappa < 1) throw DataError("kappa must be >= 1");
        if (!(conflict_target >= 0.0 && conflict_target <= 0.5)) {
            throw DataError("conflict_target must be in [0, 0.5]");
        }
        if (!(length_bias_prob >= 0.0 && length_bias_prob <= 1.0)) {
            throw DataError("length_bias_prob must be in [0,1]");
        }
        if (feature_dim < kappa) throw DataError("feature_dim must be >= kappa");
        if (!(feature_noise >= 0.0)) throw DataError("feature_noise must be >= 0");
        if (!(margin_noise >= 0.0)) throw DataError("margin_noise must be >= 0");
    }

    ordered_json to_json() const {
        ordered_json j;
        j["n_prompts"] = n_prompts;
        j["responses_per_prompt"] = responses_per_prompt;
        j["kappa"] = kappa;
        j["conflict_target"] = conflict_target;
        j["length_bias_prob"] = length_bias_prob;
        j["feature_dim"] = feature_dim;
        j["feature_noise"] = feature_noise;
        j["margin_noise"] = margin_noise;
        j["seed"] = seed;
        return j;
    }

    static SynthConfig from_json(const ordered_json& j) {
        SynthConfig c;
        try {
            if (j.contains("n_prompts")) c.n_prompts = j["n_prompts"].get<std::int64_t>();
            if (j.contains("responses_per_prompt")) c.responses_per_prompt = j["responses_per_prompt"].get<int>();
            if (j.contains("kappa")) c.kappa = j["kappa"].get<int>();
            if (j.contains("conflict_target")) c.conflict_target = j["conflict_target"].get<double>();
            if (j.contains("length_bias_prob")) c.length_bias_prob = j["length_bias_prob"].get<double>();
            if (j.contains("feature_dim")) c.feature_dim = j["feature_dim"].get<int>();
            if (j.contains("feature_noise")) c.feature_noise = j["feature_noise"].get<double>();
            if (j.contains("margin_noise")) c.margin_noise = j["margin_noise"].get<double>();
            if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
        } catch (const nlohmann::json::exception& e) {
            throw DataError(std::string("bad synth config: ") + e.what());
        }
        c.validate();
        return c;
    }
};

inline std::vector<std::string> default_aspect_names(int kappa) {
    static const std::vector<std::string> kNames = {
        "helpfulness", "honesty",     "instruction_following", "truthfulness",
        "clarity",     "conciseness", "safety",                "depth"};
    std::vector<std::string> names;
    names.reserve(static_cast<std::size_t>(kappa));
    for (int k = 0; k < kappa; ++k) {
        if (static_cast<std::size_t>(k) < kNames.size()) {
            names.push_back(kNames[static_cast<std::size_t>(k)]);
        } else {
            names.push_back("aspect" + std::to_string(k));
        }
    }
    return names;
}

namespace detail {

inline constexpr std::uint64_t kStreamSynthScores = 11;
inline constexpr std::uint64_t kStreamSynthCorrect = 12;
inline constexpr std::uint64_t kStreamSynthMaterial = 13;

inline std::string zero_padded(const char* prefix, std::int64_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%06lld", prefix, static_cast<long long>(i));
    return buf;
}

/// Latent state of one pair before fields are materialized.
struct PairDraft {
    std::vector<double> s_best;   // aspect scores of the max-holistic response
    std::vector<double> s_other;  // aspect scores of the sampled opponent
    double h_best = 0.0;
    double h_other = 0.0;
    int aspect = 0;
    bool conflict = false;
    std::vector<int> conflict_aspects;    // aspects where other strictly beats best
    std::vector<int> consistent_aspects;  // everything else (never empty)
};

}  // namespace detail

/// Deterministic synthetic corpus. Per prompt: draw latent per-aspect scores
/// for every response, pair the best-mean response with a random other, then
/// label the pair by one aspect. A correction pass re-draws labeling aspects
/// on a seeded random subset of pairs until the conflict count is exactly
/// round(conflict_target * n), which keeps the realized rate inside the
/// documented +-0.02 window for any n >= 25.
inline AggregatedDataset generate(const SynthConfig& config) {
    config.validate();
    const auto n = static_cast<std::size_t>(config.n_prompts);
    const auto kappa = static_cast<std::size_t>(config.kappa);
    const int R = config.responses_per_prompt;

    std::vector<detail::PairDraft> drafts(n);
    const std::uint64_t score_base = derive_seed(config.seed, detail::kStreamSynthScores);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(derive_seed(score_base, i));
        std::vector<std::vector<double>> scores(static_cast<std::size_t>(R),
                                                std::vector<double>(kappa));
        for (auto& resp : scores) {
            for (auto& v : resp) v = rng.uniform(0.0, 1.0);
        }
        std::vector<double> holistic(static_cast<std::size_t>(R));
        for (std::size_t j = 0; j < scores.size(); ++j) holistic[j] = mean_or_zero(scores[j]);
        std::size_t best = 0;
        for (std::size_t j = 1; j < holistic.size(); ++j) {
            if (holistic[j] > holistic[best]) best = j;
        }
        std::size_t other = rng.below(static_cast<std::uint64_t>(R - 1));
        if (other >= best) ++other;

        detail::PairDraft& d = drafts[i];
        d.s_best = scores[best];
        d.s_other = scores[other];
        d.h_best = holistic[best];
        d.h_other = holistic[other];
        for (std::size_t k = 0; k < kappa; ++k) {
            if (d.s_other[k] > d.s_best[k] && d.h_other < d.h_best) {
                d.conflict_aspects.push_back(static_cast<int>(k));
            } else {
                d.consistent_aspects.push_back(static_cast<int>(k));
            }
        }
        // The opponent cannot beat the best-mean response on every aspect.
        if (d.consistent_aspects.empty()) throw DataError("internal: no consistent aspect");

        const bool want_conflict = rng.bernoulli(config.conflict_target);
        if (want_conflict && !d.conflict_aspects.empty()) {
            d.aspect = d.conflict_aspects[rng.below(d.conflict_aspects.size())];
            d.conflict = true;
        } else {
            d.aspect = d.consistent_aspects[rng.below(d.consistent_aspects.size())];
            d.conflict = false;
        }
    }

    // Correction pass: hit the target conflict count exactly.
    const std::size_t target = scaled_count(config.conflict_target, n);
    std::size_t current = 0;
    for (const auto& d : drafts) current += d.conflict ? 1 : 0;
    if (current != target) {
        Rng rng(derive_seed(config.seed, detail::kStreamSynthCorrect));
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        rng.shuffle(order);
        for (std::size_t i : order) {
            if (current == target) break;
            detail::PairDraft& d = drafts[i];
            if (current < target && !d.conflict && !d.conflict_aspects.empty()) {
                d.aspect = d.conflict_aspects[rng.below(d.conflict_aspects.size())];
                d.conflict = true;
                ++current;
            } else if (current > target && d.conflict) {
                d.aspect = d.consistent_aspects[rng.below(d.consistent_aspects.size())];
                d.conflict = false;
                --current;
            }
        }
        if (current != target) {
            throw DataError("conflict_target " + canon_double(config.conflict_target) +
                            " is infeasible for this configuration (reachable count " +
                            std::to_string(current) + " of " + std::to_string(target) + ")");
        }
    }

    AggregatedDataset ds;
    ds.aspect_names = default_aspect_names(config.kappa);
    ds.feature_dim = config.feature_dim;
    ds.synth_config = config.to_json();
    ds.pairs.resize(n);
    const std::uint64_t mat_base = derive_seed(config.seed, detail::kStreamSynthMaterial);
    for (std::size_t i = 0; i < n; ++i) {
        const detail::PairDraft& d = drafts[i];
        Rng rng(derive_seed(mat_base, i));
        PreferencePair& p = ds.pairs[i];
        p.id = detail::zero_padded("z", static_cast<std::int64_t>(i));
        p.prompt_id = detail::zero_padded("p", static_cast<std::int64_t>(i));
        p.aspect = d.aspect;

        const auto k = static_cast<std::size_t>(d.aspect);
        const bool other_is_chosen = d.s_other[k] > d.s_best[k];
        const auto& s_c = other_is_chosen ? d.s_other : d.s_best;
        const auto& s_r = other_is_chosen ? d.s_best : d.s_other;
        const double h_c = other_is_chosen ? d.h_other : d.h_best;
        const double h_r = other_is_chosen ? d.h_best : d.h_other;

        const auto fill_features = [&](const std::vector<double>& s, Response& out) {
            out.features.assign(static_cast<std::size_t>(config.feature_dim), 0.0);
            for (std::size_t a = 0; a < kappa; ++a) {
                out.features[a] = s[a] + config.feature_noise * rng.normal();
            }
        };
        fill_features(s_c, p.chosen);
        fill_features(s_r, p.rejected);

        const std::int64_t len1 = 50 + static_cast<std::int64_t>(rng.below(451));
        const std::int64_t len2 = 50 + static_cast<std::int64_t>(rng.below(451));
        if (rng.bernoulli(config.length_bias_prob)) {
            p.chosen.length = std::max(len1, len2);
            p.rejected.length = std::min(len1, len2);
        } else {
            p.chosen.length = std::min(len1, len2);
            p.rejected.length = std::max(len1, len2);
        }
        if (config.feature_dim > config.kappa) {
            p.chosen.features[kappa] = static_cast<double>(p.chosen.length) / 1000.0;
            p.rejected.features[kappa] = static_cast<double>(p.rejected.length) / 1000.0;
        }

        const auto fill_logps = [&](double holistic, Response& out) {
            out.logp_ref = -static_cast<double>(out.length) / 100.0;
            out.logp_policy = *out.logp_ref + (holistic - 0.5) + config.margin_noise * rng.normal();
        };
        fill_logps(h_c, p.chosen);
        fill_logps(h_r, p.rejected);

        GroundTruth t;
        t.holistic_chosen = h_c;
        t.holistic_rejected = h_r;
        t.aspect_scores_chosen = s_c;
        t.aspect_scores_rejected = s_r;
        t.conflict = conflict_flag(t, p.aspect);
        if (t.conflict != d.conflict) throw DataError("internal: conflict flag drift");
        p.truth = std::move(t);
    }
    return ds;
}

/// Fraction of conflicted pairs; recomputes every flag from the latent scores
/// and refuses datasets whose stored flags disagree.
inline double measure_conflict(const AggregatedDataset& ds) {
    if (ds.pairs.empty()) throw DataError("empty dataset");
    std::size_t conflicts = 0;
    for (const auto& p : ds.pairs) {
        if (!p.truth) throw DataError("pair '" + p.id + "' has no ground truth");
        const bool recomputed = conflict_flag(*p.truth, p.aspect);
        if (recomputed != p.truth->conflict) {
            throw DataError("conflict flag mismatch for pair '" + p.id + "'");
        }
        conflicts += recomputed ? 1 : 0;
    }
    return static_cast<double>(conflicts) / static_cast<double>(ds.pairs.size());
}

}  // namespace pdselect
