#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pdselect/corpus.hpp"
#include "pdselect/errors.hpp"
#include "pdselect/math.hpp"
#include "pdselect/rng.hpp"

namespace pdselect {

/// Linear scorer over response features for one aspect.
struct RewardModel {
    int aspect = 0;
    std::vector<double> weights;
    double bias = 0.0;
    std::string config_digest;
};

struct TrainConfig {
    double learning_rate = 0.1;
    int epochs = 50;
    int batch_size = 64;
    double l2 = 1e-4;
    double rho = 0.0;   // length penalty, reward units per length unit
    double tau = 1.0;   // balance temperature
    double p_r = 0.3;   // sampling ratio
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate > 0.0)) throw DataError("learning_rate must be > 0");
        if (epochs < 1) throw DataError("epochs must be >= 1");
        if (batch_size < 1) throw DataError("batch_size must be >= 1");
        if (!(l2 >= 0.0)) throw DataError("l2 must be >= 0");
        if (!std::isfinite(rho)) throw DataError("rho must be finite");
        if (!(tau > 0.0)) throw DataError("tau must be > 0");
        if (!(p_r > 0.0 && p_r <= 1.0)) throw DataError("p_r must be in (0,1]");
    }

    /// Stable content hash for provenance; independent of field order in config files.
    std::string digest() const {
        std::string s;
        s += "lr=" + canon_double(learning_rate);
        s += ";epochs=" + std::to_string(epochs);
        s += ";batch=" + std::to_string(batch_size);
        s += ";l2=" + canon_double(l2);
        s += ";rho=" + canon_double(rho);
        s += ";tau=" + canon_double(tau);
        s += ";p_r=" + canon_double(p_r);
        s += ";seed=" + std::to_string(seed);
        return hex64(fnv1a(s));
    }
};

namespace detail {
// Seed stream tags keep sampling and shuffling decoupled per aspect.
inline constexpr std::uint64_t kStreamSampling = 0x5331;
inline constexpr std::uint64_t kStreamShuffle = 0x5332;
}  // namespace detail

/// Temperature-softened partition weights. Returns the softmax of
/// (f_plus, f_minus)/tau; the pair sums to 1.0 exactly because the smaller
/// entry is computed as 1 - larger (exact for the larger one in [0.5, 1]).
inline std::pair<double, double> balance_ratios(double f_plus, double f_minus, double tau) {
    if (!(tau > 0.0)) throw DataError("tau must be > 0");
    if (std::fabs(f_plus + f_minus - 1.0) > 1e-12) {
        throw DataError("partition fractions must sum to 1");
    }
    const double d = (f_plus - f_minus) / tau;
    const double hi = sigmoid(std::fabs(d));
    const double lo = 1.0 - hi;
    return d >= 0.0 ? std::make_pair(hi, lo) : std::make_pair(lo, hi);
}

/// Draws round(p_r*n_k*f_hat_plus) ids from the longer-chosen partition and
/// round(p_r*n_k*f_hat_minus) from the other, uniformly without replacement.
/// Requests beyond a partition's size are capped with a warning.
inline std::vector<std::string> sample_balanced(const AggregatedDataset& ds, int aspect,
                                                const TrainConfig& config,
                                                std::vector<std::string>* warnings = nullptr) {
    config.validate();
    const LengthPartition part = partition_by_length(ds, aspect);
    const std::size_t n_k = part.plus.size() + part.minus.size();
    if (n_k == 0) {
        throw DataError("aspect " + std::to_string(aspect) + " has no pairs to sample");
    }
    const double f_plus = static_cast<double>(part.plus.size()) / static_cast<double>(n_k);
    const double f_minus = static_cast<double>(part.minus.size()) / static_cast<double>(n_k);
    const auto [fh_plus, fh_minus] = balance_ratios(f_plus, f_minus, config.tau);

    const auto want = [&](double ratio) {
        const double r = round_half_even(config.p_r * static_cast<double>(n_k) * ratio);
        return static_cast<std::size_t>(r < 0.0 ? 0.0 : r);
    };
    std::size_t want_plus = want(fh_plus);
    std::size_t want_minus = want(fh_minus);
    const auto cap = [&](std::size_t& n, std::size_t avail, const char* name) {
        if (n > avail) {
            if (warnings) {
                warnings->push_back("aspect " + std::to_string(aspect) + ": requested " +
                                    std::to_string(n) + " from the " + name +
                                    " partition but only " + std::to_string(avail) +
                                    " available; capped");
            }
            n = avail;
        }
    };
    cap(want_plus, part.plus.size(), "plus");
    cap(want_minus, part.minus.size(), "minus");

    Rng rng(derive_seed(derive_seed(config.seed, detail::kStreamSampling),
                        static_cast<std::uint64_t>(aspect)));
    std::vector<std::string> ids;
    ids.reserve(want_plus + want_minus);
    for (std::size_t i : rng.sample_indices(part.plus.size(), want_plus)) ids.push_back(part.plus[i]);
    for (std::size_t i : rng.sample_indices(part.minus.size(), want_minus)) ids.push_back(part.minus[i]);
    return ids;
}

/// Unstratified variant for the mitigation-off ablation: round(p_r*n_k) ids
/// drawn uniformly from the whole aspect slice. Same seed stream as
/// sample_balanced so the two differ only in stratification.
inline std::vector<std::string> sample_uniform(const AggregatedDataset& ds, int aspect,
                                               const TrainConfig& config) {
    config.validate();
    std::vector<std::string> slice;
    for (const auto& p : ds.pairs) {
        if (p.aspect == aspect) slice.push_back(p.id);
    }
    if (slice.empty()) {
        throw DataError("aspect " + std::to_string(aspect) + " has no pairs to sample");
    }
    const std::size_t n = scaled_count(config.p_r, slice.size());
    Rng rng(derive_seed(derive_seed(config.seed, detail::kStreamSampling),
                        static_cast<std::uint64_t>(aspect)));
    std::vector<std::string> ids;
    ids.reserve(n);
    for (std::size_t i : rng.sample_indices(slice.size(), n)) ids.push_back(slice[i]);
    return ids;
}

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;  // weights then bias (bias slot always 0: it cancels in the gap)
};

/// Length-penalized Bradley-Terry loss: mean of softplus(-(w.(feat_c - feat_r)
/// - rho*dlen)) plus its analytic gradient. The bias cancels inside the score
/// gap, so the loss is evaluated bias-free and the bias gradient is exactly 0.
/// L2 is not included here; the trainer adds it.
inline LossGrad bt_loss_penalized(const std::vector<double>& weights,
                                  const std::vector<const PreferencePair*>& batch, double rho) {
    if (batch.empty()) throw DataError("empty batch");
    const std::size_t dim = weights.size();
    LossGrad out;
    out.grad.assign(dim + 1, 0.0);
    for (const PreferencePair* p : batch) {
        if (p->chosen.features.size() != dim || p->rejected.features.size() != dim) {
            throw DataError("feature dimension mismatch for pair '" + p->id + "'");
        }
        double gap = -rho * static_cast<double>(p->len_diff());
        for (std::size_t j = 0; j < dim; ++j) {
            const double dj = p->chosen.features[j] - p->rejected.features[j];
            if (!std::isfinite(dj)) {
                throw DataError("non-finite features for pair '" + p->id + "'");
            }
            gap += weights[j] * dj;
        }
        out.loss += softplus(-gap);
        const double coef = -sigmoid(-gap);
        for (std::size_t j = 0; j < dim; ++j) {
            out.grad[j] += coef * (p->chosen.features[j] - p->rejected.features[j]);
        }
    }
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    out.loss *= inv_n;
    for (std::size_t j = 0; j < dim; ++j) out.grad[j] *= inv_n;
    return out;
}

inline LossGrad bt_loss_penalized(const RewardModel& model,
                                  const std::vector<const PreferencePair*>& batch, double rho) {
    return bt_loss_penalized(model.weights, batch, rho);
}

namespace detail {

inline std::vector<const PreferencePair*> resolve_ids(const AggregatedDataset& ds, int aspect,
                                                      const std::vector<std::string>& ids) {
    const auto index = index_by_id(ds);
    std::vector<const PreferencePair*> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        const auto it = index.find(id);
        if (it == index.end()) throw DataError("unknown pair id '" + id + "'");
        const PreferencePair& p = ds.pairs[it->second];
        if (p.aspect != aspect) {
            throw DataError("pair '" + id + "' does not belong to aspect " + std::to_string(aspect));
        }
        out.push_back(&p);
    }
    return out;
}

}  // namespace detail

/// Mini-batch gradient descent on the penalized BT loss + (l2/2)*||w||^2 over
/// the given training ids. Zero init; fixed epoch/batch schedule with a seeded
/// per-epoch shuffle, so identical inputs give a bitwise-identical model.
inline RewardModel train_reward_model(const AggregatedDataset& ds, int aspect,
                                      const std::vector<std::string>& train_ids,
                                      const TrainConfig& config,
                                      double* first_epoch_loss = nullptr,
                                      double* final_epoch_loss = nullptr) {
    config.validate();
    const auto pairs = detail::resolve_ids(ds, aspect, train_ids);
    if (pairs.empty()) throw DataError("no training pairs for aspect " + std::to_string(aspect));

    const std::size_t dim = static_cast<std::size_t>(ds.feature_dim);
    const std::size_t n = pairs.size();
    std::vector<double> w(dim, 0.0);
    double b = 0.0;

    std::vector<std::size_t> order(n);
    std::vector<const PreferencePair*> batch;
    const std::uint64_t shuffle_base =
        derive_seed(derive_seed(config.seed, detail::kStreamShuffle), static_cast<std::uint64_t>(aspect));
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(shuffle_base, static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t stop = std::min(n, start + static_cast<std::size_t>(config.batch_size));
            batch.clear();
            for (std::size_t i = start; i < stop; ++i) batch.push_back(pairs[order[i]]);
            const LossGrad lg = bt_loss_penalized(w, batch, config.rho);
            epoch_loss += lg.loss * static_cast<double>(batch.size());
            for (std::size_t j = 0; j < dim; ++j) {
                w[j] -= config.learning_rate * (lg.grad[j] + config.l2 * w[j]);
            }
            b -= config.learning_rate * lg.grad[dim];
        }
        epoch_loss /= static_cast<double>(n);
        if (epoch == 0 && first_epoch_loss) *first_epoch_loss = epoch_loss;
        if (epoch == config.epochs - 1 && final_epoch_loss) *final_epoch_loss = epoch_loss;
    }

    RewardModel model;
    model.aspect = aspect;
    model.weights = std::move(w);
    model.bias = b;
    model.config_digest = config.digest();
    return model;
}

inline RewardModel train_reward_model(const AggregatedDataset& ds, int aspect,
                                      const TrainConfig& config,
                                      std::vector<std::string>* warnings = nullptr) {
    return train_reward_model(ds, aspect, sample_balanced(ds, aspect, config, warnings), config);
}

inline double reward_score(const RewardModel& model, const Response& response) {
    if (response.features.size() != model.weights.size()) {
        throw DataError("feature dimension mismatch: model expects " +
                        std::to_string(model.weights.size()) + ", response has " +
                        std::to_string(response.features.size()));
    }
    double s = model.bias;
    for (std::size_t j = 0; j < model.weights.size(); ++j) {
        s += model.weights[j] * response.features[j];
    }
    return s;
}

/// Fraction of pairs scored chosen-over-rejected after the length penalty;
/// exact ties count as half.
inline double pairwise_accuracy(const RewardModel& model,
                                const std::vector<const PreferencePair*>& pairs, double rho) {
    if (pairs.empty()) throw DataError("empty pair list");
    double hits = 0.0;
    for (const PreferencePair* p : pairs) {
        const double gap = reward_score(model, p->chosen) - reward_score(model, p->rejected) -
                           rho * static_cast<double>(p->len_diff());
        if (gap > 0.0) {
            hits += 1.0;
        } else if (gap == 0.0) {
            hits += 0.5;
        }
    }
    return hits / static_cast<double>(pairs.size());
}

inline void save_model(const RewardModel& model, const std::string& path) {
    ordered_json j;
    j["aspect"] = model.aspect;
    j["weights"] = model.weights;
    j["bias"] = model.bias;
    j["config_digest"] = model.config_digest;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
    if (!out) throw DataError("I/O error while writing '" + path + "'");
}

inline RewardModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    ordered_json j;
    try {
        j = ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad model file '" + path + "': " + e.what());
    }
    RewardModel m;
    try {
        m.aspect = j.at("aspect").get<int>();
        m.weights = j.at("weights").get<std::vector<double>>();
        m.bias = j.at("bias").get<double>();
        m.config_digest = j.at("config_digest").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad model file '" + path + "': " + e.what());
    }
    for (double x : m.weights) {
        if (!std::isfinite(x)) throw DataError("non-finite weight in '" + path + "'");
    }
    if (!std::isfinite(m.bias)) throw DataError("non-finite bias in '" + path + "'");
    return m;
}

}  // namespace pdselect
