#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "pdselect/reward.hpp"
#include "test_support.hpp"

using namespace pdselect;
using testsupport::TempDir;

namespace {

// n_plus pairs with chosen at least as long, n_minus with chosen shorter.
AggregatedDataset partitioned_dataset(int n_plus, int n_minus) {
    auto ds = testsupport::tiny_dataset();
    Rng rng(99);
    int next = 0;
    for (int i = 0; i < n_plus; ++i) {
        ds.pairs.push_back(testsupport::make_pair("z" + std::to_string(next++), 0,
                                                  {rng.real(), rng.real()},
                                                  {rng.real(), rng.real()}, 200, 100));
    }
    for (int i = 0; i < n_minus; ++i) {
        ds.pairs.push_back(testsupport::make_pair("z" + std::to_string(next++), 0,
                                                  {rng.real(), rng.real()},
                                                  {rng.real(), rng.real()}, 100, 200));
    }
    return ds;
}

// Pairs for aspect 0 relabeled so chosen always wins under `w_true`.
AggregatedDataset separable_dataset(const std::vector<double>& w_true, int n, std::uint64_t seed) {
    auto ds = testsupport::tiny_dataset(2, static_cast<int>(w_true.size()));
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        std::vector<double> a(w_true.size()), b(w_true.size());
        for (auto& v : a) v = rng.uniform(-1.0, 1.0);
        for (auto& v : b) v = rng.uniform(-1.0, 1.0);
        if (testsupport::naive_dot(w_true, a) < testsupport::naive_dot(w_true, b)) std::swap(a, b);
        ds.pairs.push_back(testsupport::make_pair("z" + std::to_string(i), 0, a, b));
    }
    return ds;
}

std::vector<const PreferencePair*> all_pairs(const AggregatedDataset& ds, int aspect) {
    std::vector<const PreferencePair*> out;
    for (const auto& p : ds.pairs) {
        if (p.aspect == aspect) out.push_back(&p);
    }
    return out;
}

}  // namespace

TEST(BalanceRatios, KnownValuesAndExactSum) {
    const auto even = balance_ratios(0.5, 0.5, 1.0);
    EXPECT_DOUBLE_EQ(even.first, 0.5);
    EXPECT_DOUBLE_EQ(even.second, 0.5);

    // sigmoid(0.6), frozen to the shortest round-trip double.
    const auto skew = balance_ratios(0.8, 0.2, 1.0);
    EXPECT_NEAR(skew.first, 0.6456563062257954, 1e-15);
    EXPECT_DOUBLE_EQ(skew.first + skew.second, 1.0);

    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const double f = rng.real();
        const double tau = rng.uniform(0.05, 20.0);
        const auto [hp, hm] = balance_ratios(f, 1.0 - f, tau);
        EXPECT_EQ(hp + hm, 1.0);  // exact, not approximate
        EXPECT_GE(hp, 0.0);
        EXPECT_LE(hp, 1.0);
        // The softened ratio stays on the same side of 1/2 as the raw one.
        if (f > 0.5) EXPECT_GT(hp, 0.5);
        if (f < 0.5) EXPECT_LT(hp, 0.5);
    }
}

TEST(BalanceRatios, LargeTauFlattensTowardHalf) {
    const auto sharp = balance_ratios(0.9, 0.1, 0.5);
    const auto soft = balance_ratios(0.9, 0.1, 5.0);
    EXPECT_GT(sharp.first, soft.first);
    EXPECT_GT(soft.first, 0.5);
    const auto flat = balance_ratios(0.9, 0.1, 1e6);
    EXPECT_NEAR(flat.first, 0.5, 1e-6);
}

TEST(BalanceRatios, RejectsBadArguments) {
    EXPECT_THROW(balance_ratios(0.5, 0.5, 0.0), DataError);
    EXPECT_THROW(balance_ratios(0.5, 0.5, -1.0), DataError);
    EXPECT_THROW(balance_ratios(0.7, 0.2, 1.0), DataError);
}

TEST(SampleBalanced, EvenSplitDrawsEqualHalves) {
    const auto ds = partitioned_dataset(50, 50);
    TrainConfig cfg;
    cfg.p_r = 0.3;
    const auto ids = sample_balanced(ds, 0, cfg);
    EXPECT_EQ(ids.size(), 30u);

    const auto part = partition_by_length(ds, 0);
    const std::set<std::string> plus(part.plus.begin(), part.plus.end());
    int n_plus = 0;
    for (const auto& id : ids) n_plus += plus.count(id) ? 1 : 0;
    EXPECT_EQ(n_plus, 15);
    EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), ids.size());
}

TEST(SampleBalanced, SkewedSplitFollowsSoftenedRatio) {
    const auto ds = partitioned_dataset(80, 20);
    TrainConfig cfg;
    cfg.p_r = 0.3;
    const auto ids = sample_balanced(ds, 0, cfg);
    // f_hat_plus = sigmoid(0.6): want round(30*0.6457) = 19 plus, round(30*0.3543) = 11 minus.
    const auto part = partition_by_length(ds, 0);
    const std::set<std::string> plus(part.plus.begin(), part.plus.end());
    int n_plus = 0;
    for (const auto& id : ids) n_plus += plus.count(id) ? 1 : 0;
    EXPECT_EQ(n_plus, 19);
    EXPECT_EQ(ids.size() - static_cast<std::size_t>(n_plus), 11u);
}

TEST(SampleBalanced, CapsAtPartitionSizeWithWarning) {
    const auto ds = partitioned_dataset(1, 99);
    TrainConfig cfg;
    cfg.p_r = 0.5;
    std::vector<std::string> warnings;
    const auto ids = sample_balanced(ds, 0, cfg, &warnings);
    ASSERT_FALSE(warnings.empty());
    const auto part = partition_by_length(ds, 0);
    const std::set<std::string> plus(part.plus.begin(), part.plus.end());
    int n_plus = 0;
    for (const auto& id : ids) n_plus += plus.count(id) ? 1 : 0;
    EXPECT_EQ(n_plus, 1);  // request exceeded the 1-element partition
}

TEST(SampleBalanced, DeterministicPerSeedAndErrorsOnEmptyAspect) {
    const auto ds = partitioned_dataset(30, 30);
    TrainConfig cfg;
    EXPECT_EQ(sample_balanced(ds, 0, cfg), sample_balanced(ds, 0, cfg));
    TrainConfig other = cfg;
    other.seed = 1;
    EXPECT_NE(sample_balanced(ds, 0, cfg), sample_balanced(ds, 0, other));
    EXPECT_THROW(sample_balanced(ds, 1, cfg), DataError);
}

TEST(SampleUniform, DrawsUnstratifiedCount) {
    const auto ds = partitioned_dataset(80, 20);
    TrainConfig cfg;
    cfg.p_r = 0.3;
    const auto ids = sample_uniform(ds, 0, cfg);
    EXPECT_EQ(ids.size(), 30u);
    EXPECT_EQ(ids, sample_uniform(ds, 0, cfg));
    EXPECT_NE(ids, sample_balanced(ds, 0, cfg));
}

TEST(BtLoss, IndistinguishablePairCostsLogTwo) {
    auto ds = testsupport::tiny_dataset();
    ds.pairs.push_back(testsupport::make_pair("z1", 0, {0.3, 0.7}, {0.3, 0.7}));
    const auto lg = bt_loss_penalized({1.5, -2.0}, all_pairs(ds, 0), 0.0);
    EXPECT_DOUBLE_EQ(lg.loss, std::log(2.0));
    EXPECT_DOUBLE_EQ(lg.grad.back(), 0.0);
}

TEST(BtLoss, MatchesNaiveFormula) {
    auto ds = testsupport::tiny_dataset();
    Rng rng(31);
    for (int i = 0; i < 40; ++i) {
        ds.pairs.push_back(testsupport::make_pair(
            "z" + std::to_string(i), 0, {rng.uniform(-1, 1), rng.uniform(-1, 1)},
            {rng.uniform(-1, 1), rng.uniform(-1, 1)}, 100 + i, 90 + 2 * i));
    }
    const std::vector<double> w = {0.8, -0.3};
    const double rho = 0.01;
    const auto batch = all_pairs(ds, 0);
    const auto lg = bt_loss_penalized(w, batch, rho);

    double want = 0.0;
    for (const auto* p : batch) {
        std::vector<double> delta(2);
        for (int j = 0; j < 2; ++j) delta[j] = p->chosen.features[j] - p->rejected.features[j];
        const double gap =
            testsupport::naive_dot(w, delta) - rho * static_cast<double>(p->len_diff());
        want += testsupport::naive_neg_log_sigmoid(gap);
    }
    want /= static_cast<double>(batch.size());
    EXPECT_NEAR(lg.loss, want, 1e-12);
}

TEST(BtLoss, GradientMatchesFiniteDifferences) {
    for (int dim : {2, 8, 32}) {
        auto ds = testsupport::tiny_dataset(2, dim);
        Rng rng(static_cast<std::uint64_t>(dim));
        for (int i = 0; i < 20; ++i) {
            std::vector<double> a(dim), b(dim);
            for (auto& v : a) v = rng.uniform(-1.0, 1.0);
            for (auto& v : b) v = rng.uniform(-1.0, 1.0);
            ds.pairs.push_back(testsupport::make_pair("z" + std::to_string(i), 0, a, b,
                                                      100 + i, 120 - i));
        }
        std::vector<double> w(dim);
        for (auto& v : w) v = rng.uniform(-0.5, 0.5);
        const double rho = 0.005;
        const auto batch = all_pairs(ds, 0);
        const auto lg = bt_loss_penalized(w, batch, rho);

        const auto fd = testsupport::fd_gradient(
            [&](const std::vector<double>& x) { return bt_loss_penalized(x, batch, rho).loss; },
            w);
        ASSERT_EQ(lg.grad.size(), static_cast<std::size_t>(dim) + 1);
        EXPECT_DOUBLE_EQ(lg.grad.back(), 0.0);  // bias cancels in the gap
        for (int j = 0; j < dim; ++j) {
            EXPECT_NEAR(lg.grad[j], fd[j], 1e-6 * std::max(1.0, std::abs(fd[j])));
        }
    }
}

TEST(BtLoss, BiasDoesNotAffectModelOverload) {
    auto ds = testsupport::tiny_dataset();
    ds.pairs.push_back(testsupport::make_pair("z1", 0, {0.9, 0.2}, {0.1, 0.8}, 150, 100));
    RewardModel m;
    m.weights = {1.0, -0.5};
    m.bias = 0.0;
    const auto batch = all_pairs(ds, 0);
    const auto base = bt_loss_penalized(m, batch, 0.01);
    m.bias = 42.0;
    const auto shifted = bt_loss_penalized(m, batch, 0.01);
    EXPECT_EQ(base.loss, shifted.loss);
    EXPECT_EQ(base.grad, shifted.grad);
}

TEST(BtLoss, RejectsEmptyBatch) {
    const std::vector<double> w = {1.0};
    const std::vector<const PreferencePair*> empty;
    EXPECT_THROW(bt_loss_penalized(w, empty, 0.0), DataError);
}

TEST(Trainer, LearnsSeparableData) {
    const std::vector<double> w_true = {2.0, -1.0, 0.5};
    const auto ds = separable_dataset(w_true, 200, 4);
    std::vector<std::string> ids;
    for (const auto& p : ds.pairs) ids.push_back(p.id);

    TrainConfig cfg;
    double first = 0.0, final = 0.0;
    const auto model = train_reward_model(ds, 0, ids, cfg, &first, &final);
    EXPECT_LE(final, first);
    EXPECT_EQ(model.aspect, 0);
    EXPECT_EQ(model.config_digest, cfg.digest());
    EXPECT_GE(pairwise_accuracy(model, all_pairs(ds, 0), cfg.rho), 0.95);
}

TEST(Trainer, AgreesWithFullBatchLogisticOracle) {
    const std::vector<double> w_true = {1.0, 0.5};
    const auto ds = separable_dataset(w_true, 150, 11);
    std::vector<std::string> ids;
    for (const auto& p : ds.pairs) ids.push_back(p.id);
    const auto model = train_reward_model(ds, 0, ids, TrainConfig{});

    std::vector<std::vector<double>> deltas;
    for (const auto& p : ds.pairs) {
        deltas.push_back({p.chosen.features[0] - p.rejected.features[0],
                          p.chosen.features[1] - p.rejected.features[1]});
    }
    const auto w_oracle = testsupport::fit_logistic_oracle(deltas, 400, 0.5);

    int agree = 0;
    for (const auto& d : deltas) {
        const bool a = testsupport::naive_dot(model.weights, d) > 0.0;
        const bool b = testsupport::naive_dot(w_oracle, d) > 0.0;
        agree += (a == b) ? 1 : 0;
    }
    EXPECT_GE(agree, static_cast<int>(0.95 * static_cast<double>(deltas.size())));
}

TEST(Trainer, ZeroDeltaFeaturesLeaveWeightsAtZero) {
    auto ds = testsupport::tiny_dataset();
    for (int i = 0; i < 10; ++i) {
        ds.pairs.push_back(
            testsupport::make_pair("z" + std::to_string(i), 0, {0.4, 0.6}, {0.4, 0.6}));
    }
    std::vector<std::string> ids;
    for (const auto& p : ds.pairs) ids.push_back(p.id);
    double first = 0.0, final = 0.0;
    const auto model = train_reward_model(ds, 0, ids, TrainConfig{}, &first, &final);
    EXPECT_EQ(model.weights, (std::vector<double>{0.0, 0.0}));
    EXPECT_DOUBLE_EQ(model.bias, 0.0);
    EXPECT_DOUBLE_EQ(first, std::log(2.0));
    EXPECT_DOUBLE_EQ(final, std::log(2.0));
}

TEST(Trainer, BitwiseDeterministic) {
    const auto ds = separable_dataset({1.0, -1.0}, 100, 21);
    std::vector<std::string> ids;
    for (const auto& p : ds.pairs) ids.push_back(p.id);
    const auto a = train_reward_model(ds, 0, ids, TrainConfig{});
    const auto b = train_reward_model(ds, 0, ids, TrainConfig{});
    EXPECT_EQ(a.weights, b.weights);
    EXPECT_EQ(a.bias, b.bias);
}

TEST(Trainer, RejectsBadIdsAndEmptyTrainingSet) {
    const auto ds = separable_dataset({1.0, -1.0}, 10, 3);
    EXPECT_THROW(train_reward_model(ds, 0, {"nope"}, TrainConfig{}), DataError);
    EXPECT_THROW(train_reward_model(ds, 1, {ds.pairs[0].id}, TrainConfig{}), DataError);
    EXPECT_THROW(train_reward_model(ds, 0, {}, TrainConfig{}), DataError);
}

TEST(RewardScore, AffineInFeatures) {
    RewardModel m;
    m.weights = {0.5, -2.0};
    m.bias = 0.25;
    Response r;
    r.features = {2.0, 1.0};
    EXPECT_DOUBLE_EQ(reward_score(m, r), -0.75);
    r.features = {2.0};
    EXPECT_THROW(reward_score(m, r), DataError);
}

TEST(PairwiseAccuracy, CountsWinsLossesAndHalfTies) {
    auto ds = testsupport::tiny_dataset();
    ds.pairs.push_back(testsupport::make_pair("w", 0, {1, 0}, {0, 0}));
    ds.pairs.push_back(testsupport::make_pair("l", 0, {0, 0}, {1, 0}));
    ds.pairs.push_back(testsupport::make_pair("t", 0, {0.5, 0.5}, {0.5, 0.5}));
    RewardModel m;
    m.weights = {1.0, 0.0};
    EXPECT_DOUBLE_EQ(pairwise_accuracy(m, all_pairs(ds, 0), 0.0), 0.5);

    // Length penalty can turn a feature win into a tie.
    auto ds2 = testsupport::tiny_dataset();
    ds2.pairs.push_back(testsupport::make_pair("w", 0, {1, 0}, {0, 0}, 200, 100));
    EXPECT_DOUBLE_EQ(pairwise_accuracy(m, all_pairs(ds2, 0), 0.01), 0.5);
    EXPECT_THROW(pairwise_accuracy(m, {}, 0.0), DataError);
}

TEST(ModelIo, RoundTripAndErrors) {
    TempDir dir;
    RewardModel m;
    m.aspect = 3;
    m.weights = {0.125, -2.5, 1e-9};
    m.bias = -0.75;
    m.config_digest = "deadbeefdeadbeef";
    const auto path = dir.file("rm.json");
    save_model(m, path);
    const auto back = load_model(path);
    EXPECT_EQ(back.aspect, 3);
    EXPECT_EQ(back.weights, m.weights);
    EXPECT_EQ(back.bias, m.bias);
    EXPECT_EQ(back.config_digest, m.config_digest);

    EXPECT_THROW(load_model(dir.file("absent.json")), DataError);
    {
        std::ofstream out(dir.file("garbage.json"));
        out << "{not json";
    }
    EXPECT_THROW(load_model(dir.file("garbage.json")), DataError);
    {
        std::ofstream out(dir.file("partial.json"));
        out << R"({"aspect":0,"weights":[0.1]})";
    }
    EXPECT_THROW(load_model(dir.file("partial.json")), DataError);
}

TEST(TrainConfig, ValidationAndDigestStability) {
    TrainConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_EQ(cfg.digest(), TrainConfig{}.digest());
    TrainConfig other = cfg;
    other.seed = 123;
    EXPECT_NE(cfg.digest(), other.digest());

    TrainConfig bad = cfg;
    bad.learning_rate = 0.0;
    EXPECT_THROW(bad.validate(), DataError);
    bad = cfg;
    bad.p_r = 1.5;
    EXPECT_THROW(bad.validate(), DataError);
    bad = cfg;
    bad.tau = 0.0;
    EXPECT_THROW(bad.validate(), DataError);
}
