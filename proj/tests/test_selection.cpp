#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "pdselect/selection.hpp"
#include "test_support.hpp"

using namespace pdselect;
using testsupport::TempDir;

namespace {

PdScoreTable make_table(const std::vector<std::pair<std::string, double>>& id_pd) {
    PdScoreTable t;
    t.aspect_names = {"a0", "a1"};
    t.gamma = 0.9;
    t.q = {1.0, 1.0};
    for (const auto& [id, pd] : id_pd) {
        PdRow row;
        row.id = id;
        row.aspect = 0;
        row.normalized_gaps = {0.0, -pd};
        row.pd = pd;
        t.rows.push_back(std::move(row));
    }
    return t;
}

PdScoreTable random_table(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::pair<std::string, double>> rows;
    for (int i = 0; i < n; ++i) {
        char id[16];
        std::snprintf(id, sizeof id, "z%04d", i);
        rows.emplace_back(id, rng.uniform(-1.0, 1.0));
    }
    return make_table(rows);
}

double mean_pd_of(const PdScoreTable& table, const std::vector<std::string>& ids) {
    double s = 0.0;
    for (const auto& id : ids) {
        for (const auto& row : table.rows) {
            if (row.id == id) {
                s += row.pd;
                break;
            }
        }
    }
    return s / static_cast<double>(ids.size());
}

}  // namespace

TEST(StrategyNames, RoundTripAndUnknown) {
    for (Strategy s : {Strategy::PD, Strategy::RAND, Strategy::HIGH, Strategy::MID}) {
        EXPECT_EQ(strategy_from_name(strategy_name(s)), s);
    }
    EXPECT_THROW(strategy_from_name("best"), DataError);
}

TEST(Budget, RoundsHalfEvenAndCaps) {
    EXPECT_EQ(selection_budget(1.0, 5), 5u);
    EXPECT_EQ(selection_budget(0.6, 5), 3u);
    EXPECT_EQ(selection_budget(0.5, 5), 2u);  // 2.5 rounds to even
    EXPECT_EQ(selection_budget(0.3, 20000), 6000u);
    EXPECT_EQ(selection_budget(0.001, 100), 0u);
}

TEST(SelectPd, TakesMostNegativeWithIdTiebreak) {
    const auto table = make_table(
        {{"a", 0.5}, {"b", -1.2}, {"c", 0.0}, {"d", -1.2}, {"e", 2.0}});
    const auto report = select_pd(table, 0.6);
    EXPECT_EQ(report.selected_ids, (std::vector<std::string>{"b", "d", "c"}));
    EXPECT_FALSE(report.seed.has_value());
    ASSERT_TRUE(report.selected_stats.has_value());
    EXPECT_DOUBLE_EQ(report.selected_stats->min, -1.2);
    EXPECT_DOUBLE_EQ(report.selected_stats->max, 0.0);
    EXPECT_NEAR(report.selected_stats->mean, -0.8, 1e-15);
    ASSERT_TRUE(report.complement_stats.has_value());
    EXPECT_DOUBLE_EQ(report.complement_stats->min, 0.5);
    EXPECT_DOUBLE_EQ(report.complement_stats->max, 2.0);
    EXPECT_DOUBLE_EQ(report.complement_stats->mean, 1.25);
}

TEST(SelectPd, FullLambdaKeepsEverythingInPdOrder) {
    const auto table = make_table({{"a", 0.5}, {"b", -1.2}, {"c", 0.0}});
    const auto report = select_pd(table, 1.0);
    EXPECT_EQ(report.selected_ids, (std::vector<std::string>{"b", "c", "a"}));
    EXPECT_TRUE(report.selected_stats.has_value());
    EXPECT_FALSE(report.complement_stats.has_value());
}

TEST(SelectPd, SmallerLambdaIsAPrefix) {
    const auto table = random_table(97, 9);
    const auto big = select_pd(table, 0.5);
    const auto small = select_pd(table, 0.2);
    ASSERT_LE(small.selected_ids.size(), big.selected_ids.size());
    for (std::size_t i = 0; i < small.selected_ids.size(); ++i) {
        EXPECT_EQ(small.selected_ids[i], big.selected_ids[i]);
    }
}

TEST(SelectPd, RejectsBadLambdaAndEmptyTable) {
    const auto table = make_table({{"a", 0.0}});
    EXPECT_THROW(select_pd(table, 0.0), DataError);
    EXPECT_THROW(select_pd(table, 1.5), DataError);
    EXPECT_THROW(select_pd(PdScoreTable{}, 0.5), DataError);
}

TEST(Baselines, HighTakesTheOppositeTail) {
    const auto table = make_table(
        {{"a", 0.5}, {"b", -1.2}, {"c", 0.0}, {"d", -1.2}, {"e", 2.0}});
    const auto high = select_baseline(table, Strategy::HIGH, 0.6);
    EXPECT_EQ(high.selected_ids, (std::vector<std::string>{"e", "a", "c"}));
    EXPECT_FALSE(high.seed.has_value());
}

TEST(Baselines, MidTakesTheCenteredWindow) {
    const auto table = make_table(
        {{"a", 0.5}, {"b", -1.2}, {"c", 0.0}, {"d", -1.2}, {"e", 2.0}});
    // pd order is b,d,c,a,e; window of 3 starts at (5-3)/2 = 1.
    const auto mid = select_baseline(table, Strategy::MID, 0.6);
    EXPECT_EQ(mid.selected_ids, (std::vector<std::string>{"d", "c", "a"}));
}

TEST(Baselines, RandIsSeededAndRecordsTheSeed) {
    const auto table = random_table(50, 77);
    const auto a = select_baseline(table, Strategy::RAND, 0.4, 123);
    const auto b = select_baseline(table, Strategy::RAND, 0.4, 123);
    const auto c = select_baseline(table, Strategy::RAND, 0.4, 124);
    EXPECT_EQ(a.selected_ids, b.selected_ids);
    EXPECT_NE(a.selected_ids, c.selected_ids);
    ASSERT_TRUE(a.seed.has_value());
    EXPECT_EQ(*a.seed, 123u);
    EXPECT_EQ(a.selected_ids.size(), 20u);
    EXPECT_EQ(std::set<std::string>(a.selected_ids.begin(), a.selected_ids.end()).size(), 20u);
}

TEST(Baselines, PdStrategyDelegates) {
    const auto table = random_table(20, 3);
    EXPECT_EQ(select_baseline(table, Strategy::PD, 0.5).selected_ids,
              select_pd(table, 0.5).selected_ids);
}

TEST(Baselines, PdMinimizesMeanSelectedPd) {
    const auto table = random_table(200, 15);
    const double lambda = 0.3;
    const auto pd = select_pd(table, lambda);
    const double mean_pd_sel = mean_pd_of(table, pd.selected_ids);
    for (Strategy s : {Strategy::RAND, Strategy::HIGH, Strategy::MID}) {
        const auto other = select_baseline(table, s, lambda, 5);
        EXPECT_LE(mean_pd_sel, mean_pd_of(table, other.selected_ids))
            << strategy_name(s);
    }
}

TEST(Baselines, HighAndPdAreDisjointBelowHalf) {
    const auto table = random_table(100, 29);
    const auto pd = select_pd(table, 0.3);
    const auto high = select_baseline(table, Strategy::HIGH, 0.3);
    const std::set<std::string> a(pd.selected_ids.begin(), pd.selected_ids.end());
    for (const auto& id : high.selected_ids) EXPECT_EQ(a.count(id), 0u) << id;
}

TEST(WriteSubset, EmitsDatasetOrderLoadableFile) {
    TempDir dir;
    auto ds = testsupport::tiny_dataset();
    ds.pairs.push_back(testsupport::make_pair("z0", 0, {0.1, 0.2}, {0.3, 0.4}));
    ds.pairs.push_back(testsupport::make_pair("z1", 1, {0.5, 0.6}, {0.7, 0.8}));
    ds.pairs.push_back(testsupport::make_pair("z2", 0, {0.9, 1.0}, {1.1, 1.2}));

    SelectionReport report;
    report.selected_ids = {"z2", "z0"};  // reversed on purpose
    const auto path = dir.file("subset.jsonl");
    write_subset(ds, report, path);
    const auto sub = load_dataset(path);
    ASSERT_EQ(sub.pairs.size(), 2u);
    EXPECT_EQ(sub.pairs[0].id, "z0");
    EXPECT_EQ(sub.pairs[1].id, "z2");
    EXPECT_EQ(sub.kappa(), ds.kappa());
    EXPECT_EQ(sub.feature_dim, ds.feature_dim);

    report.selected_ids = {"zz"};
    EXPECT_THROW(write_subset(ds, report, dir.file("bad.jsonl")), DataError);
}

TEST(ReportIo, RoundTripWithAndWithoutSeed) {
    TempDir dir;
    const auto table = random_table(40, 8);

    const auto pd = select_pd(table, 0.25);
    const auto pd_path = dir.file("pd_report.json");
    save_report(pd, pd_path);
    const auto pd_back = load_report(pd_path);
    EXPECT_EQ(pd_back.strategy, Strategy::PD);
    EXPECT_EQ(pd_back.selected_ids, pd.selected_ids);
    EXPECT_FALSE(pd_back.seed.has_value());
    ASSERT_TRUE(pd_back.selected_stats.has_value());
    EXPECT_EQ(pd_back.selected_stats->mean, pd.selected_stats->mean);
    ASSERT_TRUE(pd_back.complement_stats.has_value());

    const auto rnd = select_baseline(table, Strategy::RAND, 0.25, 42);
    const auto rnd_path = dir.file("rand_report.json");
    save_report(rnd, rnd_path);
    const auto rnd_back = load_report(rnd_path);
    ASSERT_TRUE(rnd_back.seed.has_value());
    EXPECT_EQ(*rnd_back.seed, 42u);

    // Full-lambda report serializes the missing complement as null.
    const auto full = select_pd(table, 1.0);
    const auto j = report_to_json(full);
    EXPECT_TRUE(j["pd_stats"]["complement"].is_null());
    EXPECT_FALSE(j.contains("seed"));
    const auto full_path = dir.file("full_report.json");
    save_report(full, full_path);
    EXPECT_FALSE(load_report(full_path).complement_stats.has_value());
}

TEST(ReportIo, RejectsDuplicateIdsAndGarbage) {
    TempDir dir;
    EXPECT_THROW(load_report(dir.file("absent.json")), DataError);
    {
        std::ofstream out(dir.file("dup.json"));
        out << R"({"strategy":"PD","lambda":0.5,"selected_ids":["z1","z1"],)"
            << R"("pd_stats":{"selected":null,"complement":null}})";
    }
    EXPECT_THROW(load_report(dir.file("dup.json")), DataError);
    {
        std::ofstream out(dir.file("garbage.json"));
        out << "]";
    }
    EXPECT_THROW(load_report(dir.file("garbage.json")), DataError);
}
