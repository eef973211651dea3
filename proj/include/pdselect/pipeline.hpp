#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pdselect/corpus.hpp"
#include "pdselect/divergence.hpp"
#include "pdselect/errors.hpp"
#include "pdselect/reward.hpp"
#include "pdselect/selection.hpp"

namespace pdselect {

struct PipelinePaths {
    std::string dataset;
    std::string models_dir;
    std::string table;
    std::string subset;
    std::string selection_report;
    std::string run_report;
};

struct PipelineConfig {
    PipelinePaths paths;
    TrainConfig train;
    double gamma = 0.9;
    double beta = 0.1;
    double lambda = 0.3;
    Strategy strategy = Strategy::PD;
    std::uint64_t selection_seed = 0;
    bool balanced_sampling = true;
    int threads = 1;

    void validate() const {
        train.validate();
        if (!(gamma > 0.0 && gamma < 1.0)) throw DataError("gamma must be in (0,1)");
        if (!(beta > 0.0)) throw DataError("beta must be > 0");
        if (!(lambda > 0.0 && lambda <= 1.0)) throw DataError("lambda must be in (0,1]");
        if (threads < 1) throw DataError("threads must be >= 1");
        const std::vector<std::pair<std::string, std::string>> named = {
            {"dataset", paths.dataset},           {"models_dir", paths.models_dir},
            {"table", paths.table},               {"subset", paths.subset},
            {"selection_report", paths.selection_report}, {"run_report", paths.run_report}};
        std::unordered_set<std::string> seen;
        for (const auto& [name, p] : named) {
            if (p.empty()) throw DataError("path '" + name + "' is empty");
            if (!seen.insert(p).second) throw DataError("paths must be pairwise distinct ('" + p + "')");
        }
    }

    ordered_json to_json() const {
        ordered_json j;
        j["paths"] = {{"dataset", paths.dataset},
                      {"models_dir", paths.models_dir},
                      {"table", paths.table},
                      {"subset", paths.subset},
                      {"selection_report", paths.selection_report},
                      {"run_report", paths.run_report}};
        j["train"] = {{"learning_rate", train.learning_rate}, {"epochs", train.epochs},
                      {"batch_size", train.batch_size},       {"l2", train.l2},
                      {"rho", train.rho},                     {"tau", train.tau},
                      {"p_r", train.p_r},                     {"seed", train.seed}};
        j["gamma"] = gamma;
        j["beta"] = beta;
        j["lambda"] = lambda;
        j["strategy"] = strategy_name(strategy);
        j["selection_seed"] = selection_seed;
        j["balanced_sampling"] = balanced_sampling;
        j["threads"] = threads;
        return j;
    }

    static PipelineConfig from_json(const ordered_json& j) {
        PipelineConfig c;
        try {
            if (j.contains("paths")) {
                const auto& p = j["paths"];
                if (p.contains("dataset")) c.paths.dataset = p["dataset"].get<std::string>();
                if (p.contains("models_dir")) c.paths.models_dir = p["models_dir"].get<std::string>();
                if (p.contains("table")) c.paths.table = p["table"].get<std::string>();
                if (p.contains("subset")) c.paths.subset = p["subset"].get<std::string>();
                if (p.contains("selection_report")) {
                    c.paths.selection_report = p["selection_report"].get<std::string>();
                }
                if (p.contains("run_report")) c.paths.run_report = p["run_report"].get<std::string>();
            }
            if (j.contains("train")) {
                const auto& t = j["train"];
                if (t.contains("learning_rate")) c.train.learning_rate = t["learning_rate"].get<double>();
                if (t.contains("epochs")) c.train.epochs = t["epochs"].get<int>();
                if (t.contains("batch_size")) c.train.batch_size = t["batch_size"].get<int>();
                if (t.contains("l2")) c.train.l2 = t["l2"].get<double>();
                if (t.contains("rho")) c.train.rho = t["rho"].get<double>();
                if (t.contains("tau")) c.train.tau = t["tau"].get<double>();
                if (t.contains("p_r")) c.train.p_r = t["p_r"].get<double>();
                if (t.contains("seed")) c.train.seed = t["seed"].get<std::uint64_t>();
            }
            if (j.contains("gamma")) c.gamma = j["gamma"].get<double>();
            if (j.contains("beta")) c.beta = j["beta"].get<double>();
            if (j.contains("lambda")) c.lambda = j["lambda"].get<double>();
            if (j.contains("strategy")) c.strategy = strategy_from_name(j["strategy"].get<std::string>());
            if (j.contains("selection_seed")) c.selection_seed = j["selection_seed"].get<std::uint64_t>();
            if (j.contains("balanced_sampling")) c.balanced_sampling = j["balanced_sampling"].get<bool>();
            if (j.contains("threads")) c.threads = j["threads"].get<int>();
        } catch (const nlohmann::json::exception& e) {
            throw DataError(std::string("bad pipeline config: ") + e.what());
        }
        return c;
    }

    static PipelineConfig load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot open '" + path + "'");
        ordered_json j;
        try {
            j = ordered_json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("bad config file '" + path + "': " + e.what());
        }
        return from_json(j);
    }

    std::string digest() const { return hex64(fnv1a(to_json().dump())); }
};

inline std::string model_file_path(const std::string& models_dir, int aspect) {
    return models_dir + "/rm_" + std::to_string(aspect) + ".json";
}

struct StageTiming {
    std::string stage;
    double seconds = 0.0;
};

struct RunReport {
    std::string config_digest;
    std::size_t n_pairs = 0;
    int kappa = 0;
    std::size_t selected = 0;
    std::vector<StageTiming> timings;
    std::vector<std::string> warnings;
    std::vector<std::string> outputs;
};

inline ordered_json run_report_json(const RunReport& r) {
    ordered_json j;
    j["config_digest"] = r.config_digest;
    j["n_pairs"] = r.n_pairs;
    j["kappa"] = r.kappa;
    j["selected"] = r.selected;
    ordered_json stages = ordered_json::array();
    for (const auto& t : r.timings) stages.push_back({{"stage", t.stage}, {"seconds", t.seconds}});
    j["stages"] = stages;
    j["warnings"] = r.warnings;
    j["outputs"] = r.outputs;
    return j;
}

/// Trains the per-aspect models for a dataset, honoring the sampling mode.
/// Shared by the pipeline and the standalone training subcommand.
inline std::vector<RewardModel> train_all_models(const AggregatedDataset& ds,
                                                 const TrainConfig& train, bool balanced_sampling,
                                                 std::vector<std::string>* warnings = nullptr) {
    std::vector<RewardModel> models;
    models.reserve(static_cast<std::size_t>(ds.kappa()));
    for (int k = 0; k < ds.kappa(); ++k) {
        const auto ids = balanced_sampling ? sample_balanced(ds, k, train, warnings)
                                           : sample_uniform(ds, k, train);
        models.push_back(train_reward_model(ds, k, ids, train));
    }
    return models;
}

/// End-to-end flow: load, per-aspect sample+train, cross-score into the PD
/// table, select, write everything. Any failure is rethrown tagged with its
/// stage and the files already written.
inline RunReport run_pipeline(const PipelineConfig& config) {
    config.validate();
    RunReport report;
    report.config_digest = config.digest();

    using clock = std::chrono::steady_clock;
    const auto timed = [&](const std::string& stage, auto&& fn) {
        const auto t0 = clock::now();
        try {
            fn();
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(stage, e.what(), report.outputs);
        }
        const std::chrono::duration<double> dt = clock::now() - t0;
        report.timings.push_back({stage, dt.count()});
    };

    AggregatedDataset ds;
    timed("load", [&] { ds = load_dataset(config.paths.dataset); });
    report.n_pairs = ds.pairs.size();
    report.kappa = ds.kappa();
    if (ds.kappa() == 1) {
        report.warnings.push_back(
            "single-aspect dataset: every pd is 0 and selection degenerates to id order");
    }

    std::vector<RewardModel> models;
    timed("train", [&] {
        models = train_all_models(ds, config.train, config.balanced_sampling, &report.warnings);
        std::filesystem::create_directories(config.paths.models_dir);
        for (const auto& m : models) {
            const std::string path = model_file_path(config.paths.models_dir, m.aspect);
            save_model(m, path);
            report.outputs.push_back(path);
        }
    });

    PdScoreTable table;
    timed("score", [&] {
        table = compute_pd_table(ds, models, config.train.rho, config.gamma, config.threads);
        save_pd_table(table, config.paths.table);
        report.outputs.push_back(config.paths.table);
    });

    timed("select", [&] {
        const SelectionReport sel =
            config.strategy == Strategy::PD
                ? select_pd(table, config.lambda)
                : select_baseline(table, config.strategy, config.lambda, config.selection_seed);
        report.selected = sel.selected_ids.size();
        save_report(sel, config.paths.selection_report);
        report.outputs.push_back(config.paths.selection_report);
        write_subset(ds, sel, config.paths.subset);
        report.outputs.push_back(config.paths.subset);
    });

    timed("report", [&] {
        std::ofstream out(config.paths.run_report, std::ios::binary);
        if (!out) throw DataError("cannot write '" + config.paths.run_report + "'");
        out << run_report_json(report).dump(2) << '\n';
        if (!out) throw DataError("I/O error while writing '" + config.paths.run_report + "'");
        report.outputs.push_back(config.paths.run_report);
    });
    return report;
}

}  // namespace pdselect
