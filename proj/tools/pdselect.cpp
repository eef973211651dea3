#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <CLI11.hpp>

#include "pdselect/corpus.hpp"
#include "pdselect/divergence.hpp"
#include "pdselect/errors.hpp"
#include "pdselect/objectives.hpp"
#include "pdselect/pipeline.hpp"
#include "pdselect/reward.hpp"
#include "pdselect/selection.hpp"
#include "pdselect/synth.hpp"
#include "pdselect/theory.hpp"

namespace {

// Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric/verification failure.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitVerify = 3;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void emit(const pdselect::ordered_json& j, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << j.dump(2) << '\n';
        return;
    }
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw pdselect::DataError("cannot write '" + out_path + "'");
    out << j.dump(2) << '\n';
    if (!out) throw pdselect::DataError("I/O error while writing '" + out_path + "'");
}

void print_warnings(const std::vector<std::string>& warnings) {
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

std::vector<pdselect::RewardModel> load_all_models(const std::string& models_dir, int kappa) {
    std::vector<pdselect::RewardModel> models;
    models.reserve(static_cast<std::size_t>(kappa));
    for (int k = 0; k < kappa; ++k) {
        auto m = pdselect::load_model(pdselect::model_file_path(models_dir, k));
        if (m.aspect != k) {
            throw pdselect::DataError("model file for aspect " + std::to_string(k) +
                                      " declares aspect " + std::to_string(m.aspect));
        }
        models.push_back(std::move(m));
    }
    return models;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"preference-data curation: per-aspect reward models, divergence scoring, subset selection"};
    app.require_subcommand(1);

    // validate
    auto* c_validate = app.add_subcommand("validate", "check a corpus file and print its summary");
    std::string v_data, v_out;
    c_validate->add_option("--data", v_data, "corpus JSONL path")->required();
    c_validate->add_option("--out", v_out, "write the summary JSON here instead of stdout");

    // synth
    auto* c_synth = app.add_subcommand("synth", "generate a synthetic corpus with ground truth");
    std::string s_out, s_config;
    pdselect::SynthConfig s_cfg;
    c_synth->add_option("--out", s_out, "output corpus path")->required();
    c_synth->add_option("--config", s_config, "synth config JSON (flags override it)");
    c_synth->add_option("--n-prompts", s_cfg.n_prompts, "prompts (= pairs)");
    c_synth->add_option("--responses", s_cfg.responses_per_prompt, "responses per prompt");
    c_synth->add_option("--kappa", s_cfg.kappa, "number of aspects");
    c_synth->add_option("--conflict", s_cfg.conflict_target, "target conflict rate in [0,0.5]");
    c_synth->add_option("--length-bias", s_cfg.length_bias_prob, "P(chosen is longer)");
    c_synth->add_option("--feature-dim", s_cfg.feature_dim, "feature dimension (>= kappa)");
    c_synth->add_option("--feature-noise", s_cfg.feature_noise, "stddev of feature noise");
    c_synth->add_option("--margin-noise", s_cfg.margin_noise, "stddev of policy logp noise");
    c_synth->add_option("--seed", s_cfg.seed, "generator seed");

    // train-rm
    auto* c_train = app.add_subcommand("train-rm", "train one reward model per aspect");
    std::string t_data, t_models;
    pdselect::TrainConfig t_cfg;
    bool t_balanced = true;
    c_train->add_option("--data", t_data, "corpus JSONL path")->required();
    c_train->add_option("--models-dir", t_models, "directory for model files")->required();
    c_train->add_option("--lr", t_cfg.learning_rate, "learning rate");
    c_train->add_option("--epochs", t_cfg.epochs, "training epochs");
    c_train->add_option("--batch-size", t_cfg.batch_size, "mini-batch size");
    c_train->add_option("--l2", t_cfg.l2, "L2 coefficient on weights");
    c_train->add_option("--rho", t_cfg.rho, "length penalty coefficient");
    c_train->add_option("--tau", t_cfg.tau, "balance temperature");
    c_train->add_option("--p-r", t_cfg.p_r, "sampling ratio in (0,1]");
    c_train->add_option("--seed", t_cfg.seed, "training seed");
    c_train->add_flag("--balanced,!--no-balanced", t_balanced,
                      "length-balanced sampling (default on)");

    // score
    auto* c_score = app.add_subcommand("score", "compute the divergence table from trained models");
    std::string sc_data, sc_models, sc_out;
    double sc_rho = 0.0, sc_gamma = 0.9;
    int sc_threads = 1;
    c_score->add_option("--data", sc_data, "corpus JSONL path")->required();
    c_score->add_option("--models-dir", sc_models, "directory with model files")->required();
    c_score->add_option("--out", sc_out, "output table path")->required();
    c_score->add_option("--rho", sc_rho, "length penalty (use the training value)");
    c_score->add_option("--gamma", sc_gamma, "quantile level in (0,1)");
    c_score->add_option("--threads", sc_threads, "worker threads");

    // select
    auto* c_select = app.add_subcommand("select", "pick a subset under a budget");
    std::string se_table, se_data, se_subset, se_report, se_strategy = "PD";
    double se_lambda = 0.3;
    std::uint64_t se_seed = 0;
    c_select->add_option("--table", se_table, "divergence table path")->required();
    c_select->add_option("--data", se_data, "corpus path (needed with --subset)");
    c_select->add_option("--subset", se_subset, "write the selected pairs here");
    c_select->add_option("--report", se_report, "write the selection report here (default stdout)");
    c_select->add_option("--strategy", se_strategy, "PD, RAND, HIGH, or MID")
        ->check(CLI::IsMember({"PD", "RAND", "HIGH", "MID"}));
    c_select->add_option("--lambda", se_lambda, "selected fraction in (0,1]");
    c_select->add_option("--seed", se_seed, "selection seed (RAND)");

    // eval-loss
    auto* c_eval = app.add_subcommand("eval-loss", "evaluate the preference losses on a corpus");
    std::string e_data, e_table, e_margins;
    double e_beta = 0.1;
    c_eval->add_option("--data", e_data, "corpus with log-probability fields")->required();
    c_eval->add_option("--table", e_table, "divergence table path")->required();
    c_eval->add_option("--beta", e_beta, "margin scale");
    c_eval->add_option("--out-margins", e_margins, "also write the margin records here");

    // bounds
    auto* c_bounds = app.add_subcommand("bounds", "loss bounds for a selection");
    std::string b_margins, b_report, b_out;
    int b_kappa = 0;
    double b_r = 1.0;
    c_bounds->add_option("--margins", b_margins, "margin records JSONL")->required();
    c_bounds->add_option("--selection-report", b_report, "selection report JSON")->required();
    c_bounds->add_option("--kappa", b_kappa, "number of aspects")->required();
    c_bounds->add_option("--r-bound", b_r, "per-aspect gap bound");
    c_bounds->add_option("--out", b_out, "write the bounds report here (default stdout)");

    // verify-theory
    auto* c_theory = app.add_subcommand("verify-theory", "randomized checks of the bound lemmas");
    long long th_trials = 10000;
    int th_instances = 100;
    std::uint64_t th_seed = 0;
    std::string th_out;
    c_theory->add_option("--trials", th_trials, "trials per lemma");
    c_theory->add_option("--instances", th_instances, "optimality instances");
    c_theory->add_option("--seed", th_seed, "verification seed");
    c_theory->add_option("--out", th_out, "write the report here (default stdout)");

    // run
    auto* c_run = app.add_subcommand("run", "full pipeline from a config file");
    std::string r_config;
    double r_lambda = 0.0, r_rho = 0.0, r_gamma = 0.0, r_beta = 0.0;
    std::string r_strategy;
    int r_threads = 0;
    std::uint64_t r_seed = 0, r_sel_seed = 0;
    bool r_balanced = true;
    c_run->add_option("--config", r_config, "pipeline config JSON")->required();
    c_run->add_option("--lambda", r_lambda, "override: selected fraction");
    c_run->add_option("--strategy", r_strategy, "override: selection strategy")
        ->check(CLI::IsMember({"PD", "RAND", "HIGH", "MID"}));
    c_run->add_option("--gamma", r_gamma, "override: quantile level");
    c_run->add_option("--beta", r_beta, "override: margin scale");
    c_run->add_option("--rho", r_rho, "override: length penalty");
    c_run->add_option("--seed", r_seed, "override: training seed");
    c_run->add_option("--selection-seed", r_sel_seed, "override: selection seed");
    c_run->add_option("--threads", r_threads, "override: worker threads");
    c_run->add_flag("--balanced,!--no-balanced", r_balanced, "override: sampling mode");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (c_validate->parsed()) {
            const auto ds = pdselect::load_dataset(v_data);
            emit(pdselect::summary_to_json(pdselect::dataset_summary(ds)), v_out);
            return kExitOk;
        }
        if (c_synth->parsed()) {
            pdselect::SynthConfig cfg;
            if (!s_config.empty()) {
                std::ifstream in(s_config, std::ios::binary);
                if (!in) throw pdselect::DataError("cannot open '" + s_config + "'");
                pdselect::ordered_json j;
                try {
                    j = pdselect::ordered_json::parse(in);
                } catch (const nlohmann::json::exception& e) {
                    throw pdselect::DataError("bad config '" + s_config + "': " + e.what());
                }
                cfg = pdselect::SynthConfig::from_json(j);
            }
            const auto take = [&](const char* flag, auto member) {
                if (c_synth->count(flag)) cfg.*member = s_cfg.*member;
            };
            take("--n-prompts", &pdselect::SynthConfig::n_prompts);
            take("--responses", &pdselect::SynthConfig::responses_per_prompt);
            take("--kappa", &pdselect::SynthConfig::kappa);
            take("--conflict", &pdselect::SynthConfig::conflict_target);
            take("--length-bias", &pdselect::SynthConfig::length_bias_prob);
            take("--feature-dim", &pdselect::SynthConfig::feature_dim);
            take("--feature-noise", &pdselect::SynthConfig::feature_noise);
            take("--margin-noise", &pdselect::SynthConfig::margin_noise);
            take("--seed", &pdselect::SynthConfig::seed);
            cfg.validate();
            const auto ds = pdselect::generate(cfg);
            pdselect::save_dataset(ds, s_out);
            std::cerr << "wrote " << ds.pairs.size() << " pairs to " << s_out << '\n';
            return kExitOk;
        }
        if (c_train->parsed()) {
            const auto ds = pdselect::load_dataset(t_data);
            std::vector<std::string> warnings;
            const auto models = pdselect::train_all_models(ds, t_cfg, t_balanced, &warnings);
            std::filesystem::create_directories(t_models);
            for (const auto& m : models) {
                pdselect::save_model(m, pdselect::model_file_path(t_models, m.aspect));
            }
            print_warnings(warnings);
            std::cerr << "wrote " << models.size() << " model files to " << t_models << '\n';
            return kExitOk;
        }
        if (c_score->parsed()) {
            const auto ds = pdselect::load_dataset(sc_data);
            const auto models = load_all_models(sc_models, ds.kappa());
            const auto table = pdselect::compute_pd_table(ds, models, sc_rho, sc_gamma, sc_threads);
            pdselect::save_pd_table(table, sc_out);
            std::cerr << "wrote " << table.rows.size() << " rows to " << sc_out << '\n';
            return kExitOk;
        }
        if (c_select->parsed()) {
            const auto table = pdselect::load_pd_table(se_table);
            const auto strategy = pdselect::strategy_from_name(se_strategy);
            if (strategy == pdselect::Strategy::RAND && c_select->count("--seed") == 0) {
                throw UsageError("strategy RAND requires --seed");
            }
            const auto report =
                strategy == pdselect::Strategy::PD
                    ? pdselect::select_pd(table, se_lambda)
                    : pdselect::select_baseline(table, strategy, se_lambda, se_seed);
            if (!se_subset.empty()) {
                if (se_data.empty()) throw UsageError("--subset requires --data");
                const auto ds = pdselect::load_dataset(se_data);
                pdselect::write_subset(ds, report, se_subset);
            }
            if (se_report.empty()) {
                emit(pdselect::report_to_json(report), "");
            } else {
                pdselect::save_report(report, se_report);
            }
            return kExitOk;
        }
        if (c_eval->parsed()) {
            const auto ds = pdselect::load_dataset(e_data);
            const auto table = pdselect::load_pd_table(e_table);
            const auto records = pdselect::compute_margins(ds, table, e_beta);
            if (!e_margins.empty()) pdselect::save_margins(records, e_margins);
            pdselect::ordered_json j;
            j["n"] = records.size();
            j["kappa"] = ds.kappa();
            j["beta"] = e_beta;
            j["dpo_loss"] = pdselect::dpo_loss(records);
            j["dmpo_loss"] = pdselect::dmpo_loss(records, ds.kappa(), true);
            emit(j, "");
            return kExitOk;
        }
        if (c_bounds->parsed()) {
            const auto records = pdselect::load_margins(b_margins);
            const auto report = pdselect::load_report(b_report);
            std::unordered_set<std::string> selected(report.selected_ids.begin(),
                                                     report.selected_ids.end());
            std::vector<pdselect::MarginRecord> sel, comp;
            for (const auto& r : records) {
                (selected.count(r.pair_id) ? sel : comp).push_back(r);
            }
            if (sel.size() != selected.size()) {
                throw pdselect::DataError("selection report contains ids missing from the margins");
            }
            const auto params = pdselect::estimate_bound_params(sel, comp, b_kappa, b_r);
            std::vector<double> pd_sel, pd_comp;
            for (const auto& r : sel) pd_sel.push_back(r.pd);
            for (const auto& r : comp) pd_comp.push_back(r.pd);
            const auto bounds = pdselect::dmpo_bounds(pd_sel, pd_comp, params);
            const double measured = pdselect::dmpo_loss(records, b_kappa, true);
            emit(pdselect::bounds_report_json(bounds, measured, params), b_out);
            return kExitOk;
        }
        if (c_theory->parsed()) {
            const auto l1 = pdselect::verify_lemma1(th_trials, {0.05, 5.0}, {-8.0, 8.0},
                                                    pdselect::derive_seed(th_seed, 1));
            const auto l2 = pdselect::verify_lemma2(th_trials, pdselect::derive_seed(th_seed, 2));
            const auto l3 = pdselect::verify_lemma3(th_trials, {2, 64}, 1.0,
                                                    pdselect::derive_seed(th_seed, 3));
            const auto opt =
                pdselect::verify_selection_optimality(th_instances, pdselect::derive_seed(th_seed, 4));
            pdselect::ordered_json j;
            j["lemma1"] = pdselect::lemma_report_json(l1);
            j["lemma2"] = pdselect::lemma_report_json(l2);
            j["lemma3"] = pdselect::lemma_report_json(l3);
            j["theorem2"] = pdselect::optimality_report_json(opt);
            emit(j, th_out);
            const bool ok = l1.violations == 0 && l2.violations == 0 && l3.violations == 0 &&
                            opt.passes == opt.instances;
            return ok ? kExitOk : kExitVerify;
        }
        if (c_run->parsed()) {
            auto cfg = pdselect::PipelineConfig::load(r_config);
            if (c_run->count("--lambda")) cfg.lambda = r_lambda;
            if (c_run->count("--strategy")) cfg.strategy = pdselect::strategy_from_name(r_strategy);
            if (c_run->count("--gamma")) cfg.gamma = r_gamma;
            if (c_run->count("--beta")) cfg.beta = r_beta;
            if (c_run->count("--rho")) cfg.train.rho = r_rho;
            if (c_run->count("--seed")) cfg.train.seed = r_seed;
            if (c_run->count("--selection-seed")) cfg.selection_seed = r_sel_seed;
            if (c_run->count("--threads")) cfg.threads = r_threads;
            if (c_run->count("--balanced") || c_run->count("--no-balanced")) {
                cfg.balanced_sampling = r_balanced;
            }
            const auto report = pdselect::run_pipeline(cfg);
            print_warnings(report.warnings);
            emit(pdselect::run_report_json(report), "");
            return kExitOk;
        }
        throw UsageError("no subcommand selected");
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const pdselect::StageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        for (const auto& p : e.partial_outputs()) std::cerr << "partial output: " << p << '\n';
        return kExitData;
    } catch (const pdselect::DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return kExitVerify;
    }
}
