// Command-line front end. Exit codes: 0 success, 2 configuration problems,
// 3 missing/malformed data, 4 numeric failures (divergence etc.), 1 anything else.

#include "mbj/runner.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

namespace {

void print_summary(const mbj::RunSummary& s) {
    for (const auto& [k, v] : s.rows) std::printf("%-22s %s\n", k.c_str(), v.c_str());
}

struct CommonOpts {
    std::string config_path;
    std::string output_dir;
    std::string variant;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* out_opt = nullptr;
    CLI::Option* variant_opt = nullptr;

    void attach(CLI::App* cmd, bool with_variant) {
        cmd->add_option("-c,--config", config_path, "experiment config (INI)")->check(CLI::ExistingFile);
        seed_opt = cmd->add_option("--seed", seed, "override experiment.seed");
        out_opt = cmd->add_option("-o,--output-dir", output_dir, "override experiment.output_dir");
        if (with_variant)
            variant_opt = cmd->add_option("--variant", variant, "override experiment.variant");
    }

    mbj::ExperimentConfig resolve() const {
        mbj::ExperimentConfig cfg =
            config_path.empty() ? mbj::ExperimentConfig{} : mbj::load_config(config_path);
        if (seed_opt && seed_opt->count()) cfg.seed = seed;
        if (out_opt && out_opt->count()) cfg.output_dir = output_dir;
        if (variant_opt && variant_opt->count()) cfg.variant = variant;
        cfg.validate();
        return cfg;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"long-tailed recognition experiments with a memory-based jitter fine-tuning phase"};
    app.require_subcommand(1);

    CommonOpts synth_opts, train_opts, ablate_opts;

    auto* synth = app.add_subcommand("synth-data", "materialize the dataset a config describes");
    synth_opts.attach(synth, false);

    auto* train = app.add_subcommand("train", "run phase 1 + the configured phase-2 variant");
    train_opts.attach(train, true);

    auto* eval = app.add_subcommand("eval", "re-evaluate a finished run from its final checkpoint");
    std::string eval_dir;
    eval->add_option("run_dir", eval_dir, "run directory")->required()->check(CLI::ExistingDirectory);

    auto* ablate = app.add_subcommand("ablate", "branch several phase-2 variants off one shared phase 1");
    ablate_opts.attach(ablate, false);
    std::vector<std::string> variants;
    ablate->add_option("--variants", variants, "variants to run (default: all for the task)")
        ->delimiter(',');

    auto* jitter = app.add_subcommand("jitter-stats", "angular-variance curve for a recorded trace");
    std::string trace_path, curve_out;
    jitter->add_option("trace", trace_path, "trace CSV from a run's jitter/ directory")
        ->required()
        ->check(CLI::ExistingFile);
    jitter->add_option("-o,--out", curve_out, "write the variance curve CSV here");

    auto* exporter = app.add_subcommand("export-embeddings", "embed a split with a run's final checkpoint");
    std::string export_dir, split = "eval", export_out;
    exporter->add_option("run_dir", export_dir, "run directory")->required()->check(CLI::ExistingDirectory);
    exporter->add_option("--split", split, "train | eval | query | gallery")
        ->check(CLI::IsMember({"train", "eval", "query", "gallery"}));
    exporter->add_option("-o,--out", export_out, "output file (default <run_dir>/embeddings/<split>.bin)");

    auto* compare = app.add_subcommand("compare", "tabulate summary metrics across runs");
    std::vector<std::string> compare_dirs;
    std::string compare_out;
    compare->add_option("run_dirs", compare_dirs, "two or more run directories")
        ->required()
        ->expected(2, -1);
    compare->add_option("-o,--out", compare_out, "also write the table as CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) {
            mbj::ExperimentConfig cfg = synth_opts.resolve();
            mbj::synthesize_data(cfg, cfg.output_dir);
            std::printf("dataset written to %s\n", cfg.output_dir.c_str());
        } else if (train->parsed()) {
            mbj::ExperimentConfig cfg = train_opts.resolve();
            mbj::RunSummary s = mbj::run_experiment(cfg);
            print_summary(s);
            std::printf("artifacts in %s\n", cfg.output_dir.c_str());
        } else if (eval->parsed()) {
            print_summary(mbj::evaluate_run(eval_dir));
        } else if (ablate->parsed()) {
            mbj::ExperimentConfig cfg = ablate_opts.resolve();
            auto summaries = mbj::run_ablation_suite(cfg, variants);
            std::vector<std::string> dirs;
            for (const auto& s : summaries) dirs.push_back(cfg.output_dir + "/" + *s.find("variant"));
            if (dirs.size() >= 2) {
                std::string table = mbj::compare_runs(dirs, cfg.output_dir + "/comparison.csv");
                std::fputs(table.c_str(), stdout);
            } else {
                print_summary(summaries.front());
            }
            std::printf("artifacts in %s\n", cfg.output_dir.c_str());
        } else if (jitter->parsed()) {
            std::fputs(mbj::jitter_stats(trace_path, curve_out).c_str(), stdout);
        } else if (exporter->parsed()) {
            mbj::export_run_embeddings(export_dir, split, export_out);
            std::string where = export_out.empty() ? export_dir + "/embeddings/" + split + ".bin" : export_out;
            std::printf("embeddings written to %s\n", where.c_str());
        } else if (compare->parsed()) {
            std::fputs(mbj::compare_runs(compare_dirs, compare_out).c_str(), stdout);
        }
    } catch (const mbj::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const mbj::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const mbj::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
