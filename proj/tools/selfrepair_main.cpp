// selfrepair: instrumented decoder-only transformer inference with residual
// decomposition, ablation/patching interventions, and self-repair metrics.
//
// Subcommands run the experiments described in the README, synthesize toy
// models/corpora, or run the invariant suite. Exit codes: 0 success, 2 config
// error, 3 data error, 4 identity-check failure.

#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "selfrepair/selfrepair.hpp"

namespace {

struct Flags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    bool emit_tokens = false;
    std::optional<std::string> format;
    std::optional<std::string> ablation;
};

void add_common_flags(CLI::App* cmd, Flags& flags, bool config_required) {
    auto* opt = cmd->add_option("--config", flags.config_path, "flat key/value config file");
    if (config_required) opt->required();
    cmd->add_option("--seed", flags.seed, "override the config seed");
    cmd->add_flag("--emit-tokens", flags.emit_tokens, "also stream per-token rows");
    cmd->add_option("--format", flags.format, "output format: csv or jsonl");
    cmd->add_option("--ablation", flags.ablation, "override ablation mode: zero, mean, resample");
}

selfrepair::ExperimentConfig load_config(const Flags& flags, const std::string& kind) {
    selfrepair::ExperimentConfig cfg;
    if (!flags.config_path.empty())
        cfg = selfrepair::ExperimentConfig::parse_file(flags.config_path);
    if (!cfg.experiment.empty() && cfg.experiment != kind &&
        kind != "make-toy-model" && kind != "make-corpus" && kind != "check-identities")
        throw selfrepair::ConfigError("config names experiment \"" + cfg.experiment +
                                      "\" but the subcommand is \"" + kind + "\"");
    cfg.experiment = kind;
    if (flags.seed) cfg.seed = *flags.seed;
    if (flags.emit_tokens) cfg.emit_tokens = true;
    if (flags.format) cfg.format = *flags.format;
    if (flags.ablation) cfg.ablation = {*flags.ablation};
    return cfg;
}

int run_experiment_command(const Flags& flags, const std::string& kind) {
    const selfrepair::ExperimentConfig cfg = load_config(flags, kind);
    const selfrepair::ExperimentOutput output = selfrepair::run_experiment(cfg);
    const auto written = selfrepair::export_experiment(output, cfg);
    for (const auto& path : written)
        std::printf("wrote %s\n", path.string().c_str());
    for (const auto& path : output.streamed)
        std::printf("wrote %s\n", path.string().c_str());
    return 0;
}

int run_make_toy_model(const Flags& flags) {
    selfrepair::ExperimentConfig cfg = load_config(flags, "make-toy-model");
    cfg.validate_for("make-toy-model");
    const std::uint64_t seed = cfg.toy_seed.value_or(cfg.seed);
    const selfrepair::Model model = selfrepair::init_toy_model(cfg.toy_config, seed);
    selfrepair::save_model(model, cfg.output_path);
    std::printf("wrote %s (seed %llu, weight hash %016llx)\n", cfg.output_path.c_str(),
                static_cast<unsigned long long>(seed),
                static_cast<unsigned long long>(model.weight_hash()));
    return 0;
}

int run_make_corpus(const Flags& flags) {
    selfrepair::ExperimentConfig cfg = load_config(flags, "make-corpus");
    cfg.validate_for("make-corpus");
    const selfrepair::Corpus corpus = selfrepair::make_random_corpus(
        cfg.n_sequences, cfg.seq_len, cfg.toy_config.vocab_size, cfg.seed);
    selfrepair::save_corpus(corpus, cfg.output_path);
    std::printf("wrote %s (%d sequences of length %d, vocab %d)\n", cfg.output_path.c_str(),
                cfg.n_sequences, cfg.seq_len, cfg.toy_config.vocab_size);
    return 0;
}

int run_check_identities(const Flags& flags) {
    const selfrepair::ExperimentConfig cfg = load_config(flags, "check-identities");
    const selfrepair::IdentityReport report = selfrepair::run_identity_suite(cfg.seed);
    for (const auto& check : report.checks) {
        if (check.tolerance > 0.0 || check.worst > 0.0)
            std::printf("%s %-32s worst=%.3e tol=%.1e\n", check.pass ? "PASS" : "FAIL",
                        check.name.c_str(), check.worst, check.tolerance);
        else
            std::printf("%s %-32s\n", check.pass ? "PASS" : "FAIL", check.name.c_str());
    }
    if (!report.all_pass()) {
        std::fprintf(stderr, "identity checks failed\n");
        return 4;
    }
    std::printf("all identity checks passed\n");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"instrumented transformer forward passes, ablations, and self-repair metrics"};
    app.require_subcommand(1);

    const std::string experiment_kinds[] = {"head-sweep", "ln-analysis", "breakdown",
                                            "neuron-analysis", "reinjection"};
    std::map<const CLI::App*, std::string> kind_of;
    std::map<const CLI::App*, Flags> flags_of;

    for (const std::string& kind : experiment_kinds) {
        CLI::App* cmd = app.add_subcommand(kind, "run the " + kind + " experiment");
        kind_of[cmd] = kind;
        add_common_flags(cmd, flags_of[cmd], /*config_required=*/true);
    }
    CLI::App* make_model = app.add_subcommand("make-toy-model", "write a seeded toy weight file");
    add_common_flags(make_model, flags_of[make_model], /*config_required=*/true);
    CLI::App* make_corpus = app.add_subcommand("make-corpus", "write a seeded random corpus");
    add_common_flags(make_corpus, flags_of[make_corpus], /*config_required=*/true);
    CLI::App* check = app.add_subcommand("check-identities",
                                         "run the invariant suite on a seeded toy model");
    add_common_flags(check, flags_of[check], /*config_required=*/false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        const CLI::App* cmd = app.get_subcommands().front();
        if (cmd == make_model) return run_make_toy_model(flags_of[cmd]);
        if (cmd == make_corpus) return run_make_corpus(flags_of[cmd]);
        if (cmd == check) return run_check_identities(flags_of[cmd]);
        return run_experiment_command(flags_of[cmd], kind_of[cmd]);
    } catch (const selfrepair::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const selfrepair::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
