// Command-line front end. Everything goes through the C API: this file is a
// flag parser plus an options-string builder, and links no C++ internals.
//
// --config names a flat `key = value` file whose keys are the C API option
// names (epochs, batch_size, block_size, k, measures, ...). Its text is
// passed through ahead of the flag-derived entries, and later entries win,
// so command-line flags override the file.

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "uqcloud.h"

namespace {

void print_line(const char* line, void*) { std::fprintf(stderr, "%s\n", line); }

void append(std::string& opts, const std::string& key, const std::string& value) {
    opts += key + " = " + value + "\n";
}

void append(std::string& opts, const std::string& key, double value) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    append(opts, key, std::string(buf));
}

void append(std::string& opts, const std::string& key, int value) {
    append(opts, key, std::to_string(value));
}

void append(std::string& opts, const std::string& key, std::uint64_t value) {
    append(opts, key, std::to_string(value));
}

template <typename T>
void append_if(std::string& opts, const std::string& key, const std::optional<T>& value) {
    if (value) append(opts, key, *value);
}

// Option-file text plus a trailing newline; empty path means no file.
int read_config(const std::string& path, std::string& opts) {
    if (path.empty()) return 0;
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) {
        std::fprintf(stderr, "error: cannot open config file: %s\n", path.c_str());
        return 1;
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    opts += ss.str();
    opts += "\n";
    return 0;
}

int run_status(uqc_status status) {
    if (status == UQC_OK) return 0;
    std::fprintf(stderr, "error: %s\n", uqc_last_error());
    return 1;
}

const char* c_or_null(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Point-cloud segmentation with per-point uncertainty"};
    app.require_subcommand(1);
    std::optional<int> threads;
    app.add_option("--threads", threads, "Cap the BLAS worker count")
        ->envname("UQCLOUD_THREADS");

    // synth ----------------------------------------------------------------
    CLI::App* synth = app.add_subcommand("synth", "Generate labeled synthetic rooms");
    std::string synth_spec, synth_out;
    std::uint64_t synth_seed = 0;
    int synth_scenes = 0;
    synth->add_option("--spec", synth_spec, "Scene spec file (key = value)");
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--seed", synth_seed, "Base seed; scene i uses seed + i");
    synth->add_option("--scenes", synth_scenes, "Scene count (0: spec's `scenes` key)");

    // train ----------------------------------------------------------------
    CLI::App* train = app.add_subcommand("train", "Fit a segmentation network");
    std::string train_model, train_data, train_out, train_config, train_sites;
    std::optional<std::uint64_t> train_seed;
    std::optional<double> train_lr, train_decay_factor, train_momentum, train_wd, train_drop,
        train_psw, train_psb, train_bs;
    std::optional<int> train_epochs, train_batch, train_decay_period, train_classes,
        train_ckpt_period;
    train->add_option("--model", train_model, "frequentist, dropout, or bayesian")
        ->required()
        ->check(CLI::IsMember({"frequentist", "dropout", "bayesian", "bayes"}));
    train->add_option("--data", train_data, "Directory of labeled training clouds")->required();
    train->add_option("--out", train_out, "Checkpoint output path")->required();
    train->add_option("--config", train_config, "Option file, overridden by flags");
    train->add_option("--epochs", train_epochs, "Training epochs (default 100)");
    train->add_option("--batch-size", train_batch, "Blocks per optimizer step (default 16)");
    train->add_option("--lr", train_lr, "Initial learning rate (default 0.001, bayesian 0.01)");
    train->add_option("--decay-factor", train_decay_factor,
                      "Learning-rate decay factor (default 0.7, bayesian 0.9)");
    train->add_option("--decay-period", train_decay_period, "Epochs between decays (default 10)");
    train->add_option("--momentum", train_momentum, "SGD momentum (default 0.9)");
    train->add_option("--weight-decay", train_wd, "L2 penalty weight (default 0)");
    train->add_option("--drop-prob", train_drop, "Dropout drop probability (default 0.1)");
    train->add_option("--drop-sites", train_sites, "Dropout sites: last_three or last_one");
    train->add_option("--prior-sigma-w", train_psw, "Prior stddev for weights (default 4)");
    train->add_option("--prior-sigma-b", train_psb, "Prior stddev for biases (default 8)");
    train->add_option("--classes", train_classes, "Class count (default 6)");
    train->add_option("--block-size", train_bs, "Block footprint in meters (default 1)");
    train->add_option("--checkpoint-period", train_ckpt_period,
                      "Epochs between snapshots (default 10)");
    train->add_option("--seed", train_seed, "Run seed (default 0)");

    // evaluate -------------------------------------------------------------
    CLI::App* evaluate = app.add_subcommand("evaluate", "Score a model on labeled rooms");
    std::string eval_ckpt, eval_data, eval_csv, eval_config;
    std::optional<std::string> eval_measure;
    std::optional<int> eval_k;
    std::optional<double> eval_sigma, eval_bs;
    std::optional<std::uint64_t> eval_seed;
    evaluate->add_option("--ckpt", eval_ckpt, "Checkpoint path")->required();
    evaluate->add_option("--data", eval_data, "Directory of labeled clouds")->required();
    evaluate->add_option("--csv", eval_csv, "Metrics CSV output path")->required();
    evaluate->add_option("--config", eval_config, "Option file, overridden by flags");
    evaluate->add_option("--k", eval_k, "Posterior samples per point (default 50)");
    evaluate->add_option("--measure", eval_measure, "Uncertainty measure or `all` (default all)")
        ->check(CLI::IsMember(
            {"predictive", "aleatoric", "epistemic", "variance", "credible", "all"}));
    evaluate->add_option("--threshold-sigma", eval_sigma,
                         "Filter cut in standard deviations (default 2)");
    evaluate->add_option("--block-size", eval_bs, "Block footprint in meters (default 1)");
    evaluate->add_option("--seed", eval_seed, "Run seed (default 0)");

    // predict --------------------------------------------------------------
    CLI::App* predict = app.add_subcommand("predict", "Write predicted labels for a cloud");
    std::string pred_ckpt, pred_cloud, pred_out, pred_config;
    std::optional<double> pred_bs;
    std::optional<std::uint64_t> pred_seed;
    predict->add_option("--ckpt", pred_ckpt, "Checkpoint path")->required();
    predict->add_option("--cloud", pred_cloud, "Input cloud file")->required();
    predict->add_option("--out", pred_out, "Output cloud path")->required();
    predict->add_option("--config", pred_config, "Option file, overridden by flags");
    predict->add_option("--block-size", pred_bs, "Block footprint in meters (default 1)");
    predict->add_option("--seed", pred_seed, "Run seed (default 0)");

    // uncertainty ----------------------------------------------------------
    CLI::App* unc = app.add_subcommand("uncertainty", "Write a red/black certainty map");
    std::string unc_ckpt, unc_cloud, unc_out, unc_config, unc_csv, unc_stack;
    std::optional<std::string> unc_measure;
    std::optional<int> unc_k;
    std::optional<double> unc_sigma, unc_bs;
    std::optional<std::uint64_t> unc_seed;
    unc->add_option("--ckpt", unc_ckpt, "Checkpoint path")->required();
    unc->add_option("--cloud", unc_cloud, "Input cloud file")->required();
    unc->add_option("--out", unc_out, "Certainty-map output path")->required();
    unc->add_option("--config", unc_config, "Option file, overridden by flags");
    unc->add_option("--measure", unc_measure, "Uncertainty measure (default predictive)")
        ->check(CLI::IsMember({"predictive", "aleatoric", "epistemic", "variance", "credible"}));
    unc->add_option("--k", unc_k, "Posterior samples per point (default 50)");
    unc->add_option("--threshold-sigma", unc_sigma,
                    "Filter cut in standard deviations (default 2)");
    unc->add_option("--block-size", unc_bs, "Block footprint in meters (default 1)");
    unc->add_option("--seed", unc_seed, "Run seed (default 0)");
    unc->add_option("--csv", unc_csv, "Also write per-point values here");
    unc->add_option("--stack", unc_stack, "Also write the raw sample stack here");

    // export ---------------------------------------------------------------
    CLI::App* exp = app.add_subcommand("export", "Per-class quantiles for one point");
    std::string exp_stack, exp_out;
    std::int64_t exp_point = 0;
    exp->add_option("--stack", exp_stack, "Saved sample stack")->required();
    exp->add_option("--point", exp_point, "Point index")->required();
    exp->add_option("--quantiles", exp_out, "Output table path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);  // --help and friends
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "%s\n\n%s", e.what(), app.help().c_str());
        return 2;
    }

    if (threads && run_status(uqc_set_threads(*threads)) != 0) return 1;

    if (app.got_subcommand(synth))
        return run_status(uqc_synth(c_or_null(synth_spec), synth_out.c_str(), synth_seed,
                                    synth_scenes, print_line, nullptr));

    if (app.got_subcommand(train)) {
        std::string opts;
        if (read_config(train_config, opts) != 0) return 1;
        append_if(opts, "epochs", train_epochs);
        append_if(opts, "batch_size", train_batch);
        append_if(opts, "lr", train_lr);
        append_if(opts, "decay_factor", train_decay_factor);
        append_if(opts, "decay_period", train_decay_period);
        append_if(opts, "momentum", train_momentum);
        append_if(opts, "weight_decay", train_wd);
        append_if(opts, "drop_prob", train_drop);
        if (!train_sites.empty()) append(opts, "drop_sites", train_sites);
        append_if(opts, "prior_sigma_w", train_psw);
        append_if(opts, "prior_sigma_b", train_psb);
        append_if(opts, "classes", train_classes);
        append_if(opts, "block_size", train_bs);
        append_if(opts, "checkpoint_period", train_ckpt_period);
        append_if(opts, "seed", train_seed);
        return run_status(uqc_train(train_model.c_str(), train_data.c_str(), opts.c_str(),
                                    train_out.c_str(), print_line, nullptr));
    }

    if (app.got_subcommand(evaluate)) {
        std::string opts;
        if (read_config(eval_config, opts) != 0) return 1;
        append_if(opts, "k", eval_k);
        append_if(opts, "measures", eval_measure);
        append_if(opts, "sigmas", eval_sigma);
        append_if(opts, "block_size", eval_bs);
        append_if(opts, "seed", eval_seed);
        return run_status(uqc_evaluate(eval_ckpt.c_str(), eval_data.c_str(), opts.c_str(),
                                       eval_csv.c_str(), print_line, nullptr));
    }

    if (app.got_subcommand(predict)) {
        std::string opts;
        if (read_config(pred_config, opts) != 0) return 1;
        append_if(opts, "block_size", pred_bs);
        append_if(opts, "seed", pred_seed);
        return run_status(
            uqc_predict(pred_ckpt.c_str(), pred_cloud.c_str(), opts.c_str(), pred_out.c_str()));
    }

    if (app.got_subcommand(unc)) {
        std::string opts;
        if (read_config(unc_config, opts) != 0) return 1;
        append_if(opts, "k", unc_k);
        append_if(opts, "measure", unc_measure);
        append_if(opts, "sigmas", unc_sigma);
        append_if(opts, "block_size", unc_bs);
        append_if(opts, "seed", unc_seed);
        if (!unc_csv.empty()) append(opts, "csv", unc_csv);
        if (!unc_stack.empty()) append(opts, "stack", unc_stack);
        return run_status(
            uqc_uncertainty(unc_ckpt.c_str(), unc_cloud.c_str(), opts.c_str(), unc_out.c_str()));
    }

    if (app.got_subcommand(exp))
        return run_status(uqc_export_quantiles(exp_stack.c_str(), exp_point, exp_out.c_str()));

    return 2;  // unreachable: require_subcommand guarantees one branch above
}
