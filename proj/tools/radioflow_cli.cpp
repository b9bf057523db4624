#include <CLI11.hpp>

#include "radioflow/cli.hpp"

namespace rc = radioflow::cli;
using rc::json;

namespace {

// every option lands in the per-command override object only when the user
// actually passed it, so config-file values are not clobbered by defaults
void add_s(CLI::App* cmd, const std::string& flag, json& ov, const std::string& key,
           const std::string& desc) {
    cmd->add_option_function<std::string>(
        flag, [&ov, key](const std::string& v) { ov[key] = v; }, desc);
}
void add_i(CLI::App* cmd, const std::string& flag, json& ov, const std::string& key,
           const std::string& desc) {
    cmd->add_option_function<long long>(
        flag, [&ov, key](long long v) { ov[key] = v; }, desc);
}
void add_d(CLI::App* cmd, const std::string& flag, json& ov, const std::string& key,
           const std::string& desc) {
    cmd->add_option_function<double>(
        flag, [&ov, key](double v) { ov[key] = v; }, desc);
}
void add_onoff(CLI::App* cmd, const std::string& flag, json& ov, const std::string& key,
               const std::string& desc) {
    cmd->add_option_function<std::string>(
        flag,
        [&ov, key](const std::string& v) {
            if (v != "on" && v != "off") throw CLI::ValidationError(key + " must be on or off");
            ov[key] = (v == "on");
        },
        desc + " (on/off)");
}

void add_common(CLI::App* cmd, json& ov, std::string& config_path) {
    cmd->add_option("--config", config_path, "JSON config file; flags override its values");
    add_s(cmd, "--out", ov, "out", "output directory");
    cmd->add_flag_callback("--force", [&ov] { ov["force"] = true; },
                           "overwrite a non-empty output directory");
    add_i(cmd, "--seed", ov, "seed", "RNG seed");
}

void add_sampling(CLI::App* cmd, json& ov) {
    add_i(cmd, "--steps", ov, "steps", "Euler integration steps");
    add_d(cmd, "--w", ov, "w", "guidance scale");
    add_onoff(cmd, "--use-ema", ov, "use_ema", "sample with the EMA weights");
    add_s(cmd, "--data", ov, "data", "dataset directory");
    add_s(cmd, "--checkpoint", ov, "checkpoint", "model checkpoint (.rfck)");
    add_s(cmd, "--split", ov, "split", "dataset split to read");
}

void add_training(CLI::App* cmd, json& ov) {
    add_s(cmd, "--variant", ov, "variant", "model variant: lite or full");
    add_onoff(cmd, "--sa", ov, "sa", "spatial attention");
    add_onoff(cmd, "--ema", ov, "ema", "EMA shadow tracking");
    add_i(cmd, "--epochs", ov, "epochs", "training epochs");
    add_i(cmd, "--batch", ov, "batch_size", "batch size");
    add_d(cmd, "--lr", ov, "lr", "peak learning rate");
    add_i(cmd, "--warmup", ov, "warmup_steps", "linear warmup steps");
    add_d(cmd, "--ema-decay", ov, "ema_decay", "EMA decay");
    add_d(cmd, "--p-uncond", ov, "p_uncond", "condition dropout probability");
    add_d(cmd, "--weight-decay", ov, "weight_decay", "decoupled weight decay");
    add_d(cmd, "--grad-clip", ov, "grad_clip", "global gradient norm clip (0 disables)");
    add_i(cmd, "--base-channels", ov, "base_channels", "override base channel count");
    add_i(cmd, "--depth", ov, "depth", "override UNet depth");
    add_i(cmd, "--val-interval", ov, "val_interval_epochs", "epochs between validations");
    add_i(cmd, "--save-interval", ov, "save_interval_epochs", "epochs between checkpoint saves");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flow-matching radio map generation"};
    app.require_subcommand(1);

    json ov_gen, ov_train, ov_eval, ov_sample, ov_ablate;
    std::string cfg_gen, cfg_train, cfg_eval, cfg_sample, cfg_ablate;

    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_common(gen, ov_gen, cfg_gen);
    add_s(gen, "--mode", ov_gen, "mode", "srm or drm");
    add_i(gen, "--train", ov_gen, "train", "training samples");
    add_i(gen, "--test", ov_gen, "test", "test samples");
    add_i(gen, "--size", ov_gen, "size", "map side length in cells");
    gen->callback([&] {
        rc::cmd_gen_data(rc::resolve(rc::gen_data_defaults(), cfg_gen, ov_gen));
    });

    CLI::App* tr = app.add_subcommand("train", "train a model on a dataset");
    add_common(tr, ov_train, cfg_train);
    add_s(tr, "--data", ov_train, "data", "dataset directory");
    add_training(tr, ov_train);
    tr->callback([&] {
        rc::cmd_train(rc::resolve(rc::train_defaults(), cfg_train, ov_train));
    });

    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_common(ev, ov_eval, cfg_eval);
    add_sampling(ev, ov_eval);
    add_i(ev, "--grid-rows", ov_eval, "grid_rows", "rows in the comparison grid image");
    ev->callback([&] {
        rc::cmd_eval(rc::resolve(rc::eval_defaults(), cfg_eval, ov_eval));
    });

    CLI::App* sa = app.add_subcommand("sample", "generate maps and report latency");
    add_common(sa, ov_sample, cfg_sample);
    add_sampling(sa, ov_sample);
    add_i(sa, "--n", ov_sample, "n", "number of maps to generate");
    sa->callback([&] {
        json stats =
            rc::cmd_sample(rc::resolve(rc::sample_defaults(), cfg_sample, ov_sample));
        std::printf("samples: %d  latency: %.6f s +/- %.6f s\n", int(stats.at("count")),
                    double(stats.at("mean_latency_s")), double(stats.at("stddev_latency_s")));
    });

    CLI::App* ab = app.add_subcommand("ablate", "run a cfg/steps/modules sweep");
    add_common(ab, ov_ablate, cfg_ablate);
    add_sampling(ab, ov_ablate);
    add_training(ab, ov_ablate);
    add_s(ab, "--sweep", ov_ablate, "sweep", "cfg, steps, or modules");
    ab->callback([&] {
        rc::cmd_ablate(rc::resolve(rc::ablate_defaults(), cfg_ablate, ov_ablate));
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const rc::CliError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
