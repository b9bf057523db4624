#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include <json.hpp>

#include "metrics.hpp"
#include "model.hpp"
#include "plot.hpp"
#include "sample.hpp"
#include "scene.hpp"
#include "train.hpp"

namespace radioflow::cli {

using nlohmann::json;

/// Refusals surface as this type; the binary prints the message on stderr and
/// exits nonzero.
struct CliError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline json merge(json base, const json& over) {
    for (const auto& [k, v] : over.items()) base[k] = v;
    return base;
}

inline json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream f(path);
    if (!f) throw CliError("config file not found: " + path);
    try {
        return json::parse(f);
    } catch (const std::exception& e) {
        throw CliError("config file " + path + " is not valid JSON: " + e.what());
    }
}

/// defaults <- config file <- command-line overrides.
inline json resolve(const json& defaults, const std::string& config_path, const json& overrides) {
    return merge(merge(defaults, load_config(config_path)), overrides);
}

inline void write_manifest(const std::string& out_dir, const json& resolved) {
    std::ofstream f(out_dir + "/run_manifest.json");
    if (!f) throw CliError("cannot write manifest in " + out_dir);
    f << resolved.dump(2) << "\n";
}

inline void prepare_out_dir(const std::string& out, bool force) {
    namespace fs = std::filesystem;
    if (out.empty()) throw CliError("missing output directory (--out)");
    if (fs::exists(out) && !fs::is_empty(out) && !force)
        throw CliError("output directory exists: " + out + " (pass --force to overwrite)");
    fs::create_directories(out);
}

// ---------------------------------------------------------------------------
// gen-data

inline json gen_data_defaults() {
    SceneGenParams p;
    return {{"mode", "srm"},       {"train", 64},
            {"test", 16},          {"size", 32},
            {"seed", 7},           {"force", false},
            {"n_buildings", p.n_buildings},
            {"building_min", p.building_min},
            {"building_max", p.building_max},
            {"vehicles_min", p.vehicles_min},
            {"vehicles_max", p.vehicles_max},
            {"resolution_m", p.resolution_m}};
}

inline void cmd_gen_data(const json& opts) {
    std::string mode_s = opts.at("mode");
    if (mode_s != "srm" && mode_s != "drm") throw CliError("mode must be srm or drm");
    DatasetMode mode = mode_s == "srm" ? DatasetMode::SRM : DatasetMode::DRM;

    std::string out = opts.value("out", "");
    prepare_out_dir(out, opts.value("force", false));

    SceneGenParams p;
    p.size = opts.at("size");
    p.n_buildings = opts.at("n_buildings");
    p.building_min = opts.at("building_min");
    p.building_max = opts.at("building_max");
    p.vehicles_min = opts.at("vehicles_min");
    p.vehicles_max = opts.at("vehicles_max");
    p.resolution_m = opts.at("resolution_m");

    build_dataset(p, opts.at("train"), opts.at("test"), mode, opts.at("seed"), out);
    write_manifest(out, opts);
}

// ---------------------------------------------------------------------------
// train

inline json train_defaults() {
    TrainConfig tc;
    return {{"variant", "lite"},
            {"sa", true},
            {"ema", true},
            {"force", false},
            {"epochs", tc.epochs},
            {"batch_size", tc.batch_size},
            {"lr", tc.lr},
            {"warmup_steps", tc.warmup_steps},
            {"ema_decay", tc.ema_decay},
            {"p_uncond", tc.p_uncond},
            {"weight_decay", tc.weight_decay},
            {"seed", 0},
            {"val_interval_epochs", tc.val_interval_epochs},
            {"save_interval_epochs", tc.save_interval_epochs},
            {"grad_clip", tc.grad_clip},
            {"val_max_samples", tc.val_max_samples}};
}

inline ModelConfig model_config_from(const json& opts, int dataset_cond_channels) {
    std::string variant = opts.at("variant");
    if (variant != "lite" && variant != "full") throw CliError("variant must be lite or full");
    if (opts.contains("cond_channels") &&
        int(opts.at("cond_channels")) != dataset_cond_channels)
        throw CliError("config expects " + opts.at("cond_channels").dump() +
                       " condition channels but the dataset provides " +
                       std::to_string(dataset_cond_channels) +
                       " (srm = 2, drm = 3); regenerate the dataset or fix the config");
    ModelConfig mc = variant == "full" ? ModelConfig::full(dataset_cond_channels)
                                       : ModelConfig::lite(dataset_cond_channels);
    mc.use_spatial_attention = opts.at("sa");
    if (opts.contains("base_channels")) mc.base_channels = opts.at("base_channels");
    if (opts.contains("depth")) mc.depth = opts.at("depth");
    if (opts.contains("time_embed_dim")) mc.time_embed_dim = opts.at("time_embed_dim");
    return mc;
}

inline TrainConfig train_config_from(const json& opts) {
    TrainConfig tc;
    tc.epochs = opts.at("epochs");
    tc.batch_size = opts.at("batch_size");
    tc.lr = opts.at("lr");
    tc.warmup_steps = opts.at("warmup_steps");
    tc.ema_decay = opts.at("ema_decay");
    tc.p_uncond = opts.at("p_uncond");
    tc.weight_decay = opts.at("weight_decay");
    tc.seed = opts.at("seed");
    tc.val_interval_epochs = opts.at("val_interval_epochs");
    tc.save_interval_epochs = opts.at("save_interval_epochs");
    tc.grad_clip = opts.at("grad_clip");
    tc.val_max_samples = opts.at("val_max_samples");
    tc.track_ema = opts.at("ema");
    return tc;
}

inline void cmd_train(const json& opts) {
    std::string data = opts.value("data", "");
    if (data.empty()) throw CliError("missing dataset directory (--data)");
    std::string out = opts.value("out", "");
    prepare_out_dir(out, opts.value("force", false));

    Dataset train_set = load_dataset(data, "train");
    Dataset val_set = load_dataset(data, "test");

    ModelConfig mc = model_config_from(opts, train_set.cond_channels());
    TrainConfig tc = train_config_from(opts);

    TrainResult r = train(train_set, &val_set, mc, tc, out + "/checkpoint.rfck");
    r.log.write_csv(out + "/train_log.csv");

    std::vector<double> losses;
    for (const auto& row : r.log.rows) losses.push_back(row.loss);
    png::write_gray8(out + "/loss_curve.png", plot::line_plot(losses));
    write_manifest(out, opts);
}

// ---------------------------------------------------------------------------
// eval

inline json eval_defaults() {
    return {{"steps", 1},   {"w", 1.5},         {"use_ema", true}, {"seed", 0},
            {"force", false}, {"grid_rows", 8}, {"split", "test"}};
}

/// Displayable version of a condition tensor: buildings plus the transmitter
/// pixel at full intensity (and vehicles at mid gray for DRM).
inline Tensor condition_panel(const Tensor& cond) {
    int H = cond.dim(1), W = cond.dim(2);
    Tensor out({H, W});
    size_t plane = static_cast<size_t>(H) * W;
    for (size_t i = 0; i < plane; ++i) {
        double v = 0.6 * cond.data[i];  // buildings
        if (cond.dim(0) > 2) v = std::max(v, 0.3 * cond.data[2 * plane + i]);  // vehicles
        if (cond.data[plane + i] > 0.0) v = 1.0;  // transmitter
        out.data[i] = v;
    }
    return out;
}

inline void cmd_eval(const json& opts) {
    std::string data = opts.value("data", "");
    std::string ckpt = opts.value("checkpoint", "");
    if (data.empty()) throw CliError("missing dataset directory (--data)");
    if (ckpt.empty()) throw CliError("missing checkpoint path (--checkpoint)");
    std::string out = opts.value("out", "");
    prepare_out_dir(out, opts.value("force", false));

    ModelState state = load_checkpoint(ckpt);
    Dataset test = load_dataset(data, opts.at("split"));
    Dataset train_split = load_dataset(data, "train");

    SampleConfig sc;
    sc.steps = opts.at("steps");
    sc.w = opts.at("w");
    sc.use_ema = opts.at("use_ema");
    sc.seed = opts.at("seed");

    std::vector<Tensor> conds;
    for (const auto& s : test.samples) conds.push_back(s.condition);
    BatchSampleResult bs = batch_sample(state, conds, sc);
    std::vector<Tensor> preds;
    for (auto& o : bs.outputs) preds.push_back(std::move(o.map));

    EvalReport rep = evaluate_maps(preds, test);
    rep.write_csv(out + "/eval.csv");

    // constant mean-of-train-targets predictor, appended for reference
    EvalReport base = evaluate_constant(mean_target(train_split), test);
    {
        std::ofstream f(out + "/eval.csv", std::ios::app);
        f << std::setprecision(15);
        f << "baseline_mean," << base.aggregate.nmse << ',' << base.aggregate.psnr_db << ','
          << base.aggregate.rmse << ',' << base.aggregate.ssim << '\n';
    }

    int rows = std::min(static_cast<int>(opts.at("grid_rows")), static_cast<int>(test.samples.size()));
    std::vector<std::vector<Tensor>> grid;
    for (int i = 0; i < rows; ++i) {
        const auto& s = test.samples[static_cast<size_t>(i)];
        Tensor diff = preds[static_cast<size_t>(i)];
        for (size_t j = 0; j < diff.data.size(); ++j)
            diff.data[j] = std::fabs(diff.data[j] - s.target.data[j]);
        grid.push_back({condition_panel(s.condition), preds[static_cast<size_t>(i)], s.target,
                        std::move(diff)});
    }
    png::write_gray8(out + "/eval_grid.png", plot::image_grid(grid));
    write_manifest(out, opts);
}

// ---------------------------------------------------------------------------
// sample

inline json sample_defaults() {
    return {{"steps", 1}, {"w", 1.5}, {"use_ema", true},
            {"seed", 0},  {"n", 8},   {"force", false},
            {"split", "test"}};
}

inline json cmd_sample(const json& opts) {
    std::string data = opts.value("data", "");
    std::string ckpt = opts.value("checkpoint", "");
    if (data.empty()) throw CliError("missing dataset directory (--data)");
    if (ckpt.empty()) throw CliError("missing checkpoint path (--checkpoint)");
    std::string out = opts.value("out", "");
    prepare_out_dir(out, opts.value("force", false));

    ModelState state = load_checkpoint(ckpt);
    Dataset test = load_dataset(data, opts.at("split"));
    int n = std::min(static_cast<int>(opts.at("n")), static_cast<int>(test.samples.size()));
    if (n < 1) throw CliError("no samples to generate");

    SampleConfig sc;
    sc.steps = opts.at("steps");
    sc.w = opts.at("w");
    sc.use_ema = opts.at("use_ema");
    sc.seed = opts.at("seed");

    std::vector<Tensor> conds;
    for (int i = 0; i < n; ++i) conds.push_back(test.samples[static_cast<size_t>(i)].condition);
    BatchSampleResult bs = batch_sample(state, conds, sc);

    char name[64];
    for (int i = 0; i < n; ++i) {
        DatasetSample s;
        s.condition = conds[static_cast<size_t>(i)];
        s.target = bs.outputs[static_cast<size_t>(i)].map;
        std::snprintf(name, sizeof(name), "/sample_%04d", i);
        write_sample_file(out + name + ".rflw", s);
        png::write_gray8(out + name + ".png", plot::render_map(s.target));
    }

    json stats = {{"count", n},
                  {"mean_latency_s", bs.mean_latency_s},
                  {"stddev_latency_s", bs.std_latency_s}};
    json manifest = opts;
    manifest["latency"] = stats;
    write_manifest(out, manifest);
    return stats;
}

// ---------------------------------------------------------------------------
// ablate

inline json ablate_defaults() {
    json d = merge(train_defaults(), eval_defaults());
    d["sweep"] = "cfg";
    return d;
}

inline const std::vector<double>& cfg_sweep_values() {
    static const std::vector<double> w{0.0, 1.0, 1.5, 2.0, 2.5, 3.0,
                                       3.5, 4.0, 4.5, 5.0, 5.5, 6.0};
    return w;
}

inline const std::vector<int>& steps_sweep_values() {
    static const std::vector<int> s{1, 5, 10, 20, 50};
    return s;
}

inline void cmd_ablate(const json& opts) {
    std::string sweep = opts.at("sweep");
    std::string data = opts.value("data", "");
    if (data.empty()) throw CliError("missing dataset directory (--data)");
    std::string out = opts.value("out", "");
    prepare_out_dir(out, opts.value("force", false));

    Dataset test = load_dataset(data, opts.at("split"));

    auto eval_with = [&](const ModelState& state, const SampleConfig& sc) {
        EvalReport rep = evaluate(state, test, sc);
        return rep.aggregate;
    };

    SampleConfig sc;
    sc.steps = opts.at("steps");
    sc.w = opts.at("w");
    sc.use_ema = opts.at("use_ema");
    sc.seed = opts.at("seed");

    if (sweep == "cfg" || sweep == "steps") {
        std::string ckpt = opts.value("checkpoint", "");
        if (ckpt.empty()) throw CliError("missing checkpoint path (--checkpoint)");
        ModelState state = load_checkpoint(ckpt);

        std::ofstream f(out + "/ablate_" + sweep + ".csv");
        f << std::setprecision(15);
        if (sweep == "cfg") {
            f << "w,nmse,psnr_db,rmse\n";
            for (double w : cfg_sweep_values()) {
                SampleConfig c = sc;
                c.w = w;
                EvalRow r = eval_with(state, c);
                f << w << ',' << r.nmse << ',' << r.psnr_db << ',' << r.rmse << '\n';
            }
        } else {
            f << "steps,nmse,psnr_db,rmse\n";
            for (int steps : steps_sweep_values()) {
                SampleConfig c = sc;
                c.steps = steps;
                EvalRow r = eval_with(state, c);
                f << steps << ',' << r.nmse << ',' << r.psnr_db << ',' << r.rmse << '\n';
            }
        }
    } else if (sweep == "modules") {
        Dataset train_set = load_dataset(data, "train");
        std::ofstream f(out + "/ablate_modules.csv");
        f << std::setprecision(15);
        f << "arm,nmse,psnr_db,rmse\n";
        struct Arm {
            const char* name;
            bool sa, ema;
        };
        for (Arm arm : {Arm{"no_ema", true, false}, Arm{"no_sa", false, true},
                        Arm{"ema_sa", true, true}}) {
            json aopts = opts;
            aopts["sa"] = arm.sa;
            aopts["ema"] = arm.ema;
            ModelConfig mc = model_config_from(aopts, train_set.cond_channels());
            TrainConfig tc = train_config_from(aopts);
            TrainResult r = train(train_set, nullptr, mc, tc);
            SampleConfig c = sc;
            c.use_ema = arm.ema;  // the no-EMA arm evaluates raw weights
            EvalRow row = eval_with(r.state, c);
            f << arm.name << ',' << row.nmse << ',' << row.psnr_db << ',' << row.rmse << '\n';
        }
    } else {
        throw CliError("sweep must be one of cfg, steps, modules");
    }
    write_manifest(out, opts);
}

}  // namespace radioflow::cli
