#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <string>
#include <vector>

#include "flow.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "sample.hpp"
#include "scene.hpp"

namespace radioflow {

struct TrainConfig {
    int epochs = 10;
    int batch_size = 8;
    double lr = 2e-3;
    int warmup_steps = 20;
    double ema_decay = 0.999;
    double p_uncond = 0.1;
    double weight_decay = 1e-4;
    uint64_t seed = 0;
    int val_interval_epochs = 1;   // 0 disables validation
    int save_interval_epochs = 1;  // 0 saves only at the end
    double grad_clip = 1.0;        // global norm; 0 disables
    int val_max_samples = 16;
    bool track_ema = true;  // when off the shadow mirrors the raw weights

    void validate() const {
        if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (lr <= 0.0) throw std::invalid_argument("TrainConfig: lr must be > 0");
        if (warmup_steps < 0) throw std::invalid_argument("TrainConfig: warmup_steps must be >= 0");
        if (ema_decay <= 0.0 || ema_decay >= 1.0)
            throw std::invalid_argument("TrainConfig: ema_decay must be in (0,1)");
        if (p_uncond < 0.0 || p_uncond >= 1.0)
            throw std::invalid_argument("TrainConfig: p_uncond must be in [0,1)");
        if (weight_decay < 0.0) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
        if (grad_clip < 0.0) throw std::invalid_argument("TrainConfig: grad_clip must be >= 0");
    }
};

struct TrainLogRow {
    long long step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double val_nmse = std::numeric_limits<double>::quiet_NaN();  // NaN = not validated
};

struct TrainLog {
    std::vector<TrainLogRow> rows;

    void write_csv(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw std::runtime_error("TrainLog: cannot open " + path);
        f << std::setprecision(15);
        f << "step,loss,lr,val_nmse\n";
        for (const auto& r : rows) {
            f << r.step << ',' << r.loss << ',' << r.lr << ',';
            if (!std::isnan(r.val_nmse)) f << r.val_nmse;
            f << '\n';
        }
    }
};

/// Linear ramp 0 -> lr over the warmup steps, then cosine annealing to 0 at
/// `total_steps`.
inline double lr_schedule(long long step, long long total_steps, const TrainConfig& cfg) {
    if (step < 0) throw std::invalid_argument("lr_schedule: step must be >= 0");
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
        return cfg.lr * static_cast<double>(step) / cfg.warmup_steps;
    long long denom = std::max<long long>(1, total_steps - cfg.warmup_steps);
    double progress = static_cast<double>(std::min(step, total_steps) - cfg.warmup_steps) /
                      static_cast<double>(denom);
    return cfg.lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

/// With probability p_uncond replaces the condition by the all-zeros null
/// condition of the same shape.
inline Tensor cfg_dropout(const Tensor& c, double p_uncond, Rng& rng) {
    if (p_uncond < 0.0 || p_uncond >= 1.0)
        throw std::invalid_argument("cfg_dropout: p_uncond must be in [0,1)");
    if (p_uncond > 0.0 && rng.uniform() < p_uncond) return Tensor(c.shape);
    return c;
}

/// M_EMA <- gamma M_EMA + (1 - gamma) M, elementwise.
inline void ema_update(ModelState& s, double gamma) {
    if (s.ema.size() != s.params.size())
        throw std::runtime_error("ema_update: checkpoint corruption, parameter group mismatch");
    for (size_t i = 0; i < s.params.size(); ++i) {
        Tensor& e = s.ema[i].second;
        const Tensor& p = s.params[i].second;
        if (!e.same_shape(p))
            throw std::runtime_error("ema_update: checkpoint corruption, shape mismatch at " +
                                     s.params[i].first);
        for (size_t j = 0; j < e.data.size(); ++j)
            e.data[j] = gamma * e.data[j] + (1.0 - gamma) * p.data[j];
    }
}

/// Scales all gradients in place so their joint norm is at most max_norm.
/// Returns the pre-clip norm.
inline double clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& g : grads) sq += tensor_sq_norm(g);
    double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        double k = max_norm / norm;
        for (auto& g : grads)
            for (auto& v : g.data) v *= k;
    }
    return norm;
}

struct AdamState {
    long long t = 0;
    std::vector<Tensor> m, v;
};

/// One adaptive-moment step with decoupled weight decay
/// (beta1 0.9, beta2 0.999, eps 1e-8, bias correction).
inline void optimizer_step(std::vector<std::pair<std::string, Tensor>>& params,
                           const std::vector<Tensor>& grads, double lr, double weight_decay,
                           AdamState& st) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    if (grads.size() != params.size())
        throw std::invalid_argument("optimizer_step: gradient count mismatch");
    if (st.m.empty()) {
        for (const auto& [name, p] : params) {
            st.m.emplace_back(p.shape);
            st.v.emplace_back(p.shape);
        }
    }
    for (size_t i = 0; i < grads.size(); ++i)
        if (!grads[i].all_finite())
            throw std::runtime_error("optimizer_step: non-finite gradient for " + params[i].first);

    ++st.t;
    double c1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
    double c2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i].second;
        for (size_t j = 0; j < p.data.size(); ++j) {
            double g = grads[i].data[j];
            double& m = st.m[i].data[j];
            double& v = st.v[i].data[j];
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            p.data[j] -= lr * (m / c1) / (std::sqrt(v / c2) + eps) + lr * weight_decay * p.data[j];
        }
    }
}

struct TrainResult {
    ModelState state;
    TrainLog log;
};

namespace detail {

/// Mean NMSE of the EMA model with 1-step sampling at w = 1.5.
inline double validation_nmse(const ModelState& s, const Dataset& val, const TrainConfig& tc) {
    SampleConfig sc;
    sc.steps = 1;
    sc.w = 1.5;
    sc.use_ema = true;
    size_t n = std::min(val.samples.size(), static_cast<size_t>(tc.val_max_samples));
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        sc.seed = Rng::derive(Rng::derive(tc.seed, 0x5A1D), i);
        SampleResult r = euler_integrate(s, val.samples[i].condition, sc);
        total += nmse(r.map, val.samples[i].target);
    }
    return total / static_cast<double>(n);
}

}  // namespace detail

/// Full optimization loop: per step sample t, build the interpolant and target
/// field, apply condition dropout, forward, squared-error flow loss, backward,
/// clipped optimizer step, EMA update. Deterministic for a fixed seed.
inline TrainResult train(const Dataset& train_set, const Dataset* val_set, const ModelConfig& mc,
                         const TrainConfig& tc, const std::string& checkpoint_path = "") {
    tc.validate();
    mc.validate();
    if (train_set.samples.empty()) throw std::invalid_argument("train: empty dataset");
    if (mc.cond_channels != train_set.cond_channels())
        throw std::invalid_argument("train: model/dataset condition channel mismatch");

    TrainResult out;
    out.state = init_model(mc, tc.seed);
    AdamState opt;

    Rng order_rng(Rng::derive(tc.seed, 1));
    Rng noise_rng(Rng::derive(tc.seed, 2));
    Rng drop_rng(Rng::derive(tc.seed, 3));

    int n = static_cast<int>(train_set.samples.size());
    int H = train_set.samples[0].target.dim(0);
    int W = train_set.samples[0].target.dim(1);
    int C = train_set.cond_channels();
    long long steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
    long long total_steps = static_cast<long long>(tc.epochs) * steps_per_epoch;

    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    long long step = 0;

    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        for (int i = n - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[static_cast<size_t>(order_rng.uniform_int(0, i))]);

        for (long long b = 0; b < steps_per_epoch; ++b) {
            int lo = static_cast<int>(b) * tc.batch_size;
            int B = std::min(tc.batch_size, n - lo);

            Tensor x_t({B, 1, H, W}), u({B, 1, H, W}), cond({B, C, H, W});
            std::vector<double> ts(static_cast<size_t>(B));
            for (int k = 0; k < B; ++k) {
                const DatasetSample& s = train_set.samples[static_cast<size_t>(
                    order[static_cast<size_t>(lo + k)])];
                double t = noise_rng.uniform();
                ts[static_cast<size_t>(k)] = t;
                Tensor c = cfg_dropout(s.condition, tc.p_uncond, drop_rng);
                size_t plane = static_cast<size_t>(H) * W;
                for (size_t j = 0; j < plane; ++j) {
                    double x0 = noise_rng.gaussian();
                    double x1 = s.target.data[j];
                    x_t.data[static_cast<size_t>(k) * plane + j] = (1.0 - t) * x0 + t * x1;
                    u.data[static_cast<size_t>(k) * plane + j] = x1 - x0;
                }
                std::copy(c.data.begin(), c.data.end(),
                          cond.data.begin() + static_cast<long>(static_cast<size_t>(k) * plane * C));
            }

            Tape tape;
            ModelForward fw(tape, out.state, false, true);
            int v = fw.run(x_t, ts, cond);
            int diff = tape.sub(v, tape.leaf(u));
            int loss = tape.mean(tape.mul(diff, diff));
            double loss_val = tape.value(loss).data[0];
            if (!std::isfinite(loss_val))
                throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));

            auto all_grads = tape.backward(loss);
            auto ids = fw.param_node_ids(out.state.params);
            std::vector<Tensor> grads;
            for (int id : ids) grads.push_back(std::move(all_grads[static_cast<size_t>(id)]));
            clip_global_norm(grads, tc.grad_clip);

            double lr = lr_schedule(step + 1, total_steps, tc);
            optimizer_step(out.state.params, grads, lr, tc.weight_decay, opt);
            ema_update(out.state, tc.track_ema ? tc.ema_decay : 0.0);

            out.log.rows.push_back({step, loss_val, lr,
                                    std::numeric_limits<double>::quiet_NaN()});
            ++step;
        }

        if (val_set && !val_set->samples.empty() && tc.val_interval_epochs > 0 &&
            (epoch + 1) % tc.val_interval_epochs == 0)
            out.log.rows.back().val_nmse = detail::validation_nmse(out.state, *val_set, tc);

        if (!checkpoint_path.empty() && tc.save_interval_epochs > 0 &&
            (epoch + 1) % tc.save_interval_epochs == 0)
            save_checkpoint(checkpoint_path, out.state);
    }
    if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path, out.state);
    return out;
}

}  // namespace radioflow
