#pragma once

#include <chrono>
#include <cmath>
#include <cstring>

#include "model.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace radioflow {

struct SampleConfig {
    int steps = 1;
    double w = 1.5;
    bool use_ema = true;
    uint64_t seed = 0;

    void validate() const {
        if (steps < 1) throw std::invalid_argument("SampleConfig: steps must be >= 1");
        if (w < 0.0) throw std::invalid_argument("SampleConfig: guidance w must be >= 0");
    }
};

/// v_guided = (1 + w) v_cond - w v_uncond.
inline Tensor guided_field(const Tensor& v_cond, const Tensor& v_uncond, double w) {
    if (!v_cond.same_shape(v_uncond)) throw std::invalid_argument("guided_field: shape mismatch");
    Tensor out = v_cond;
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = (1.0 + w) * v_cond.data[i] - w * v_uncond.data[i];
    return out;
}

struct SampleResult {
    Tensor map;  // [H,W], clamped to [0,1]
    Tensor raw;  // [H,W], unclamped integrator output
};

/// Explicit Euler from x0 at t=0 to t=1 with the field evaluated at the left
/// endpoint of each substep. `field` is any callable (t, x) -> Tensor with
/// guidance already folded in.
template <typename Field>
SampleResult integrate(Field&& field, const Tensor& x0, int steps) {
    if (steps < 1) throw std::invalid_argument("integrate: steps must be >= 1");
    Tensor x = x0;
    double dt = 1.0 / steps;
    for (int k = 0; k < steps; ++k) {
        Tensor v = field(k * dt, x);
        if (!v.same_shape(x)) throw std::invalid_argument("integrate: field shape mismatch");
        for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += dt * v.data[i];
        if (!x.all_finite())
            throw std::runtime_error("integrate: non-finite state at step " + std::to_string(k));
    }
    SampleResult r;
    r.raw = x;
    for (auto& v : x.data) v = std::clamp(v, 0.0, 1.0);
    r.map = std::move(x);
    return r;
}

/// Generates one map estimate for condition `cond` ([C,H,W]). The seed fixes
/// the Gaussian initial state; when w > 0 each step evaluates the model twice
/// (conditional and null-condition).
inline SampleResult euler_integrate(const ModelState& state, const Tensor& cond,
                                    const SampleConfig& cfg) {
    cfg.validate();
    if (cond.ndim() != 3) throw std::invalid_argument("euler_integrate: cond must be [C,H,W]");
    int C = cond.dim(0), H = cond.dim(1), W = cond.dim(2);

    Tensor cond_b({1, C, H, W});
    cond_b.data = cond.data;
    Tensor null_b({1, C, H, W});

    Rng rng(cfg.seed);
    Tensor x0({1, 1, H, W});
    for (auto& v : x0.data) v = rng.gaussian();

    auto field = [&](double t, const Tensor& x) {
        Tensor v_cond = model_forward(state, x, {t}, cond_b, cfg.use_ema);
        if (cfg.w == 0.0) return v_cond;
        Tensor v_uncond = model_forward(state, x, {t}, null_b, cfg.use_ema);
        return guided_field(v_cond, v_uncond, cfg.w);
    };
    SampleResult r4 = integrate(field, x0, cfg.steps);

    SampleResult r;
    r.map = Tensor({H, W});
    r.raw = Tensor({H, W});
    r.map.data = std::move(r4.map.data);
    r.raw.data = std::move(r4.raw.data);
    return r;
}

struct BatchSampleResult {
    std::vector<SampleResult> outputs;
    std::vector<double> latencies_s;
    double mean_latency_s = 0.0;
    double std_latency_s = 0.0;
};

namespace detail {

/// FNV-1a over the condition bytes; keys the per-scene noise stream to the
/// scene content so reordering the list reorders the outputs identically.
inline uint64_t content_hash(const Tensor& t) {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&](uint64_t v) {
        for (int b = 0; b < 8; ++b) {
            h ^= (v >> (8 * b)) & 0xff;
            h *= 1099511628211ull;
        }
    };
    for (int d : t.shape) mix(static_cast<uint64_t>(d));
    for (double v : t.data) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        mix(bits);
    }
    return h;
}

}  // namespace detail

/// Samples one map per condition; per-scene seeds are derived from the config
/// seed and the scene content.
inline BatchSampleResult batch_sample(const ModelState& state, const std::vector<Tensor>& conds,
                                      const SampleConfig& cfg) {
    if (conds.empty()) throw std::invalid_argument("batch_sample: empty condition list");
    BatchSampleResult out;
    for (size_t i = 0; i < conds.size(); ++i) {
        SampleConfig per = cfg;
        per.seed = Rng::derive(cfg.seed, detail::content_hash(conds[i]));
        auto start = std::chrono::steady_clock::now();
        out.outputs.push_back(euler_integrate(state, conds[i], per));
        std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
        out.latencies_s.push_back(dt.count());
    }
    double n = static_cast<double>(out.latencies_s.size());
    for (double t : out.latencies_s) out.mean_latency_s += t;
    out.mean_latency_s /= n;
    for (double t : out.latencies_s) {
        double d = t - out.mean_latency_s;
        out.std_latency_s += d * d;
    }
    out.std_latency_s = std::sqrt(out.std_latency_s / n);
    return out;
}

}  // namespace radioflow
