#pragma once

#include <functional>

#include "rng.hpp"
#include "tensor.hpp"

namespace radioflow {

/// Noise schedule along the interpolation path. The default sigma == 0 gives
/// deterministic straight-line paths.
struct PathSchedule {
    std::function<double(double)> sigma_fn = [](double) { return 0.0; };

    static PathSchedule deterministic() { return {}; }
    static PathSchedule constant(double sigma) {
        PathSchedule s;
        s.sigma_fn = [sigma](double) { return sigma; };
        return s;
    }
    double sigma(double t) const {
        double s = sigma_fn(t);
        if (s < 0.0) throw std::invalid_argument("PathSchedule: sigma must be >= 0");
        return s;
    }
};

/// One training tuple along the interpolation path.
struct FlowSample {
    Tensor x0, x1;
    double t = 0.0;
    double sigma_t = 0.0;
    Tensor eps;
    Tensor x_t;
    Tensor u_t;
    Tensor condition;
};

/// x_t = (1-t) x0 + t x1 + sigma_t eps.
inline Tensor interpolate(const Tensor& x0, const Tensor& x1, double t,
                          const PathSchedule& schedule, const Tensor& eps) {
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("interpolate: t must be in [0,1]");
    if (!x0.same_shape(x1) || !x0.same_shape(eps))
        throw std::invalid_argument("interpolate: shape mismatch");
    double s = schedule.sigma(t);
    Tensor out = x0;
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = (1.0 - t) * x0.data[i] + t * x1.data[i] + s * eps.data[i];
    return out;
}

/// Conditional vector field of the straight path; independent of t.
inline Tensor target_field(const Tensor& x0, const Tensor& x1) {
    if (!x0.same_shape(x1)) throw std::invalid_argument("target_field: shape mismatch");
    Tensor out = x1;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= x0.data[i];
    return out;
}

/// Score of the conditional Gaussian path density at x.
inline Tensor conditional_score(const Tensor& x, const Tensor& x0, const Tensor& x1, double t,
                                double sigma_t) {
    if (sigma_t <= 0.0)
        throw std::domain_error("conditional_score: undefined in the deterministic limit");
    Tensor out = x;
    for (size_t i = 0; i < out.data.size(); ++i) {
        double path = (1.0 - t) * x0.data[i] + t * x1.data[i];
        out.data[i] = -(x.data[i] - path) / (sigma_t * sigma_t);
    }
    return out;
}

inline FlowSample make_flow_sample(Tensor x0, Tensor x1, double t, const PathSchedule& schedule,
                                   Tensor eps, Tensor condition) {
    FlowSample s;
    s.sigma_t = schedule.sigma(t);
    s.x_t = interpolate(x0, x1, t, schedule, eps);
    s.u_t = target_field(x0, x1);
    s.x0 = std::move(x0);
    s.x1 = std::move(x1);
    s.t = t;
    s.eps = std::move(eps);
    s.condition = std::move(condition);
    return s;
}

/// Mean over the batch and over all elements of the squared error between
/// the model field and the conditional target field. `model` is any callable
/// (t, x_t, condition) -> Tensor.
template <typename Model>
double cfm_loss(Model&& model, const std::vector<FlowSample>& batch,
                const std::vector<Tensor>& cond_after_dropout) {
    if (batch.empty()) throw std::invalid_argument("cfm_loss: empty batch");
    double total = 0.0;
    long long count = 0;
    for (size_t i = 0; i < batch.size(); ++i) {
        const Tensor& cond = cond_after_dropout.empty() ? batch[i].condition
                                                        : cond_after_dropout[i];
        Tensor v = model(batch[i].t, batch[i].x_t, cond);
        if (!v.same_shape(batch[i].u_t))
            throw std::invalid_argument("cfm_loss: model output shape mismatch");
        for (size_t j = 0; j < v.data.size(); ++j) {
            double d = v.data[j] - batch[i].u_t.data[j];
            total += d * d;
        }
        count += v.numel();
    }
    return total / static_cast<double>(count);
}

namespace detail {

/// Shared MC core: `draw` yields one (x0, x1) pair per call. Density weights
/// are handled in log space with max-subtraction.
template <typename Draw>
Tensor marginal_field_mc_impl(Draw&& draw, const Tensor& x, double t,
                              const PathSchedule& schedule, int n_samples) {
    double sigma = schedule.sigma(t);
    if (sigma <= 0.0)
        throw std::invalid_argument("marginal_field_mc: requires sigma_t > 0");

    std::vector<double> logw(static_cast<size_t>(n_samples));
    std::vector<Tensor> fields(static_cast<size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i) {
        auto [x0, x1] = draw();
        double sq = 0.0;
        for (size_t j = 0; j < x.data.size(); ++j) {
            double path = (1.0 - t) * x0.data[j] + t * x1.data[j];
            double d = x.data[j] - path;
            sq += d * d;
        }
        logw[static_cast<size_t>(i)] = -sq / (2.0 * sigma * sigma);
        fields[static_cast<size_t>(i)] = target_field(x0, x1);
    }
    double mx = *std::max_element(logw.begin(), logw.end());
    Tensor num(x.shape);
    double den = 0.0;
    for (int i = 0; i < n_samples; ++i) {
        double w = std::exp(logw[static_cast<size_t>(i)] - mx);
        den += w;
        for (size_t j = 0; j < num.data.size(); ++j)
            num.data[j] += w * fields[static_cast<size_t>(i)].data[j];
    }
    if (den == 0.0) throw std::runtime_error("marginal_field_mc: all weights underflowed");
    for (auto& v : num.data) v /= den;
    return num;
}

}  // namespace detail

/// Monte-Carlo marginal vector field over an explicit list of (x0, x1)
/// endpoint pairs sampled uniformly. Test/diagnostic use only.
inline Tensor marginal_field_mc(const std::vector<std::pair<Tensor, Tensor>>& dataset_pairs,
                                const Tensor& x, double t, const PathSchedule& schedule,
                                int n_samples, Rng& rng) {
    if (dataset_pairs.empty()) throw std::invalid_argument("marginal_field_mc: empty dataset");
    return detail::marginal_field_mc_impl(
        [&]() {
            return dataset_pairs[static_cast<size_t>(
                rng.uniform_int(0, static_cast<int>(dataset_pairs.size()) - 1))];
        },
        x, t, schedule, n_samples);
}

/// Variant matching the marginal definition directly: x0 is drawn fresh from
/// a standard Gaussian, x1 uniformly from the dataset.
inline Tensor marginal_field_mc_gaussian_x0(const std::vector<Tensor>& dataset_x1, const Tensor& x,
                                            double t, const PathSchedule& schedule, int n_samples,
                                            Rng& rng) {
    if (dataset_x1.empty()) throw std::invalid_argument("marginal_field_mc: empty dataset");
    return detail::marginal_field_mc_impl(
        [&]() {
            return std::pair{rng.gaussian_tensor(x.shape),
                             dataset_x1[static_cast<size_t>(rng.uniform_int(
                                 0, static_cast<int>(dataset_x1.size()) - 1))]};
        },
        x, t, schedule, n_samples);
}

/// MC estimate of the integral over t of E ||v(x_t, t)||^2 along path
/// samples (squared norm summed over elements). Diagnostic only.
template <typename Field>
double kinetic_energy(Field&& field, const std::vector<std::pair<Tensor, Tensor>>& pairs,
                      const PathSchedule& schedule, int n_time_samples, Rng& rng) {
    if (pairs.empty() || n_time_samples < 1) return 0.0;
    double total = 0.0;
    for (int i = 0; i < n_time_samples; ++i) {
        const auto& [x0, x1] =
            pairs[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pairs.size()) - 1))];
        double t = rng.uniform();
        Tensor eps = rng.gaussian_tensor(x0.shape);
        Tensor x_t = interpolate(x0, x1, t, schedule, eps);
        Tensor v = field(t, x_t);
        total += tensor_sq_norm(v);
    }
    return total / static_cast<double>(n_time_samples);
}

/// Finite-difference residual of the continuity equation
/// dp/dt + d(v p)/dx on a 1-D grid, for a closed-form density p(x,t).
template <typename Density, typename Field>
std::vector<double> continuity_residual(Density&& density, Field&& field,
                                        const std::vector<double>& grid, double t, double h,
                                        double dt) {
    std::vector<double> res(grid.size());
    for (size_t i = 0; i < grid.size(); ++i) {
        double x = grid[i];
        double dpdt = (density(x, t + dt) - density(x, t - dt)) / (2.0 * dt);
        double flux_r = field(x + h, t) * density(x + h, t);
        double flux_l = field(x - h, t) * density(x - h, t);
        res[i] = dpdt + (flux_r - flux_l) / (2.0 * h);
    }
    return res;
}

inline double l2_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace radioflow
