#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "sample.hpp"
#include "scene.hpp"
#include "tensor.hpp"

namespace radioflow {

/// ||pred - target||^2 / ||target||^2, summed over all pixels.
inline double nmse(const Tensor& pred, const Tensor& target) {
    if (!pred.same_shape(target)) throw std::invalid_argument("nmse: shape mismatch");
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        double d = pred.data[i] - target.data[i];
        num += d * d;
        den += target.data[i] * target.data[i];
    }
    if (den == 0.0) throw std::domain_error("nmse: all-zero target");
    return num / den;
}

inline double rmse(const Tensor& pred, const Tensor& target) {
    if (!pred.same_shape(target)) throw std::invalid_argument("rmse: shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        double d = pred.data[i] - target.data[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(pred.data.size()));
}

constexpr double kPsnrCapDb = 99.0;

/// 10 log10(peak^2 / mse), capped at 99 dB for zero error.
inline double psnr(const Tensor& pred, const Tensor& target, double peak = 1.0) {
    double r = rmse(pred, target);
    if (r == 0.0) return kPsnrCapDb;
    return std::min(kPsnrCapDb, 20.0 * std::log10(peak / r));
}

namespace detail {

inline std::vector<double> gaussian_window_1d(int size, double sigma) {
    std::vector<double> w(static_cast<size_t>(size));
    double sum = 0.0;
    int half = size / 2;
    for (int i = 0; i < size; ++i) {
        double d = i - half;
        w[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += w[static_cast<size_t>(i)];
    }
    for (auto& v : w) v /= sum;
    return w;
}

/// Mirror index without repeating the edge sample: -1 -> 1, n -> n-2.
inline int reflect_index(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
    }
    return i;
}

/// Separable Gaussian filter with reflection padding; input/output [H,W].
inline Tensor gaussian_filter(const Tensor& img, const std::vector<double>& win) {
    int H = img.dim(0), W = img.dim(1);
    int half = static_cast<int>(win.size()) / 2;
    Tensor tmp({H, W}), out({H, W});
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            double s = 0.0;
            for (int k = -half; k <= half; ++k)
                s += win[static_cast<size_t>(k + half)] *
                     img.at(r, reflect_index(c + k, W));
            tmp.at(r, c) = s;
        }
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            double s = 0.0;
            for (int k = -half; k <= half; ++k)
                s += win[static_cast<size_t>(k + half)] *
                     tmp.at(reflect_index(r + k, H), c);
            out.at(r, c) = s;
        }
    return out;
}

}  // namespace detail

/// Mean SSIM with the standard 11x11 Gaussian window (sigma 1.5), K1=0.01,
/// K2=0.03, dynamic range L=1.
inline double ssim(const Tensor& pred, const Tensor& target) {
    if (!pred.same_shape(target)) throw std::invalid_argument("ssim: shape mismatch");
    if (pred.ndim() != 2) throw std::invalid_argument("ssim: expects [H,W]");
    int H = pred.dim(0), W = pred.dim(1);
    if (H < 11 || W < 11) throw std::domain_error("ssim: image smaller than the 11x11 window");

    const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    auto win = detail::gaussian_window_1d(11, 1.5);

    Tensor xx({H, W}), yy({H, W}), xy({H, W});
    for (size_t i = 0; i < pred.data.size(); ++i) {
        xx.data[i] = pred.data[i] * pred.data[i];
        yy.data[i] = target.data[i] * target.data[i];
        xy.data[i] = pred.data[i] * target.data[i];
    }
    Tensor mu1 = detail::gaussian_filter(pred, win);
    Tensor mu2 = detail::gaussian_filter(target, win);
    Tensor s11 = detail::gaussian_filter(xx, win);
    Tensor s22 = detail::gaussian_filter(yy, win);
    Tensor s12 = detail::gaussian_filter(xy, win);

    double total = 0.0;
    for (size_t i = 0; i < mu1.data.size(); ++i) {
        double m1 = mu1.data[i], m2 = mu2.data[i];
        double v1 = s11.data[i] - m1 * m1;
        double v2 = s22.data[i] - m2 * m2;
        double cov = s12.data[i] - m1 * m2;
        total += ((2.0 * m1 * m2 + C1) * (2.0 * cov + C2)) /
                 ((m1 * m1 + m2 * m2 + C1) * (v1 + v2 + C2));
    }
    return total / static_cast<double>(mu1.data.size());
}

struct EvalRow {
    std::string sample_id;
    double nmse = 0.0, psnr_db = 0.0, rmse = 0.0, ssim = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    EvalRow aggregate;

    void write_csv(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw std::runtime_error("EvalReport: cannot open " + path);
        f << std::setprecision(15);
        f << "sample_id,nmse,psnr_db,rmse,ssim\n";
        auto line = [&](const EvalRow& r) {
            f << r.sample_id << ',' << r.nmse << ',' << r.psnr_db << ',' << r.rmse << ','
              << r.ssim << '\n';
        };
        for (const auto& r : rows) line(r);
        line(aggregate);
    }
};

/// Metrics for a list of already-produced predictions, in dataset order.
inline EvalReport evaluate_maps(const std::vector<Tensor>& preds, const Dataset& test) {
    if (preds.size() != test.samples.size())
        throw std::invalid_argument("evaluate_maps: prediction count mismatch");
    EvalReport rep;
    for (size_t i = 0; i < preds.size(); ++i) {
        const Tensor& tgt = test.samples[i].target;
        EvalRow r;
        r.sample_id = std::to_string(i);
        r.nmse = nmse(preds[i], tgt);
        r.psnr_db = psnr(preds[i], tgt);
        r.rmse = rmse(preds[i], tgt);
        r.ssim = ssim(preds[i], tgt);
        rep.rows.push_back(r);
    }
    double n = static_cast<double>(rep.rows.size());
    rep.aggregate.sample_id = "aggregate";
    for (const auto& r : rep.rows) {
        rep.aggregate.nmse += r.nmse / n;
        rep.aggregate.psnr_db += r.psnr_db / n;
        rep.aggregate.rmse += r.rmse / n;
        rep.aggregate.ssim += r.ssim / n;
    }
    return rep;
}

/// Samples every test scene with the model and scores it.
inline EvalReport evaluate(const ModelState& state, const Dataset& test,
                           const SampleConfig& cfg) {
    if (test.samples.empty()) throw std::invalid_argument("evaluate: empty test set");
    std::vector<Tensor> conds;
    for (const auto& s : test.samples) conds.push_back(s.condition);
    BatchSampleResult bs = batch_sample(state, conds, cfg);
    std::vector<Tensor> preds;
    for (auto& o : bs.outputs) preds.push_back(std::move(o.map));
    return evaluate_maps(preds, test);
}

/// Constant-predictor baseline: every prediction is the same map (typically
/// the train-split mean).
inline EvalReport evaluate_constant(const Tensor& map, const Dataset& test) {
    std::vector<Tensor> preds(test.samples.size(), map);
    return evaluate_maps(preds, test);
}

/// Pixelwise mean of the targets of a dataset split.
inline Tensor mean_target(const Dataset& d) {
    if (d.samples.empty()) throw std::invalid_argument("mean_target: empty dataset");
    Tensor m(d.samples[0].target.shape);
    for (const auto& s : d.samples)
        for (size_t i = 0; i < m.data.size(); ++i) m.data[i] += s.target.data[i];
    for (auto& v : m.data) v /= static_cast<double>(d.samples.size());
    return m;
}

}  // namespace radioflow
