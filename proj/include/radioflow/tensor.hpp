#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace radioflow {

/// Dense row-major tensor of 64-bit floats. Shapes are explicit; no
/// implicit broadcasting beyond what individual ops document.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, double fill = 0.0)
        : shape(std::move(s)), data(static_cast<size_t>(numel_of(shape)), fill) {}
    Tensor(std::vector<int> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (numel_of(shape) != static_cast<long long>(data.size()))
            throw std::invalid_argument("Tensor: shape/data size mismatch");
    }

    static long long numel_of(const std::vector<int>& s) {
        long long n = 1;
        for (int d : s) n *= d;
        return n;
    }
    long long numel() const { return static_cast<long long>(data.size()); }

    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    // 4-D indexing [B,C,H,W]
    double& at(int b, int c, int h, int w) {
        return data[static_cast<size_t>(((b * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    double at(int b, int c, int h, int w) const {
        return data[static_cast<size_t>(((b * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    // 2-D indexing [R,C]
    double& at(int r, int c) { return data[static_cast<size_t>(r * shape[1] + c)]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r * shape[1] + c)]; }

    double& operator[](size_t i) { return data[i]; }
    double operator[](size_t i) const { return data[i]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    static std::string shape_str(const std::vector<int>& s) {
        std::string r = "[";
        for (size_t i = 0; i < s.size(); ++i) {
            if (i) r += ",";
            r += std::to_string(s[i]);
        }
        return r + "]";
    }
};

inline double tensor_dot(const Tensor& a, const Tensor& b) {
    assert(a.data.size() == b.data.size());
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

inline double tensor_sq_norm(const Tensor& a) { return tensor_dot(a, a); }

}  // namespace radioflow
