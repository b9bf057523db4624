#pragma once

// Independent from-definition SSIM reference: explicit 2-D 11x11 Gaussian
// window and direct convolution, no shared code with the library version.

#include <cmath>
#include <vector>

#include "radioflow/tensor.hpp"

namespace ssim_ref {

inline int mirror(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
    }
    return i;
}

inline radioflow::Tensor blur2d(const radioflow::Tensor& img) {
    int H = img.dim(0), W = img.dim(1);
    double win[11][11];
    double total = 0.0;
    for (int r = 0; r < 11; ++r)
        for (int c = 0; c < 11; ++c) {
            double dr = r - 5, dc = c - 5;
            win[r][c] = std::exp(-(dr * dr + dc * dc) / (2.0 * 1.5 * 1.5));
            total += win[r][c];
        }
    radioflow::Tensor out({H, W});
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            double s = 0.0;
            for (int kr = -5; kr <= 5; ++kr)
                for (int kc = -5; kc <= 5; ++kc)
                    s += win[kr + 5][kc + 5] * img.at(mirror(r + kr, H), mirror(c + kc, W));
            out.at(r, c) = s / total;
        }
    return out;
}

inline double ssim(const radioflow::Tensor& a, const radioflow::Tensor& b) {
    int H = a.dim(0), W = a.dim(1);
    radioflow::Tensor aa({H, W}), bb({H, W}), ab({H, W});
    for (size_t i = 0; i < a.data.size(); ++i) {
        aa.data[i] = a.data[i] * a.data[i];
        bb.data[i] = b.data[i] * b.data[i];
        ab.data[i] = a.data[i] * b.data[i];
    }
    radioflow::Tensor mu_a = blur2d(a), mu_b = blur2d(b);
    radioflow::Tensor m_aa = blur2d(aa), m_bb = blur2d(bb), m_ab = blur2d(ab);
    const double c1 = 1e-4, c2 = 9e-4;
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double ma = mu_a.data[i], mb = mu_b.data[i];
        double va = m_aa.data[i] - ma * ma;
        double vb = m_bb.data[i] - mb * mb;
        double cov = m_ab.data[i] - ma * mb;
        acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    return acc / static_cast<double>(a.data.size());
}

}  // namespace ssim_ref
