#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "png.hpp"
#include "tensor.hpp"

namespace radioflow::plot {

/// White canvas with dark drawing primitives; exported as grayscale PNG.
struct Canvas {
    int H, W;
    std::vector<uint8_t> px;

    Canvas(int h, int w) : H(h), W(w), px(static_cast<size_t>(h) * w, 255) {}

    void set(int r, int c, uint8_t v) {
        if (r >= 0 && r < H && c >= 0 && c < W)
            px[static_cast<size_t>(r) * W + c] = v;
    }

    void line(int r0, int c0, int r1, int c1, uint8_t v) {
        int dr = std::abs(r1 - r0), dc = std::abs(c1 - c0);
        int sr = r0 < r1 ? 1 : -1, sc = c0 < c1 ? 1 : -1;
        int err = (dc > dr ? dc : -dr) / 2;
        while (true) {
            set(r0, c0, v);
            if (r0 == r1 && c0 == c1) break;
            int e = err;
            if (e > -dc) {
                err -= dr;
                c0 += sc;
            }
            if (e < dr) {
                err += dc;
                r0 += sr;
            }
        }
    }

    png::Gray8 image() const { return {W, H, px}; }
};

/// Renders a [H,W] map with values clamped to [0,1] onto 0..255.
inline png::Gray8 render_map(const Tensor& m) {
    if (m.ndim() != 2) throw std::invalid_argument("render_map: expects [H,W]");
    png::Gray8 img;
    img.height = m.dim(0);
    img.width = m.dim(1);
    img.pixels.resize(m.data.size());
    for (size_t i = 0; i < m.data.size(); ++i)
        img.pixels[i] = static_cast<uint8_t>(std::lround(std::clamp(m.data[i], 0.0, 1.0) * 255.0));
    return img;
}

/// Simple line plot of a series (x = index) with a box frame.
inline png::Gray8 line_plot(const std::vector<double>& ys, int width = 640, int height = 400) {
    if (ys.empty()) throw std::invalid_argument("line_plot: empty series");
    Canvas cv(height, width);
    int m = 24;  // margin
    cv.line(m, m, m, height - m, 0);
    cv.line(height - m, m, height - m, width - m, 0);
    cv.line(m, width - m, height - m, width - m, 0);
    cv.line(m, m, m, width - m, 0);

    double lo = *std::min_element(ys.begin(), ys.end());
    double hi = *std::max_element(ys.begin(), ys.end());
    if (hi - lo < 1e-300) hi = lo + 1.0;
    int pw = width - 2 * m, ph = height - 2 * m;
    auto px = [&](size_t i) {
        return m + static_cast<int>(std::lround(
                       ys.size() > 1
                           ? static_cast<double>(i) / static_cast<double>(ys.size() - 1) * (pw - 1)
                           : 0.0));
    };
    auto py = [&](double y) {
        return height - m -
               static_cast<int>(std::lround((y - lo) / (hi - lo) * (ph - 1))) - 1;
    };
    for (size_t i = 1; i < ys.size(); ++i)
        cv.line(py(ys[i - 1]), px(i - 1), py(ys[i]), px(i), 0);
    return cv.image();
}

/// Tiles per-row panels of equal size with light separator lines.
inline png::Gray8 image_grid(const std::vector<std::vector<Tensor>>& rows, int sep = 2) {
    if (rows.empty() || rows[0].empty()) throw std::invalid_argument("image_grid: empty grid");
    int H = rows[0][0].dim(0), W = rows[0][0].dim(1);
    size_t cols = rows[0].size();
    for (const auto& r : rows) {
        if (r.size() != cols) throw std::invalid_argument("image_grid: ragged rows");
        for (const auto& t : r)
            if (t.dim(0) != H || t.dim(1) != W)
                throw std::invalid_argument("image_grid: panel size mismatch");
    }
    int outH = static_cast<int>(rows.size()) * (H + sep) - sep;
    int outW = static_cast<int>(cols) * (W + sep) - sep;
    Canvas cv(outH, outW);
    for (size_t r = 0; r < rows.size(); ++r)
        for (size_t c = 0; c < cols; ++c) {
            png::Gray8 panel = render_map(rows[r][c]);
            int r0 = static_cast<int>(r) * (H + sep), c0 = static_cast<int>(c) * (W + sep);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    cv.set(r0 + y, c0 + x, panel.pixels[static_cast<size_t>(y) * W + x]);
        }
    return cv.image();
}

}  // namespace radioflow::plot
