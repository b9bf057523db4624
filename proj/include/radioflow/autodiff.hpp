#pragma once

#include <array>
#include <functional>
#include <stdexcept>

#include "tensor.hpp"

namespace radioflow {

/// Reverse-mode tape over Tensor values. Nodes are appended in topological
/// order by construction; backward() walks the tape once in reverse.
class Tape {
  public:
    enum class Op {
        Leaf,
        Add,
        Sub,
        Mul,          // elementwise; rhs may have C==1 for channel broadcast
        Scale,        // by a compile-time constant
        Sigmoid,
        SiLU,
        Sum,          // full reduction -> [1]
        Mean,         // full reduction -> [1]
        MeanCh,       // [B,C,H,W] -> [B,1,H,W]
        MaxCh,        // [B,C,H,W] -> [B,1,H,W]
        Up2x,         // nearest-neighbor 2x upsample
        Down2x,       // 2x2 average pool
        GroupNorm,    // no affine terms
        MatMul,       // [M,K] x [K,N]
        AddRowBias,   // [B,K] + [K]
        AddChanBias,  // [B,C,H,W] + [C]
        Film,         // x*(1+g[b,c]) + s[b,c]
        Conv2d,
        ConcatCh,     // concat two tensors along channel dim
    };

    struct Node {
        Op op = Op::Leaf;
        std::array<int, 3> in{-1, -1, -1};
        Tensor val;
        int i0 = 0, i1 = 0;  // op attributes (stride/pad, groups)
        double a = 0.0;      // op attribute (scale constant, eps)
        bool needs_grad = false;
    };

    int leaf(Tensor t, bool needs_grad = false) {
        Node n;
        n.val = std::move(t);
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].val; }
    size_t size() const { return nodes_.size(); }

    int add(int x, int y) {
        check_same(x, y, "add");
        Tensor out = value(x);
        const Tensor& b = value(y);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
        return push(Op::Add, {x, y}, std::move(out));
    }

    int sub(int x, int y) {
        check_same(x, y, "sub");
        Tensor out = value(x);
        const Tensor& b = value(y);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
        return push(Op::Sub, {x, y}, std::move(out));
    }

    /// Elementwise product. If y has a single channel and x has many, the
    /// gate y is broadcast across x's channels.
    int mul(int x, int y) {
        const Tensor& a = value(x);
        const Tensor& b = value(y);
        if (a.same_shape(b)) {
            Tensor out = a;
            for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
            return push(Op::Mul, {x, y}, std::move(out));
        }
        if (a.ndim() == 4 && b.ndim() == 4 && b.dim(1) == 1 && a.dim(0) == b.dim(0) &&
            a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3)) {
            Tensor out = a;
            int B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
            for (int bb = 0; bb < B; ++bb)
                for (int c = 0; c < C; ++c)
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w)
                            out.at(bb, c, h, w) = a.at(bb, c, h, w) * b.at(bb, 0, h, w);
            return push(Op::Mul, {x, y}, std::move(out));
        }
        throw std::invalid_argument("mul: incompatible shapes " +
                                    Tensor::shape_str(a.shape) + " vs " +
                                    Tensor::shape_str(b.shape));
    }

    int scale(int x, double k) {
        Tensor out = value(x);
        for (auto& v : out.data) v *= k;
        int id = push(Op::Scale, {x}, std::move(out));
        nodes_.back().a = k;
        return id;
    }

    int sigmoid(int x) {
        Tensor out = value(x);
        for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
        return push(Op::Sigmoid, {x}, std::move(out));
    }

    int silu(int x) {
        Tensor out = value(x);
        for (auto& v : out.data) v = v / (1.0 + std::exp(-v));
        return push(Op::SiLU, {x}, std::move(out));
    }

    int sum(int x) {
        double s = 0.0;
        for (double v : value(x).data) s += v;
        return push(Op::Sum, {x}, Tensor({1}, {s}));
    }

    int mean(int x) {
        double s = 0.0;
        const Tensor& t = value(x);
        for (double v : t.data) s += v;
        return push(Op::Mean, {x}, Tensor({1}, {s / static_cast<double>(t.numel())}));
    }

    int mean_over_channels(int x) {
        const Tensor& t = value(x);
        require4(t, "mean_over_channels");
        int B = t.dim(0), C = t.dim(1), H = t.dim(2), W = t.dim(3);
        Tensor out({B, 1, H, W});
        for (int b = 0; b < B; ++b)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    double s = 0.0;
                    for (int c = 0; c < C; ++c) s += t.at(b, c, h, w);
                    out.at(b, 0, h, w) = s / C;
                }
        return push(Op::MeanCh, {x}, std::move(out));
    }

    int max_over_channels(int x) {
        const Tensor& t = value(x);
        require4(t, "max_over_channels");
        int B = t.dim(0), C = t.dim(1), H = t.dim(2), W = t.dim(3);
        Tensor out({B, 1, H, W});
        for (int b = 0; b < B; ++b)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    double m = t.at(b, 0, h, w);
                    for (int c = 1; c < C; ++c) m = std::max(m, t.at(b, c, h, w));
                    out.at(b, 0, h, w) = m;
                }
        return push(Op::MaxCh, {x}, std::move(out));
    }

    int upsample_nearest_2x(int x) {
        const Tensor& t = value(x);
        require4(t, "upsample_nearest_2x");
        int B = t.dim(0), C = t.dim(1), H = t.dim(2), W = t.dim(3);
        Tensor out({B, C, 2 * H, 2 * W});
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < 2 * H; ++h)
                    for (int w = 0; w < 2 * W; ++w)
                        out.at(b, c, h, w) = t.at(b, c, h / 2, w / 2);
        return push(Op::Up2x, {x}, std::move(out));
    }

    int downsample_avg_2x(int x) {
        const Tensor& t = value(x);
        require4(t, "downsample_avg_2x");
        int B = t.dim(0), C = t.dim(1), H = t.dim(2), W = t.dim(3);
        if (H % 2 || W % 2)
            throw std::invalid_argument("downsample_avg_2x: odd spatial size");
        Tensor out({B, C, H / 2, W / 2});
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < H / 2; ++h)
                    for (int w = 0; w < W / 2; ++w)
                        out.at(b, c, h, w) =
                            0.25 * (t.at(b, c, 2 * h, 2 * w) + t.at(b, c, 2 * h, 2 * w + 1) +
                                    t.at(b, c, 2 * h + 1, 2 * w) + t.at(b, c, 2 * h + 1, 2 * w + 1));
        return push(Op::Down2x, {x}, std::move(out));
    }

    /// Group normalization without affine terms, per (batch, group).
    int group_normalize(int x, int groups, double eps = 1e-5) {
        const Tensor& t = value(x);
        require4(t, "group_normalize");
        int C = t.dim(1);
        if (C % groups != 0)
            throw std::invalid_argument("group_normalize: channels not divisible by groups");
        Tensor out = t;
        group_norm_forward(t, out, groups, eps);
        int id = push(Op::GroupNorm, {x}, std::move(out));
        nodes_.back().i0 = groups;
        nodes_.back().a = eps;
        return id;
    }

    int matmul(int x, int y) {
        const Tensor& a = value(x);
        const Tensor& b = value(y);
        if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
            throw std::invalid_argument("matmul: incompatible shapes");
        int M = a.dim(0), K = a.dim(1), N = b.dim(1);
        Tensor out({M, N});
        for (int i = 0; i < M; ++i)
            for (int k = 0; k < K; ++k) {
                double av = a.at(i, k);
                for (int j = 0; j < N; ++j) out.at(i, j) += av * b.at(k, j);
            }
        return push(Op::MatMul, {x, y}, std::move(out));
    }

    int add_row_bias(int x, int bias) {
        const Tensor& a = value(x);
        const Tensor& b = value(bias);
        if (a.ndim() != 2 || b.ndim() != 1 || a.dim(1) != b.dim(0))
            throw std::invalid_argument("add_row_bias: incompatible shapes");
        Tensor out = a;
        for (int i = 0; i < a.dim(0); ++i)
            for (int j = 0; j < a.dim(1); ++j) out.at(i, j) += b.data[static_cast<size_t>(j)];
        return push(Op::AddRowBias, {x, bias}, std::move(out));
    }

    int add_channel_bias(int x, int bias) {
        const Tensor& a = value(x);
        const Tensor& b = value(bias);
        if (a.ndim() != 4 || b.ndim() != 1 || a.dim(1) != b.dim(0))
            throw std::invalid_argument("add_channel_bias: incompatible shapes");
        Tensor out = a;
        int B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
        for (int bb = 0; bb < B; ++bb)
            for (int c = 0; c < C; ++c) {
                double bias_v = b.data[static_cast<size_t>(c)];
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) out.at(bb, c, h, w) += bias_v;
            }
        return push(Op::AddChanBias, {x, bias}, std::move(out));
    }

    /// Per-channel feature modulation: out = x*(1+g[b,c]) + s[b,c].
    int film(int x, int g, int s) {
        const Tensor& a = value(x);
        const Tensor& gv = value(g);
        const Tensor& sv = value(s);
        if (a.ndim() != 4 || gv.ndim() != 2 || !gv.same_shape(sv) ||
            gv.dim(0) != a.dim(0) || gv.dim(1) != a.dim(1))
            throw std::invalid_argument("film: incompatible shapes");
        Tensor out = a;
        int B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                double gg = 1.0 + gv.at(b, c), ss = sv.at(b, c);
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w)
                        out.at(b, c, h, w) = a.at(b, c, h, w) * gg + ss;
            }
        return push(Op::Film, {x, g, s}, std::move(out));
    }

    int conv2d(int x, int kernel, int stride = 1, int padding = 0) {
        const Tensor& in = value(x);
        const Tensor& k = value(kernel);
        require4(in, "conv2d input");
        require4(k, "conv2d kernel");
        if (k.dim(2) != k.dim(3) || k.dim(2) % 2 == 0)
            throw std::invalid_argument("conv2d: kernel must be square with odd size");
        if (in.dim(1) != k.dim(1))
            throw std::invalid_argument("conv2d: input channels " + std::to_string(in.dim(1)) +
                                        " != kernel channels " + std::to_string(k.dim(1)));
        if (stride < 1 || padding < 0) throw std::invalid_argument("conv2d: bad stride/padding");
        int B = in.dim(0), Cin = in.dim(1), H = in.dim(2), W = in.dim(3);
        int Cout = k.dim(0), ks = k.dim(2);
        int Ho = (H + 2 * padding - ks) / stride + 1;
        int Wo = (W + 2 * padding - ks) / stride + 1;
        Tensor out({B, Cout, Ho, Wo});
        for (int b = 0; b < B; ++b)
            for (int co = 0; co < Cout; ++co)
                for (int ci = 0; ci < Cin; ++ci)
                    for (int kh = 0; kh < ks; ++kh)
                        for (int kw = 0; kw < ks; ++kw) {
                            double kv = k.at(co, ci, kh, kw);
                            if (kv == 0.0) continue;
                            for (int oh = 0; oh < Ho; ++oh) {
                                int ih = oh * stride - padding + kh;
                                if (ih < 0 || ih >= H) continue;
                                const double* ip = &in.data[static_cast<size_t>(
                                    ((b * Cin + ci) * H + ih) * W)];
                                double* op = &out.data[static_cast<size_t>(
                                    ((b * Cout + co) * Ho + oh) * Wo)];
                                for (int ow = 0; ow < Wo; ++ow) {
                                    int iw = ow * stride - padding + kw;
                                    if (iw < 0 || iw >= W) continue;
                                    op[ow] += kv * ip[iw];
                                }
                            }
                        }
        int id = push(Op::Conv2d, {x, kernel}, std::move(out));
        nodes_.back().i0 = stride;
        nodes_.back().i1 = padding;
        return id;
    }

    int concat_channels(int x, int y) {
        const Tensor& a = value(x);
        const Tensor& b = value(y);
        require4(a, "concat_channels");
        if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
            throw std::invalid_argument("concat_channels: incompatible shapes");
        int B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
        Tensor out({B, Ca + Cb, H, W});
        for (int bb = 0; bb < B; ++bb) {
            for (int c = 0; c < Ca; ++c)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) out.at(bb, c, h, w) = a.at(bb, c, h, w);
            for (int c = 0; c < Cb; ++c)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) out.at(bb, Ca + c, h, w) = b.at(bb, c, h, w);
        }
        return push(Op::ConcatCh, {x, y}, std::move(out));
    }

    /// Gradients of a scalar loss node with respect to every node that
    /// needs them. Nodes off every path to the loss keep zero gradients.
    std::vector<Tensor> backward(int loss_id) const {
        const Node& ln = nodes_[static_cast<size_t>(loss_id)];
        if (ln.val.numel() != 1)
            throw std::invalid_argument("backward: loss must be scalar");
        std::vector<Tensor> grads(nodes_.size());
        for (size_t i = 0; i < nodes_.size(); ++i)
            grads[i] = Tensor(nodes_[i].val.shape);
        grads[static_cast<size_t>(loss_id)].data[0] = 1.0;

        for (int id = loss_id; id >= 0; --id) {
            const Node& n = nodes_[static_cast<size_t>(id)];
            if (!n.needs_grad) continue;
            const Tensor& g = grads[static_cast<size_t>(id)];
            backward_one(n, g, grads);
        }
        return grads;
    }

  private:
    std::vector<Node> nodes_;

    static void require4(const Tensor& t, const char* where) {
        if (t.ndim() != 4)
            throw std::invalid_argument(std::string(where) + ": expected 4-D tensor, got " +
                                        Tensor::shape_str(t.shape));
    }

    void check_same(int x, int y, const char* where) const {
        if (!value(x).same_shape(value(y)))
            throw std::invalid_argument(std::string(where) + ": shape mismatch " +
                                        Tensor::shape_str(value(x).shape) + " vs " +
                                        Tensor::shape_str(value(y).shape));
    }

    int push(Op op, std::array<int, 3> in, Tensor out) {
        Node n;
        n.op = op;
        n.in = {in[0], in[1], in.size() > 2 ? in[2] : -1};
        bool ng = false;
        for (int i : n.in)
            if (i >= 0 && nodes_[static_cast<size_t>(i)].needs_grad) ng = true;
        n.needs_grad = ng;
        n.val = std::move(out);
        if (!n.val.all_finite())
            throw std::runtime_error("non-finite value produced by forward op");
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }
    int push(Op op, std::initializer_list<int> in, Tensor out) {
        std::array<int, 3> a{-1, -1, -1};
        int i = 0;
        for (int v : in) a[static_cast<size_t>(i++)] = v;
        return push(op, a, std::move(out));
    }

    static void group_norm_forward(const Tensor& t, Tensor& out, int groups, double eps) {
        int B = t.dim(0), C = t.dim(1), H = t.dim(2), W = t.dim(3);
        int cpg = C / groups;
        long long m = static_cast<long long>(cpg) * H * W;
        for (int b = 0; b < B; ++b)
            for (int gidx = 0; gidx < groups; ++gidx) {
                double mu = 0.0;
                for (int c = gidx * cpg; c < (gidx + 1) * cpg; ++c)
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w) mu += t.at(b, c, h, w);
                mu /= static_cast<double>(m);
                double var = 0.0;
                for (int c = gidx * cpg; c < (gidx + 1) * cpg; ++c)
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w) {
                            double d = t.at(b, c, h, w) - mu;
                            var += d * d;
                        }
                var /= static_cast<double>(m);
                double inv = 1.0 / std::sqrt(var + eps);
                for (int c = gidx * cpg; c < (gidx + 1) * cpg; ++c)
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w)
                            out.at(b, c, h, w) = (t.at(b, c, h, w) - mu) * inv;
            }
    }

    void accumulate(std::vector<Tensor>& grads, int id, const Tensor& g) const {
        if (id < 0 || !nodes_[static_cast<size_t>(id)].needs_grad) return;
        Tensor& dst = grads[static_cast<size_t>(id)];
        for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += g.data[i];
    }

    void backward_one(const Node& n, const Tensor& g, std::vector<Tensor>& grads) const;
};

inline void Tape::backward_one(const Node& n, const Tensor& g,
                               std::vector<Tensor>& grads) const {
    auto in_val = [&](int slot) -> const Tensor& {
        return nodes_[static_cast<size_t>(n.in[static_cast<size_t>(slot)])].val;
    };
    auto wants = [&](int slot) {
        int id = n.in[static_cast<size_t>(slot)];
        return id >= 0 && nodes_[static_cast<size_t>(id)].needs_grad;
    };
    auto acc = [&](int slot, const Tensor& t) {
        accumulate(grads, n.in[static_cast<size_t>(slot)], t);
    };

    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Add:
            acc(0, g);
            acc(1, g);
            break;
        case Op::Sub: {
            acc(0, g);
            if (wants(1)) {
                Tensor gy = g;
                for (auto& v : gy.data) v = -v;
                acc(1, gy);
            }
            break;
        }
        case Op::Mul: {
            const Tensor& a = in_val(0);
            const Tensor& b = in_val(1);
            if (a.same_shape(b)) {
                if (wants(0)) {
                    Tensor ga = g;
                    for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] *= b.data[i];
                    acc(0, ga);
                }
                if (wants(1)) {
                    Tensor gb = g;
                    for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] *= a.data[i];
                    acc(1, gb);
                }
            } else {
                int B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
                if (wants(0)) {
                    Tensor ga(a.shape);
                    for (int bb = 0; bb < B; ++bb)
                        for (int c = 0; c < C; ++c)
                            for (int h = 0; h < H; ++h)
                                for (int w = 0; w < W; ++w)
                                    ga.at(bb, c, h, w) = g.at(bb, c, h, w) * b.at(bb, 0, h, w);
                    acc(0, ga);
                }
                if (wants(1)) {
                    Tensor gb(b.shape);
                    for (int bb = 0; bb < B; ++bb)
                        for (int h = 0; h < H; ++h)
                            for (int w = 0; w < W; ++w) {
                                double s = 0.0;
                                for (int c = 0; c < C; ++c)
                                    s += g.at(bb, c, h, w) * a.at(bb, c, h, w);
                                gb.at(bb, 0, h, w) = s;
                            }
                    acc(1, gb);
                }
            }
            break;
        }
        case Op::Scale: {
            Tensor gx = g;
            for (auto& v : gx.data) v *= n.a;
            acc(0, gx);
            break;
        }
        case Op::Sigmoid: {
            Tensor gx = g;
            for (size_t i = 0; i < gx.data.size(); ++i) {
                double y = n.val.data[i];
                gx.data[i] *= y * (1.0 - y);
            }
            acc(0, gx);
            break;
        }
        case Op::SiLU: {
            const Tensor& x = in_val(0);
            Tensor gx = g;
            for (size_t i = 0; i < gx.data.size(); ++i) {
                double s = 1.0 / (1.0 + std::exp(-x.data[i]));
                gx.data[i] *= s * (1.0 + x.data[i] * (1.0 - s));
            }
            acc(0, gx);
            break;
        }
        case Op::Sum: {
            Tensor gx(in_val(0).shape, g.data[0]);
            acc(0, gx);
            break;
        }
        case Op::Mean: {
            Tensor gx(in_val(0).shape, g.data[0] / static_cast<double>(in_val(0).numel()));
            acc(0, gx);
            break;
        }
        case Op::MeanCh: {
            const Tensor& x = in_val(0);
            int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
            Tensor gx(x.shape);
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c)
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w)
                            gx.at(b, c, h, w) = g.at(b, 0, h, w) / C;
            acc(0, gx);
            break;
        }
        case Op::MaxCh: {
            const Tensor& x = in_val(0);
            int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
            Tensor gx(x.shape);
            // gradient routed to the first argmax channel
            for (int b = 0; b < B; ++b)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) {
                        int best = 0;
                        double m = x.at(b, 0, h, w);
                        for (int c = 1; c < C; ++c)
                            if (x.at(b, c, h, w) > m) {
                                m = x.at(b, c, h, w);
                                best = c;
                            }
                        gx.at(b, best, h, w) = g.at(b, 0, h, w);
                    }
            acc(0, gx);
            break;
        }
        case Op::Up2x: {
            const Tensor& x = in_val(0);
            int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
            Tensor gx(x.shape);
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c)
                    for (int h = 0; h < 2 * H; ++h)
                        for (int w = 0; w < 2 * W; ++w)
                            gx.at(b, c, h / 2, w / 2) += g.at(b, c, h, w);
            acc(0, gx);
            break;
        }
        case Op::Down2x: {
            const Tensor& x = in_val(0);
            int B = x.dim(0), C = x.dim(1), Ho = n.val.dim(2), Wo = n.val.dim(3);
            Tensor gx(x.shape);
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c)
                    for (int h = 0; h < Ho; ++h)
                        for (int w = 0; w < Wo; ++w) {
                            double gv = 0.25 * g.at(b, c, h, w);
                            gx.at(b, c, 2 * h, 2 * w) += gv;
                            gx.at(b, c, 2 * h, 2 * w + 1) += gv;
                            gx.at(b, c, 2 * h + 1, 2 * w) += gv;
                            gx.at(b, c, 2 * h + 1, 2 * w + 1) += gv;
                        }
            acc(0, gx);
            break;
        }
        case Op::GroupNorm: {
            const Tensor& x = in_val(0);
            const Tensor& y = n.val;
            int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
            int groups = n.i0, cpg = C / groups;
            double eps = n.a;
            long long m = static_cast<long long>(cpg) * H * W;
            Tensor gx(x.shape);
            for (int b = 0; b < B; ++b)
                for (int gi = 0; gi < groups; ++gi) {
                    double mu = 0.0;
                    for (int c = gi * cpg; c < (gi + 1) * cpg; ++c)
                        for (int h = 0; h < H; ++h)
                            for (int w = 0; w < W; ++w) mu += x.at(b, c, h, w);
                    mu /= static_cast<double>(m);
                    double var = 0.0;
                    for (int c = gi * cpg; c < (gi + 1) * cpg; ++c)
                        for (int h = 0; h < H; ++h)
                            for (int w = 0; w < W; ++w) {
                                double d = x.at(b, c, h, w) - mu;
                                var += d * d;
                            }
                    var /= static_cast<double>(m);
                    double inv = 1.0 / std::sqrt(var + eps);
                    double gmean = 0.0, gymean = 0.0;
                    for (int c = gi * cpg; c < (gi + 1) * cpg; ++c)
                        for (int h = 0; h < H; ++h)
                            for (int w = 0; w < W; ++w) {
                                gmean += g.at(b, c, h, w);
                                gymean += g.at(b, c, h, w) * y.at(b, c, h, w);
                            }
                    gmean /= static_cast<double>(m);
                    gymean /= static_cast<double>(m);
                    for (int c = gi * cpg; c < (gi + 1) * cpg; ++c)
                        for (int h = 0; h < H; ++h)
                            for (int w = 0; w < W; ++w)
                                gx.at(b, c, h, w) =
                                    inv * (g.at(b, c, h, w) - gmean - y.at(b, c, h, w) * gymean);
                }
            acc(0, gx);
            break;
        }
        case Op::MatMul: {
            const Tensor& a = in_val(0);
            const Tensor& b = in_val(1);
            int M = a.dim(0), K = a.dim(1), N = b.dim(1);
            if (wants(0)) {
                Tensor ga(a.shape);
                for (int i = 0; i < M; ++i)
                    for (int j = 0; j < N; ++j) {
                        double gv = g.at(i, j);
                        for (int k = 0; k < K; ++k) ga.at(i, k) += gv * b.at(k, j);
                    }
                acc(0, ga);
            }
            if (wants(1)) {
                Tensor gb(b.shape);
                for (int i = 0; i < M; ++i)
                    for (int k = 0; k < K; ++k) {
                        double av = a.at(i, k);
                        for (int j = 0; j < N; ++j) gb.at(k, j) += av * g.at(i, j);
                    }
                acc(1, gb);
            }
            break;
        }
        case Op::AddRowBias: {
            acc(0, g);
            if (wants(1)) {
                const Tensor& b = in_val(1);
                Tensor gb(b.shape);
                for (int i = 0; i < g.dim(0); ++i)
                    for (int j = 0; j < g.dim(1); ++j)
                        gb.data[static_cast<size_t>(j)] += g.at(i, j);
                acc(1, gb);
            }
            break;
        }
        case Op::AddChanBias: {
            acc(0, g);
            if (wants(1)) {
                const Tensor& b = in_val(1);
                Tensor gb(b.shape);
                int B = g.dim(0), C = g.dim(1), H = g.dim(2), W = g.dim(3);
                for (int bb = 0; bb < B; ++bb)
                    for (int c = 0; c < C; ++c)
                        for (int h = 0; h < H; ++h)
                            for (int w = 0; w < W; ++w)
                                gb.data[static_cast<size_t>(c)] += g.at(bb, c, h, w);
                acc(1, gb);
            }
            break;
        }
        case Op::Film: {
            const Tensor& x = in_val(0);
            const Tensor& gv = in_val(1);
            int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
            if (wants(0)) {
                Tensor gx(x.shape);
                for (int b = 0; b < B; ++b)
                    for (int c = 0; c < C; ++c) {
                        double gg = 1.0 + gv.at(b, c);
                        for (int h = 0; h < H; ++h)
                            for (int w = 0; w < W; ++w)
                                gx.at(b, c, h, w) = g.at(b, c, h, w) * gg;
                    }
                acc(0, gx);
            }
            if (wants(1)) {
                Tensor gg(gv.shape);
                for (int b = 0; b < B; ++b)
                    for (int c = 0; c < C; ++c) {
                        double s = 0.0;
                        for (int h = 0; h < H; ++h)
                            for (int w = 0; w < W; ++w)
                                s += g.at(b, c, h, w) * x.at(b, c, h, w);
                        gg.at(b, c) = s;
                    }
                acc(1, gg);
            }
            if (wants(2)) {
                Tensor gs(gv.shape);
                for (int b = 0; b < B; ++b)
                    for (int c = 0; c < C; ++c) {
                        double s = 0.0;
                        for (int h = 0; h < H; ++h)
                            for (int w = 0; w < W; ++w) s += g.at(b, c, h, w);
                        gs.at(b, c) = s;
                    }
                acc(2, gs);
            }
            break;
        }
        case Op::Conv2d: {
            const Tensor& x = in_val(0);
            const Tensor& k = in_val(1);
            int stride = n.i0, pad = n.i1;
            int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
            int Cout = k.dim(0), ks = k.dim(2);
            int Ho = n.val.dim(2), Wo = n.val.dim(3);
            if (wants(0)) {
                Tensor gx(x.shape);
                for (int b = 0; b < B; ++b)
                    for (int co = 0; co < Cout; ++co)
                        for (int ci = 0; ci < Cin; ++ci)
                            for (int kh = 0; kh < ks; ++kh)
                                for (int kw = 0; kw < ks; ++kw) {
                                    double kv = k.at(co, ci, kh, kw);
                                    if (kv == 0.0) continue;
                                    for (int oh = 0; oh < Ho; ++oh) {
                                        int ih = oh * stride - pad + kh;
                                        if (ih < 0 || ih >= H) continue;
                                        for (int ow = 0; ow < Wo; ++ow) {
                                            int iw = ow * stride - pad + kw;
                                            if (iw < 0 || iw >= W) continue;
                                            gx.at(b, ci, ih, iw) += kv * g.at(b, co, oh, ow);
                                        }
                                    }
                                }
                acc(0, gx);
            }
            if (wants(1)) {
                Tensor gk(k.shape);
                for (int b = 0; b < B; ++b)
                    for (int co = 0; co < Cout; ++co)
                        for (int ci = 0; ci < Cin; ++ci)
                            for (int kh = 0; kh < ks; ++kh)
                                for (int kw = 0; kw < ks; ++kw) {
                                    double s = 0.0;
                                    for (int oh = 0; oh < Ho; ++oh) {
                                        int ih = oh * stride - pad + kh;
                                        if (ih < 0 || ih >= H) continue;
                                        for (int ow = 0; ow < Wo; ++ow) {
                                            int iw = ow * stride - pad + kw;
                                            if (iw < 0 || iw >= W) continue;
                                            s += x.at(b, ci, ih, iw) * g.at(b, co, oh, ow);
                                        }
                                    }
                                    gk.at(co, ci, kh, kw) += s;
                                }
                acc(1, gk);
            }
            break;
        }
        case Op::ConcatCh: {
            const Tensor& a = in_val(0);
            const Tensor& b = in_val(1);
            int B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
            if (wants(0)) {
                Tensor ga(a.shape);
                for (int bb = 0; bb < B; ++bb)
                    for (int c = 0; c < Ca; ++c)
                        for (int h = 0; h < H; ++h)
                            for (int w = 0; w < W; ++w)
                                ga.at(bb, c, h, w) = g.at(bb, c, h, w);
                acc(0, ga);
            }
            if (wants(1)) {
                Tensor gb(b.shape);
                for (int bb = 0; bb < B; ++bb)
                    for (int c = 0; c < Cb; ++c)
                        for (int h = 0; h < H; ++h)
                            for (int w = 0; w < W; ++w)
                                gb.at(bb, c, h, w) = g.at(bb, Ca + c, h, w);
                acc(1, gb);
            }
            break;
        }
    }
}

/// Central finite differences of a scalar function, elementwise.
inline Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f,
                                     const Tensor& x, double h = 1e-5) {
    if (h <= 0.0) throw std::invalid_argument("finite_difference_grad: h must be positive");
    Tensor g(x.shape);
    Tensor xp = x;
    for (size_t i = 0; i < x.data.size(); ++i) {
        double orig = xp.data[i];
        xp.data[i] = orig + h;
        double fp = f(xp);
        xp.data[i] = orig - h;
        double fm = f(xp);
        xp.data[i] = orig;
        g.data[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

}  // namespace radioflow
