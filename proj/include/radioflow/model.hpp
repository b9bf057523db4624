#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "rng.hpp"

namespace radioflow {

enum class ModelVariant { Lite, Full };

struct ModelConfig {
    ModelVariant variant = ModelVariant::Lite;
    int base_channels = 8;
    int depth = 2;
    bool use_spatial_attention = true;
    int cond_channels = 2;  // 2 = SRM, 3 = DRM
    int time_embed_dim = 16;

    static ModelConfig lite(int cond_channels = 2) {
        ModelConfig c;
        c.variant = ModelVariant::Lite;
        c.base_channels = 8;
        c.depth = 2;
        c.cond_channels = cond_channels;
        return c;
    }
    static ModelConfig full(int cond_channels = 2) {
        ModelConfig c;
        c.variant = ModelVariant::Full;
        c.base_channels = 32;
        c.depth = 3;
        c.cond_channels = cond_channels;
        return c;
    }

    void validate() const {
        if (depth < 1) throw std::invalid_argument("ModelConfig: depth must be >= 1");
        if (base_channels < 4) throw std::invalid_argument("ModelConfig: base_channels must be >= 4");
        if (time_embed_dim % 2 != 0)
            throw std::invalid_argument("ModelConfig: time_embed_dim must be even");
        if (cond_channels != 2 && cond_channels != 3)
            throw std::invalid_argument("ModelConfig: cond_channels must be 2 or 3");
    }

    int stage_channels(int stage) const { return base_channels << stage; }
};

/// Sinusoidal time features: sines then cosines over a geometric frequency
/// ladder from 1 to 10000.
inline std::vector<double> time_embedding(double t, int dim) {
    if (dim % 2 != 0) throw std::invalid_argument("time_embedding: dim must be even");
    int half = dim / 2;
    std::vector<double> e(static_cast<size_t>(dim));
    for (int k = 0; k < half; ++k) {
        double omega =
            half > 1 ? std::pow(10000.0, static_cast<double>(k) / (half - 1)) : 1.0;
        e[static_cast<size_t>(k)] = std::sin(t * omega);
        e[static_cast<size_t>(half + k)] = std::cos(t * omega);
    }
    return e;
}

/// Named parameters plus their EMA shadow, in a stable order.
struct ModelState {
    ModelConfig config;
    std::vector<std::pair<std::string, Tensor>> params;
    std::vector<std::pair<std::string, Tensor>> ema;

    long long parameter_count() const {
        long long n = 0;
        for (const auto& [name, t] : params) n += t.numel();
        return n;
    }
    Tensor& find(const std::string& name) {
        for (auto& [n, t] : params)
            if (n == name) return t;
        throw std::out_of_range("ModelState: no parameter " + name);
    }
};

inline long long count_parameters(const ModelState& s) { return s.parameter_count(); }

namespace detail {

inline int gn_groups(int channels) { return channels < 8 ? channels : 8; }

struct ParamBuilder {
    ModelState& state;
    Rng& rng;

    void conv(const std::string& name, int cout, int cin, int k, double gain = 1.0) {
        Tensor w({cout, cin, k, k});
        double bound = gain / std::sqrt(static_cast<double>(cin) * k * k);
        for (auto& v : w.data) v = rng.uniform(-bound, bound);
        state.params.emplace_back(name + ".w", std::move(w));
        state.params.emplace_back(name + ".b", Tensor({cout}));
    }
    void linear(const std::string& name, int out, int in) {
        Tensor w({in, out});
        double bound = 1.0 / std::sqrt(static_cast<double>(in));
        for (auto& v : w.data) v = rng.uniform(-bound, bound);
        state.params.emplace_back(name + ".w", std::move(w));
        state.params.emplace_back(name + ".b", Tensor({out}));
    }
};

/// Registers residual-block parameters: [conv-gn-film-silu] x2 + skip.
inline void build_block_params(ParamBuilder& pb, const std::string& name, int cin, int cout,
                               int emb_dim) {
    pb.conv(name + ".conv1", cout, cin, 3);
    pb.conv(name + ".conv2", cout, cout, 3);
    pb.linear(name + ".emb_g", cout, emb_dim);
    pb.linear(name + ".emb_s", cout, emb_dim);
    if (cin != cout) pb.conv(name + ".skip", cout, cin, 1);
}

}  // namespace detail

inline ModelState init_model(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ModelState s;
    s.config = cfg;
    Rng rng(Rng::derive(seed, 0xC0DE));
    detail::ParamBuilder pb{s, rng};

    int B = cfg.base_channels, E = cfg.time_embed_dim;
    pb.conv("cond_stem", B, cfg.cond_channels, 3);
    pb.conv("in_conv", B, 1 + B, 3);
    int ch = B;
    for (int d = 0; d < cfg.depth; ++d) {
        detail::build_block_params(pb, "enc" + std::to_string(d), ch, cfg.stage_channels(d), E);
        ch = cfg.stage_channels(d);
    }
    detail::build_block_params(pb, "mid", ch, cfg.stage_channels(cfg.depth), E);
    ch = cfg.stage_channels(cfg.depth);
    for (int d = cfg.depth - 1; d >= 0; --d) {
        detail::build_block_params(pb, "dec" + std::to_string(d), ch + cfg.stage_channels(d),
                                   cfg.stage_channels(d), E);
        ch = cfg.stage_channels(d);
    }
    if (cfg.use_spatial_attention) pb.conv("sa_gate", 1, 2, 7);
    // small gain keeps the initial field near zero without detaching the
    // gradient path through the head
    pb.conv("out_conv", 1, B, 3, 0.01);

    s.ema = s.params;
    return s;
}

/// Builds the forward graph on a tape. Returns the output node; `param_nodes`
/// receives the tape ids of the parameters in state order (for backward).
class ModelForward {
  public:
    ModelForward(Tape& tape, const ModelState& state, bool use_ema = false,
                 bool train_params = false)
        : tape_(tape), state_(state) {
        const auto& src = use_ema ? state.ema : state.params;
        for (const auto& [name, t] : src)
            nodes_[name] = tape_.leaf(t, train_params);
    }

    const std::vector<int> param_node_ids(const std::vector<std::pair<std::string, Tensor>>& ps) {
        std::vector<int> ids;
        for (const auto& [name, t] : ps) ids.push_back(nodes_.at(name));
        return ids;
    }
    int node_of(const std::string& name) const { return nodes_.at(name); }

    /// x_t: [B,1,H,W]; t: one value per batch row; cond: [B,C,H,W].
    int run(const Tensor& x_t, const std::vector<double>& t, const Tensor& cond) {
        const ModelConfig& cfg = state_.config;
        if (x_t.ndim() != 4 || x_t.dim(1) != 1)
            throw std::invalid_argument("model forward: x_t must be [B,1,H,W]");
        if (cond.ndim() != 4 || cond.dim(1) != cfg.cond_channels)
            throw std::invalid_argument(
                "model forward: condition has " + std::to_string(cond.dim(1)) +
                " channels, config expects " + std::to_string(cfg.cond_channels));
        int Bn = x_t.dim(0), H = x_t.dim(2), W = x_t.dim(3);
        if (static_cast<int>(t.size()) != Bn)
            throw std::invalid_argument("model forward: t batch size mismatch");
        int div = 1 << cfg.depth;
        if (H % div != 0 || W % div != 0)
            throw std::invalid_argument("model forward: spatial size not divisible by 2^depth");
        if (cond.dim(0) != Bn || cond.dim(2) != H || cond.dim(3) != W)
            throw std::invalid_argument("model forward: condition spatial shape mismatch");

        // time embedding as a constant leaf [B,E]
        Tensor emb({Bn, cfg.time_embed_dim});
        for (int b = 0; b < Bn; ++b) {
            auto e = time_embedding(t[static_cast<size_t>(b)], cfg.time_embed_dim);
            for (int k = 0; k < cfg.time_embed_dim; ++k)
                emb.at(b, k) = e[static_cast<size_t>(k)];
        }
        int emb_n = tape_.leaf(emb);

        int cond_n = tape_.leaf(cond);
        int stem = conv("cond_stem", cond_n, 1);
        int h = conv("in_conv", tape_.concat_channels(tape_.leaf(x_t), stem), 1);

        std::vector<int> skips;
        for (int d = 0; d < cfg.depth; ++d) {
            h = block("enc" + std::to_string(d), h, emb_n);
            skips.push_back(h);
            h = tape_.downsample_avg_2x(h);
        }
        h = block("mid", h, emb_n);
        for (int d = cfg.depth - 1; d >= 0; --d) {
            h = tape_.upsample_nearest_2x(h);
            h = tape_.concat_channels(h, skips[static_cast<size_t>(d)]);
            h = block("dec" + std::to_string(d), h, emb_n);
        }
        if (cfg.use_spatial_attention) h = spatial_attention(h, stem);
        return conv("out_conv", h, 1);
    }

    /// Multiplicative spatial gate from pooled statistics of the refined
    /// features concatenated with the condition stem features.
    int spatial_attention(int features, int cond_features) {
        int both = tape_.concat_channels(features, cond_features);
        int pooled = tape_.concat_channels(tape_.mean_over_channels(both),
                                           tape_.max_over_channels(both));
        int gate = tape_.sigmoid(conv("sa_gate", pooled, 3));
        return tape_.mul(features, gate);
    }

  private:
    Tape& tape_;
    const ModelState& state_;
    std::map<std::string, int> nodes_;

    int conv(const std::string& name, int x, int pad) {
        int y = tape_.conv2d(x, nodes_.at(name + ".w"), 1, pad);
        return tape_.add_channel_bias(y, nodes_.at(name + ".b"));
    }
    int linear(const std::string& name, int x) {
        return tape_.add_row_bias(tape_.matmul(x, nodes_.at(name + ".w")),
                                  nodes_.at(name + ".b"));
    }

    int block(const std::string& name, int x, int emb) {
        const Tensor& xv = tape_.value(x);
        int cin = xv.dim(1);
        int h = conv(name + ".conv1", x, 1);
        int cout = tape_.value(h).dim(1);
        h = tape_.group_normalize(h, detail::gn_groups(cout));
        h = tape_.film(h, linear(name + ".emb_g", emb), linear(name + ".emb_s", emb));
        h = tape_.silu(h);
        h = conv(name + ".conv2", h, 1);
        h = tape_.group_normalize(h, detail::gn_groups(cout));
        h = tape_.silu(h);
        int skip = cin == cout ? x : conv(name + ".skip", x, 0);
        return tape_.add(h, skip);
    }
};

/// Convenience single forward pass without gradient bookkeeping.
inline Tensor model_forward(const ModelState& state, const Tensor& x_t,
                            const std::vector<double>& t, const Tensor& cond,
                            bool use_ema = false) {
    Tape tape;
    ModelForward fw(tape, state, use_ema);
    return tape.value(fw.run(x_t, t, cond));
}

// ---------------------------------------------------------------------------
// Checkpoint I/O ("RFCK", little-endian)

constexpr uint16_t kCheckpointVersion = 1;

namespace detail {

inline void ck_write_u16(std::ostream& o, uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    o.write(b, 2);
}
inline void ck_write_u32(std::ostream& o, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    o.write(b, 4);
}
inline uint16_t ck_read_u16(std::istream& i) {
    unsigned char b[2];
    i.read(reinterpret_cast<char*>(b), 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}
inline uint32_t ck_read_u32(std::istream& i) {
    unsigned char b[4];
    i.read(reinterpret_cast<char*>(b), 4);
    return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) | (uint32_t(b[3]) << 24);
}

inline void write_param_group(std::ostream& o,
                              const std::vector<std::pair<std::string, Tensor>>& ps) {
    ck_write_u32(o, static_cast<uint32_t>(ps.size()));
    for (const auto& [name, t] : ps) {
        ck_write_u32(o, static_cast<uint32_t>(name.size()));
        o.write(name.data(), static_cast<std::streamsize>(name.size()));
        ck_write_u16(o, static_cast<uint16_t>(t.shape.size()));
        for (int d : t.shape) ck_write_u32(o, static_cast<uint32_t>(d));
        o.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * 8));
    }
}

inline std::vector<std::pair<std::string, Tensor>> read_param_group(std::istream& i) {
    std::vector<std::pair<std::string, Tensor>> ps;
    uint32_t n = ck_read_u32(i);
    for (uint32_t k = 0; k < n; ++k) {
        uint32_t len = ck_read_u32(i);
        std::string name(len, '\0');
        i.read(name.data(), len);
        uint16_t nd = ck_read_u16(i);
        std::vector<int> shape;
        for (uint16_t d = 0; d < nd; ++d) shape.push_back(static_cast<int>(ck_read_u32(i)));
        Tensor t(shape);
        i.read(reinterpret_cast<char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * 8));
        ps.emplace_back(std::move(name), std::move(t));
    }
    return ps;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ModelState& s) {
    // write to a temp file then rename, so a crash never leaves a torn file
    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw std::runtime_error("save_checkpoint: cannot open " + tmp);
        f.write("RFCK", 4);
        detail::ck_write_u16(f, kCheckpointVersion);
        f.put(s.config.variant == ModelVariant::Lite ? 0 : 1);
        detail::ck_write_u32(f, static_cast<uint32_t>(s.config.base_channels));
        detail::ck_write_u32(f, static_cast<uint32_t>(s.config.depth));
        f.put(s.config.use_spatial_attention ? 1 : 0);
        detail::ck_write_u32(f, static_cast<uint32_t>(s.config.cond_channels));
        detail::ck_write_u32(f, static_cast<uint32_t>(s.config.time_embed_dim));
        detail::write_param_group(f, s.params);
        detail::write_param_group(f, s.ema);
        if (!f) throw std::runtime_error("save_checkpoint: write failed for " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw std::runtime_error("save_checkpoint: rename failed: " + ec.message());
}

inline ModelState load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (std::string(magic, 4) != "RFCK")
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    uint16_t version = detail::ck_read_u16(f);
    if (version != kCheckpointVersion)
        throw std::runtime_error("load_checkpoint: unsupported version in " + path);
    ModelState s;
    s.config.variant = f.get() == 0 ? ModelVariant::Lite : ModelVariant::Full;
    s.config.base_channels = static_cast<int>(detail::ck_read_u32(f));
    s.config.depth = static_cast<int>(detail::ck_read_u32(f));
    s.config.use_spatial_attention = f.get() != 0;
    s.config.cond_channels = static_cast<int>(detail::ck_read_u32(f));
    s.config.time_embed_dim = static_cast<int>(detail::ck_read_u32(f));
    s.params = detail::read_param_group(f);
    s.ema = detail::read_param_group(f);
    if (!f) throw std::runtime_error("load_checkpoint: truncated file " + path);
    if (s.params.size() != s.ema.size())
        throw std::runtime_error("load_checkpoint: corrupt parameter groups in " + path);
    return s;
}

}  // namespace radioflow
