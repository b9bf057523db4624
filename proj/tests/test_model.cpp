#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "radioflow/model.hpp"

using namespace radioflow;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.base_channels = 4;
    c.depth = 1;
    c.time_embed_dim = 4;
    c.cond_channels = 2;
    c.use_spatial_attention = true;
    return c;
}

double max_rel_err(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double denom = std::max({std::fabs(a.data[i]), std::fabs(b.data[i]), 1e-4});
        worst = std::max(worst, std::fabs(a.data[i] - b.data[i]) / denom);
    }
    return worst;
}

}  // namespace

TEST_CASE("time_embedding: t=0 gives zeros then ones") {
    auto e = time_embedding(0.0, 8);
    for (int k = 0; k < 4; ++k) CHECK(e[static_cast<size_t>(k)] == 0.0);
    for (int k = 4; k < 8; ++k) CHECK(e[static_cast<size_t>(k)] == 1.0);
    CHECK_THROWS_AS(time_embedding(0.5, 7), std::invalid_argument);
}

TEST_CASE("time_embedding: norm independent of t") {
    for (double t : {0.0, 0.3, 0.77, 1.0}) {
        auto e = time_embedding(t, 16);
        double n = 0.0;
        for (double v : e) n += v * v;
        CHECK(std::fabs(std::sqrt(n) - std::sqrt(8.0)) < 1e-12);
    }
}

TEST_CASE("time_embedding: distinct times give distinct embeddings") {
    auto a = time_embedding(0.1, 16);
    auto b = time_embedding(0.9, 16);
    double biggest = 0.0;
    for (size_t i = 0; i < a.size(); ++i) biggest = std::max(biggest, std::fabs(a[i] - b[i]));
    CHECK(biggest > 1e-3);
}

TEST_CASE("forward: deterministic and shape-preserving") {
    ModelState s = init_model(tiny_config(), 3);
    Rng rng(8);
    Tensor x = rng.gaussian_tensor({2, 1, 8, 8});
    Tensor c = rng.gaussian_tensor({2, 2, 8, 8});
    Tensor a = model_forward(s, x, {0.2, 0.8}, c);
    Tensor b = model_forward(s, x, {0.2, 0.8}, c);
    CHECK(a.shape == std::vector<int>{2, 1, 8, 8});
    CHECK(a.data == b.data);
}

TEST_CASE("forward: rejects wrong condition channel count") {
    ModelState s = init_model(tiny_config(), 3);  // expects 2 channels (SRM)
    Rng rng(8);
    Tensor x = rng.gaussian_tensor({1, 1, 8, 8});
    Tensor drm_cond = rng.gaussian_tensor({1, 3, 8, 8});
    CHECK_THROWS_AS(model_forward(s, x, {0.5}, drm_cond), std::invalid_argument);
}

TEST_CASE("forward: rejects indivisible spatial size") {
    ModelConfig cfg = tiny_config();
    cfg.depth = 2;
    ModelState s = init_model(cfg, 3);
    Rng rng(8);
    CHECK_THROWS_AS(
        model_forward(s, rng.gaussian_tensor({1, 1, 6, 6}), {0.5}, rng.gaussian_tensor({1, 2, 6, 6})),
        std::invalid_argument);
}

TEST_CASE("condition stem: zero condition gives the bias pattern across batch") {
    ModelState s = init_model(tiny_config(), 5);
    s.find("cond_stem.b").data = {0.1, -0.2, 0.3, 0.4};
    Tape tape;
    ModelForward fw(tape, s);
    int stem = tape.add_channel_bias(
        tape.conv2d(tape.leaf(Tensor({2, 2, 8, 8})), fw.node_of("cond_stem.w"), 1, 1),
        fw.node_of("cond_stem.b"));
    const Tensor& v = tape.value(stem);
    for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 4; ++c)
            for (int h = 0; h < 8; ++h)
                for (int w = 0; w < 8; ++w)
                    CHECK(v.at(b, c, h, w) == s.find("cond_stem.b").data[static_cast<size_t>(c)]);
}

TEST_CASE("forward: permuting batch order permutes outputs identically") {
    ModelState s = init_model(tiny_config(), 7);
    Rng rng(9);
    Tensor x = rng.gaussian_tensor({2, 1, 8, 8});
    Tensor c = rng.gaussian_tensor({2, 2, 8, 8});
    Tensor out = model_forward(s, x, {0.3, 0.6}, c);

    // swap the two batch rows
    auto swap_rows = [](const Tensor& t) {
        Tensor r = t;
        size_t half = t.data.size() / 2;
        std::copy(t.data.begin() + static_cast<long>(half), t.data.end(), r.data.begin());
        std::copy(t.data.begin(), t.data.begin() + static_cast<long>(half),
                  r.data.begin() + static_cast<long>(half));
        return r;
    };
    Tensor out_sw = model_forward(s, swap_rows(x), {0.6, 0.3}, swap_rows(c));
    CHECK(out_sw.data == swap_rows(out).data);
}

TEST_CASE("spatial attention: zero features and zero parameters give gate 0.5, output 0") {
    ModelState s = init_model(tiny_config(), 11);
    for (auto& v : s.find("sa_gate.w").data) v = 0.0;
    Tape tape;
    ModelForward fw(tape, s);
    int features = tape.leaf(Tensor({1, 4, 8, 8}));
    int cond_features = tape.leaf(Tensor({1, 4, 8, 8}));
    int out = fw.spatial_attention(features, cond_features);
    for (double v : tape.value(out).data) CHECK(v == 0.0);
}

TEST_CASE("spatial attention: output elementwise bounded by input") {
    ModelState s = init_model(tiny_config(), 13);
    Rng rng(14);
    Tape tape;
    ModelForward fw(tape, s);
    Tensor f = rng.gaussian_tensor({1, 4, 8, 8});
    int out = fw.spatial_attention(tape.leaf(f), tape.leaf(rng.gaussian_tensor({1, 4, 8, 8})));
    const Tensor& o = tape.value(out);
    for (size_t i = 0; i < o.data.size(); ++i)
        CHECK(std::fabs(o.data[i]) <= std::fabs(f.data[i]));
}

TEST_CASE("spatial attention: config flag removes the module") {
    ModelConfig with = tiny_config();
    ModelConfig without = tiny_config();
    without.use_spatial_attention = false;
    ModelState a = init_model(with, 17);
    ModelState b = init_model(without, 17);
    CHECK(count_parameters(a) == count_parameters(b) + 2 * 7 * 7 + 1);
}

TEST_CASE("count_parameters: ordering and analytic cases") {
    ModelState lite = init_model(ModelConfig::lite(), 1);
    ModelState full = init_model(ModelConfig::full(), 1);
    CHECK(count_parameters(lite) < count_parameters(full));

    ModelState tiny;
    tiny.params.emplace_back("w", Tensor({1, 1, 1, 1}));
    tiny.params.emplace_back("b", Tensor({1}));
    CHECK(count_parameters(tiny) == 2);

    ModelConfig c1 = tiny_config();
    c1.depth = 1;
    ModelConfig c2 = c1;
    c2.base_channels = 8;
    long long p1 = count_parameters(init_model(c1, 1));
    long long p2 = count_parameters(init_model(c2, 1));
    CHECK(p2 > 3 * p1);
    CHECK(p2 < 5 * p1);
}

TEST_CASE("gradients: full check on a tiny config matches finite differences") {
    ModelState s = init_model(tiny_config(), 19);
    Rng rng(20);
    Tensor x = rng.gaussian_tensor({1, 1, 8, 8});
    Tensor cond = rng.gaussian_tensor({1, 2, 8, 8});
    std::vector<double> tv{0.37};

    auto loss_of = [&](const ModelState& st) {
        Tape tape;
        ModelForward fw(tape, st);
        int out = fw.run(x, tv, cond);
        return tape.value(tape.mean(tape.mul(out, out))).data[0];
    };

    Tape tape;
    ModelForward fw(tape, s, false, true);
    int out = fw.run(x, tv, cond);
    auto grads = tape.backward(tape.mean(tape.mul(out, out)));
    auto ids = fw.param_node_ids(s.params);

    for (size_t p = 0; p < s.params.size(); ++p) {
        ModelState pert = s;
        Tensor fd = finite_difference_grad(
            [&](const Tensor& v) {
                pert.params[p].second = v;
                return loss_of(pert);
            },
            s.params[p].second, 1e-5);
        INFO("parameter " << s.params[p].first);
        CHECK(max_rel_err(grads[static_cast<size_t>(ids[p])], fd) < 1e-3);
    }
}

TEST_CASE("gradients: every parameter gets a nonzero gradient at initialization") {
    ModelState s = init_model(tiny_config(), 23);
    Rng rng(24);
    Tape tape;
    ModelForward fw(tape, s, false, true);
    int out = fw.run(rng.gaussian_tensor({2, 1, 8, 8}), {0.25, 0.75},
                     rng.gaussian_tensor({2, 2, 8, 8}));
    auto grads = tape.backward(tape.mean(tape.mul(out, out)));
    auto ids = fw.param_node_ids(s.params);
    for (size_t p = 0; p < s.params.size(); ++p) {
        double biggest = 0.0;
        for (double v : grads[static_cast<size_t>(ids[p])].data)
            biggest = std::max(biggest, std::fabs(v));
        INFO("parameter " << s.params[p].first);
        CHECK(biggest > 0.0);
    }
}

TEST_CASE("checkpoint: round-trips parameters, EMA and config") {
    namespace fs = std::filesystem;
    ModelState s = init_model(tiny_config(), 29);
    Rng rng(30);
    for (auto& [name, t] : s.ema)
        for (auto& v : t.data) v += 0.01 * rng.gaussian();

    fs::path path = fs::temp_directory_path() / "radioflow_test_ck.rfck";
    save_checkpoint(path.string(), s);
    ModelState back = load_checkpoint(path.string());
    fs::remove(path);

    CHECK(back.config.base_channels == s.config.base_channels);
    CHECK(back.config.depth == s.config.depth);
    CHECK(back.config.cond_channels == s.config.cond_channels);
    REQUIRE(back.params.size() == s.params.size());
    for (size_t i = 0; i < s.params.size(); ++i) {
        CHECK(back.params[i].first == s.params[i].first);
        CHECK(back.params[i].second.data == s.params[i].second.data);
        CHECK(back.ema[i].second.data == s.ema[i].second.data);
    }
}
