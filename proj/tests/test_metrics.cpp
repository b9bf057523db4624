#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "radioflow/metrics.hpp"
#include "ssim_reference.hpp"

using namespace radioflow;

TEST_CASE("nmse: trivial values and loop oracle") {
    Rng rng(3);
    Tensor t = rng.gaussian_tensor({8, 8});
    CHECK(nmse(t, t) == 0.0);
    CHECK(nmse(Tensor({8, 8}), t) == 1.0);
    CHECK_THROWS_AS(nmse(t, Tensor({8, 8})), std::domain_error);
    CHECK_THROWS_AS(nmse(t, Tensor({4, 4})), std::invalid_argument);

    Tensor p = rng.gaussian_tensor({8, 8});
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < t.data.size(); ++i) {
        num += (p.data[i] - t.data[i]) * (p.data[i] - t.data[i]);
        den += t.data[i] * t.data[i];
    }
    CHECK(std::fabs(nmse(p, t) - num / den) < 1e-12);
}

TEST_CASE("nmse: quadratic in the error scale") {
    Rng rng(5);
    Tensor t = rng.gaussian_tensor({6, 6});
    Tensor e = rng.gaussian_tensor({6, 6});
    auto shifted = [&](double k) {
        Tensor p = t;
        for (size_t i = 0; i < p.data.size(); ++i) p.data[i] += k * e.data[i];
        return p;
    };
    double base = nmse(shifted(1.0), t);
    CHECK(std::fabs(nmse(shifted(3.0), t) - 9.0 * base) < 1e-10);
}

TEST_CASE("rmse: trivial values and loop oracle") {
    Rng rng(7);
    Tensor t = rng.gaussian_tensor({5, 5});
    CHECK(rmse(t, t) == 0.0);
    Tensor off = t;
    for (auto& v : off.data) v += 0.1;
    CHECK(std::fabs(rmse(off, t) - 0.1) < 1e-12);

    Tensor p = rng.gaussian_tensor({5, 5});
    double s = 0.0;
    for (size_t i = 0; i < t.data.size(); ++i)
        s += (p.data[i] - t.data[i]) * (p.data[i] - t.data[i]);
    CHECK(std::fabs(rmse(p, t) - std::sqrt(s / 25.0)) < 1e-12);
}

TEST_CASE("psnr: plug-in value, cap, and rmse identity") {
    Tensor t({2, 2});
    Tensor p({2, 2}, {0.1, 0.1, 0.1, 0.1});  // mse 0.01
    CHECK(std::fabs(psnr(p, t) - 20.0) < 1e-12);
    CHECK(psnr(t, t) == 99.0);

    Rng rng(11);
    Tensor a = rng.gaussian_tensor({8, 8});
    Tensor b = rng.gaussian_tensor({8, 8});
    CHECK(std::fabs(psnr(a, b) - (-20.0 * std::log10(rmse(a, b)))) < 1e-9);
}

TEST_CASE("ssim: identical, negated, symmetric") {
    Rng rng(13);
    Tensor a({16, 16});
    for (auto& v : a.data) v = rng.uniform();
    CHECK(std::fabs(ssim(a, a) - 1.0) < 1e-12);

    Tensor neg = a;
    for (auto& v : neg.data) v = 1.0 - v;
    CHECK(ssim(a, neg) < 1.0);

    Tensor b({16, 16});
    for (auto& v : b.data) v = rng.uniform();
    CHECK(std::fabs(ssim(a, b) - ssim(b, a)) < 1e-12);

    CHECK_THROWS_AS(ssim(Tensor({8, 8}), Tensor({8, 8})), std::domain_error);
}

TEST_CASE("ssim: matches the direct-convolution reference") {
    Rng rng(17);
    for (int trial = 0; trial < 3; ++trial) {
        Tensor a({16, 16}), b({16, 16});
        for (auto& v : a.data) v = rng.uniform();
        for (auto& v : b.data) v = rng.uniform();
        CHECK(std::fabs(ssim(a, b) - ssim_ref::ssim(a, b)) < 1e-9);
    }
}

namespace {

Dataset tiny_dataset(int n, uint64_t seed) {
    Dataset d;
    d.mode = DatasetMode::SRM;
    d.H = 16;
    d.W = 16;
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        DatasetSample s;
        s.condition = rng.gaussian_tensor({2, 16, 16});
        s.target = Tensor({16, 16});
        for (auto& v : s.target.data) v = rng.uniform();
        d.samples.push_back(std::move(s));
    }
    return d;
}

}  // namespace

TEST_CASE("evaluate_maps: perfect predictions, ordering, aggregate") {
    Dataset d = tiny_dataset(3, 19);
    std::vector<Tensor> preds;
    for (const auto& s : d.samples) preds.push_back(s.target);
    EvalReport rep = evaluate_maps(preds, d);
    REQUIRE(rep.rows.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(rep.rows[i].sample_id == std::to_string(i));
        CHECK(rep.rows[i].nmse == 0.0);
        CHECK(std::fabs(rep.rows[i].ssim - 1.0) < 1e-12);
        CHECK(rep.rows[i].psnr_db == 99.0);
    }
    CHECK(rep.aggregate.sample_id == "aggregate");
    CHECK(rep.aggregate.nmse == 0.0);

    // aggregate is the arithmetic mean of the rows
    preds[0] = Tensor({16, 16});
    EvalReport rep2 = evaluate_maps(preds, d);
    double mean_nmse = (rep2.rows[0].nmse + rep2.rows[1].nmse + rep2.rows[2].nmse) / 3.0;
    CHECK(std::fabs(rep2.aggregate.nmse - mean_nmse) < 1e-12);
}

TEST_CASE("evaluate_constant: mean-predictor baseline on its own mean") {
    Dataset d = tiny_dataset(4, 23);
    Tensor mean = mean_target(d);
    EvalReport rep = evaluate_constant(mean, d);
    CHECK(rep.rows.size() == 4);
    for (const auto& r : rep.rows) CHECK(r.nmse > 0.0);
}

TEST_CASE("evaluate: model-driven report has the right shape") {
    Dataset d = tiny_dataset(2, 29);
    ModelConfig cfg;
    cfg.base_channels = 4;
    cfg.depth = 1;
    cfg.time_embed_dim = 4;
    ModelState s = init_model(cfg, 31);
    SampleConfig sc;
    EvalReport rep = evaluate(s, d, sc);
    REQUIRE(rep.rows.size() == 2);
    for (const auto& r : rep.rows) {
        CHECK(r.nmse >= 0.0);
        CHECK(r.ssim >= -1.0);
        CHECK(r.ssim <= 1.0);
    }
}

TEST_CASE("EvalReport: CSV schema") {
    Dataset d = tiny_dataset(2, 37);
    std::vector<Tensor> preds;
    for (const auto& s : d.samples) preds.push_back(s.target);
    EvalReport rep = evaluate_maps(preds, d);

    auto path = std::filesystem::temp_directory_path() / "radioflow_eval_test.csv";
    rep.write_csv(path.string());
    std::ifstream f(path);
    std::string line;
    std::getline(f, line);
    CHECK(line == "sample_id,nmse,psnr_db,rmse,ssim");
    int n = 0;
    std::string last;
    while (std::getline(f, line))
        if (!line.empty()) {
            last = line;
            ++n;
        }
    CHECK(n == 3);  // 2 samples + aggregate
    CHECK(last.rfind("aggregate,", 0) == 0);
    std::filesystem::remove(path);
}
