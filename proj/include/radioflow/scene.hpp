#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "png.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace radioflow {

/// Conditioning input: building occupancy, transmitter location, optional
/// vehicle layer. Grids are H x W, row-major, 1 = occupied.
struct RadioScene {
    int H = 0, W = 0;
    std::vector<uint8_t> buildings;
    std::vector<uint8_t> vehicles;  // empty when the scene has no vehicle layer
    int tx_r = 0, tx_c = 0;
    double resolution_m = 1.0;

    bool building_at(int r, int c) const { return buildings[static_cast<size_t>(r) * W + c] != 0; }
    bool vehicle_at(int r, int c) const {
        return !vehicles.empty() && vehicles[static_cast<size_t>(r) * W + c] != 0;
    }
    bool has_vehicles() const { return !vehicles.empty(); }

    Tensor tx_mask() const {
        Tensor m({H, W});
        m.data[static_cast<size_t>(tx_r) * W + tx_c] = 1.0;
        return m;
    }
};

struct SceneGenParams {
    int size = 32;            // H == W
    int n_buildings = 6;
    int building_min = 4;     // rectangle side, cells
    int building_max = 8;
    int vehicles_min = 0;
    int vehicles_max = 0;
    double resolution_m = 1.0;
};

/// Log-distance pathloss constants for the ground-truth oracle.
struct PathlossParams {
    double pl0_db = 40.0;
    double exponent = 2.5;
    double wall_db = 12.0;
    double vehicle_db = 4.0;
    double clamp_lo_db = 40.0;
    double clamp_hi_db = 140.0;
};

inline RadioScene generate_scene(const SceneGenParams& p, uint64_t seed) {
    if (p.size < 16) throw std::invalid_argument("generate_scene: grid size must be >= 16");
    if (p.building_max > p.size || p.building_min > p.building_max)
        throw std::invalid_argument("generate_scene: bad building size range");

    RadioScene s;
    s.H = s.W = p.size;
    s.resolution_m = p.resolution_m;
    s.buildings.assign(static_cast<size_t>(s.H) * s.W, 0);

    // Buildings and transmitter come from one stream, vehicles from another,
    // so SRM/DRM datasets built from the same seed share static geometry.
    Rng geo(Rng::derive(seed, 1));
    for (int i = 0; i < p.n_buildings; ++i) {
        int bh = geo.uniform_int(p.building_min, p.building_max);
        int bw = geo.uniform_int(p.building_min, p.building_max);
        int r0 = geo.uniform_int(0, s.H - bh);
        int c0 = geo.uniform_int(0, s.W - bw);
        for (int r = r0; r < r0 + bh; ++r)
            for (int c = c0; c < c0 + bw; ++c)
                s.buildings[static_cast<size_t>(r) * s.W + c] = 1;
    }

    std::vector<int> free_cells;
    for (int i = 0; i < s.H * s.W; ++i)
        if (!s.buildings[static_cast<size_t>(i)]) free_cells.push_back(i);
    if (free_cells.empty())
        throw std::runtime_error("generate_scene: no free cell left for the transmitter");
    int tx = free_cells[static_cast<size_t>(geo.uniform_int(0, static_cast<int>(free_cells.size()) - 1))];
    s.tx_r = tx / s.W;
    s.tx_c = tx % s.W;

    if (p.vehicles_max > 0) {
        Rng veh(Rng::derive(seed, 2));
        s.vehicles.assign(static_cast<size_t>(s.H) * s.W, 0);
        int count = veh.uniform_int(p.vehicles_min, p.vehicles_max);
        int placed = 0, attempts = 0;
        while (placed < count && attempts < count * 20) {
            ++attempts;
            int cell = veh.uniform_int(0, s.H * s.W - 1);
            if (s.buildings[static_cast<size_t>(cell)] || cell == tx ||
                s.vehicles[static_cast<size_t>(cell)])
                continue;
            s.vehicles[static_cast<size_t>(cell)] = 1;
            ++placed;
        }
    }
    return s;
}

namespace detail {

// t-interval (as a rational pair) where x0 + t*dx lies in [m, m+2].
// Coordinates are scaled by 2 so cell centers are odd integers.
struct Frac {
    long long num = 0, den = 1;  // den > 0
};

inline bool frac_le(const Frac& a, const Frac& b) { return a.num * b.den <= b.num * a.den; }

inline bool axis_interval(long long x0, long long dx, long long m, Frac& lo, Frac& hi) {
    if (dx == 0) {
        if (x0 < m || x0 > m + 2) return false;
        lo = {0, 1};
        hi = {1, 1};
        return true;
    }
    Frac a{m - x0, dx}, b{m + 2 - x0, dx};
    if (dx < 0) {
        a = {x0 - m, -dx};
        b = {x0 - m - 2, -dx};
        std::swap(a, b);
    }
    lo = a;
    hi = b;
    return true;
}

/// Closed segment vs closed cell square intersection, exact arithmetic.
inline bool segment_hits_cell(int r0, int c0, int r1, int c1, int cr, int cc) {
    long long x0 = 2LL * c0 + 1, y0 = 2LL * r0 + 1;
    long long x1 = 2LL * c1 + 1, y1 = 2LL * r1 + 1;
    long long dx = x1 - x0, dy = y1 - y0;
    Frac xlo, xhi, ylo, yhi;
    if (!axis_interval(x0, dx, 2LL * cc, xlo, xhi)) return false;
    if (!axis_interval(y0, dy, 2LL * cr, ylo, yhi)) return false;
    Frac lo = frac_le(xlo, ylo) ? ylo : xlo;
    Frac hi = frac_le(xhi, yhi) ? xhi : yhi;
    Frac zero{0, 1}, one{1, 1};
    if (frac_le(lo, zero)) lo = zero;
    if (frac_le(one, hi)) hi = one;
    return frac_le(lo, hi);
}

}  // namespace detail

/// Counts occupied cells strictly between the endpoints that the segment
/// between cell centers touches (supercover: corner contact counts, so a
/// diagonal wall cannot be slipped through).
inline std::pair<int, int> raycast_wall_crossings(const RadioScene& s, int r0, int c0, int r1,
                                                  int c1) {
    if (r0 < 0 || r0 >= s.H || c0 < 0 || c0 >= s.W || r1 < 0 || r1 >= s.H || c1 < 0 || c1 >= s.W)
        throw std::invalid_argument("raycast_wall_crossings: endpoint outside grid");
    int walls = 0, vehicles = 0;
    if (r0 == r1 && c0 == c1) return {0, 0};
    int rlo = std::min(r0, r1), rhi = std::max(r0, r1);
    int clo = std::min(c0, c1), chi = std::max(c0, c1);
    for (int r = rlo; r <= rhi; ++r)
        for (int c = clo; c <= chi; ++c) {
            if ((r == r0 && c == c0) || (r == r1 && c == c1)) continue;
            if (!s.building_at(r, c) && !s.vehicle_at(r, c)) continue;
            if (!detail::segment_hits_cell(r0, c0, r1, c1, r, c)) continue;
            if (s.building_at(r, c)) ++walls;
            if (s.vehicle_at(r, c)) ++vehicles;
        }
    return {walls, vehicles};
}

/// Raw pathloss grid in dB: log-distance law plus per-crossing attenuation.
/// Cells inside buildings are set to the clamp ceiling.
inline Tensor pathloss_oracle(const RadioScene& s, const PathlossParams& p = {}) {
    Tensor out({s.H, s.W});
    for (int r = 0; r < s.H; ++r)
        for (int c = 0; c < s.W; ++c) {
            double v;
            if (s.building_at(r, c)) {
                v = p.clamp_hi_db;
            } else {
                double d_cells = std::hypot(static_cast<double>(r - s.tx_r),
                                            static_cast<double>(c - s.tx_c));
                double d = std::max(d_cells, 1.0) * s.resolution_m;
                auto [bw, vw] = raycast_wall_crossings(s, s.tx_r, s.tx_c, r, c);
                v = p.pl0_db + 10.0 * p.exponent * std::log10(d) + p.wall_db * bw +
                    p.vehicle_db * vw;
                v = std::clamp(v, p.clamp_lo_db, p.clamp_hi_db);
            }
            out.data[static_cast<size_t>(r) * s.W + c] = v;
        }
    return out;
}

/// Affine, order-reversing normalization: 1 = strongest signal.
inline Tensor normalize_map(const Tensor& raw_db, double lo_db, double hi_db) {
    if (lo_db >= hi_db) throw std::invalid_argument("normalize_map: lo must be < hi");
    Tensor out = raw_db;
    for (auto& v : out.data) v = std::clamp((hi_db - v) / (hi_db - lo_db), 0.0, 1.0);
    return out;
}

// ---------------------------------------------------------------------------
// Dataset

enum class DatasetMode { SRM, DRM };

inline const char* mode_name(DatasetMode m) { return m == DatasetMode::SRM ? "srm" : "drm"; }

struct DatasetSample {
    Tensor condition;  // [C,H,W]
    Tensor target;     // [H,W], normalized to [0,1]
};

struct Dataset {
    DatasetMode mode = DatasetMode::SRM;
    int H = 0, W = 0;
    double lo_db = 0.0, hi_db = 0.0;
    std::string split;
    std::vector<uint64_t> seeds;
    SceneGenParams gen_params;
    std::vector<DatasetSample> samples;

    int cond_channels() const { return mode == DatasetMode::SRM ? 2 : 3; }
};

namespace detail {

inline void write_u16(std::ostream& o, uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    o.write(b, 2);
}
inline uint16_t read_u16(std::istream& i) {
    unsigned char b[2];
    i.read(reinterpret_cast<char*>(b), 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}
inline void write_f64s(std::ostream& o, const std::vector<double>& v) {
    static_assert(sizeof(double) == 8);
    o.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * 8));
}
inline void read_f64s(std::istream& i, std::vector<double>& v) {
    i.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
}

}  // namespace detail

constexpr uint16_t kSampleFileVersion = 1;

inline void write_sample_file(const std::string& path, const DatasetSample& s) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_sample_file: cannot open " + path);
    f.write("RFLW", 4);
    detail::write_u16(f, kSampleFileVersion);
    detail::write_u16(f, static_cast<uint16_t>(s.condition.dim(0)));
    detail::write_u16(f, static_cast<uint16_t>(s.condition.dim(1)));
    detail::write_u16(f, static_cast<uint16_t>(s.condition.dim(2)));
    detail::write_f64s(f, s.condition.data);
    detail::write_f64s(f, s.target.data);
    if (!f) throw std::runtime_error("write_sample_file: write failed for " + path);
}

inline DatasetSample read_sample_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_sample_file: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (std::string(magic, 4) != "RFLW")
        throw std::runtime_error("read_sample_file: bad magic in " + path);
    uint16_t version = detail::read_u16(f);
    if (version != kSampleFileVersion)
        throw std::runtime_error("read_sample_file: unsupported version in " + path);
    int C = detail::read_u16(f), H = detail::read_u16(f), W = detail::read_u16(f);
    DatasetSample s;
    s.condition = Tensor({C, H, W});
    s.target = Tensor({H, W});
    detail::read_f64s(f, s.condition.data);
    detail::read_f64s(f, s.target.data);
    if (!f) throw std::runtime_error("read_sample_file: truncated file " + path);
    return s;
}

inline Tensor scene_condition(const RadioScene& s, DatasetMode mode) {
    int C = mode == DatasetMode::SRM ? 2 : 3;
    Tensor c({C, s.H, s.W});
    for (int i = 0; i < s.H * s.W; ++i) {
        c.data[static_cast<size_t>(i)] = s.buildings[static_cast<size_t>(i)];
        if (mode == DatasetMode::DRM && !s.vehicles.empty())
            c.data[static_cast<size_t>(2 * s.H * s.W + i)] = s.vehicles[static_cast<size_t>(i)];
    }
    c.data[static_cast<size_t>(s.H * s.W + s.tx_r * s.W + s.tx_c)] = 1.0;
    return c;
}

inline nlohmann::json gen_params_json(const SceneGenParams& p) {
    return {{"size", p.size},
            {"n_buildings", p.n_buildings},
            {"building_min", p.building_min},
            {"building_max", p.building_max},
            {"vehicles_min", p.vehicles_min},
            {"vehicles_max", p.vehicles_max},
            {"resolution_m", p.resolution_m}};
}

inline SceneGenParams gen_params_from_json(const nlohmann::json& j) {
    SceneGenParams p;
    p.size = j.at("size");
    p.n_buildings = j.at("n_buildings");
    p.building_min = j.at("building_min");
    p.building_max = j.at("building_max");
    p.vehicles_min = j.at("vehicles_min");
    p.vehicles_max = j.at("vehicles_max");
    p.resolution_m = j.at("resolution_m");
    return p;
}

/// Builds train and test splits with disjoint scene seeds and writes them to
/// out_dir (one .rflw file per sample plus a JSON manifest per split). The
/// normalization thresholds are computed over the training split only.
inline std::pair<Dataset, Dataset> build_dataset(const SceneGenParams& params, int n_train,
                                                 int n_test, DatasetMode mode, uint64_t seed,
                                                 const std::string& out_dir = "") {
    if (n_train < 1 || n_test < 1)
        throw std::invalid_argument("build_dataset: need at least one sample per split");

    SceneGenParams p = params;
    if (mode == DatasetMode::SRM) p.vehicles_min = p.vehicles_max = 0;

    auto make_split = [&](const char* split, int n, uint64_t offset) {
        Dataset d;
        d.mode = mode;
        d.H = d.W = p.size;
        d.split = split;
        d.gen_params = p;
        std::vector<Tensor> raws;
        for (int i = 0; i < n; ++i) {
            uint64_t s = seed + offset + static_cast<uint64_t>(i);
            d.seeds.push_back(s);
            RadioScene scene = generate_scene(p, s);
            raws.push_back(pathloss_oracle(scene));
            DatasetSample samp;
            samp.condition = scene_condition(scene, mode);
            d.samples.push_back(std::move(samp));
        }
        return std::pair{d, raws};
    };

    auto [train, train_raws] = make_split("train", n_train, 0);
    auto [test, test_raws] = make_split("test", n_test, 1000000);

    double lo = train_raws[0].data[0], hi = lo;
    for (const auto& r : train_raws)
        for (double v : r.data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (lo >= hi) hi = lo + 1.0;  // degenerate all-equal split
    for (auto* split : {&train, &test}) {
        split->lo_db = lo;
        split->hi_db = hi;
    }
    for (size_t i = 0; i < train.samples.size(); ++i)
        train.samples[i].target = normalize_map(train_raws[i], lo, hi);
    for (size_t i = 0; i < test.samples.size(); ++i)
        test.samples[i].target = normalize_map(test_raws[i], lo, hi);

    if (!out_dir.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(out_dir);
        for (const Dataset* d : {&train, &test}) {
            nlohmann::json manifest = {
                {"mode", mode_name(d->mode)}, {"H", d->H},           {"W", d->W},
                {"lo_db", d->lo_db},          {"hi_db", d->hi_db},   {"seeds", d->seeds},
                {"gen_params", gen_params_json(d->gen_params)},      {"split", d->split},
            };
            std::ofstream mf(out_dir + "/manifest_" + d->split + ".json");
            if (!mf) throw std::runtime_error("build_dataset: cannot write manifest");
            mf << manifest.dump(2) << "\n";
            char name[64];
            for (size_t i = 0; i < d->samples.size(); ++i) {
                std::snprintf(name, sizeof(name), "/%s_%04zu.rflw", d->split.c_str(), i);
                write_sample_file(out_dir + name, d->samples[i]);
            }
        }
    }
    return {train, test};
}

inline Dataset load_dataset(const std::string& dir, const std::string& split) {
    std::ifstream mf(dir + "/manifest_" + split + ".json");
    if (!mf) throw std::runtime_error("load_dataset: missing manifest_" + split + ".json in " + dir);
    nlohmann::json manifest = nlohmann::json::parse(mf);
    Dataset d;
    d.mode = std::string(manifest.at("mode")) == "srm" ? DatasetMode::SRM : DatasetMode::DRM;
    d.H = manifest.at("H");
    d.W = manifest.at("W");
    d.lo_db = manifest.at("lo_db");
    d.hi_db = manifest.at("hi_db");
    d.split = manifest.at("split");
    d.seeds = manifest.at("seeds").get<std::vector<uint64_t>>();
    d.gen_params = gen_params_from_json(manifest.at("gen_params"));
    char name[64];
    for (size_t i = 0; i < d.seeds.size(); ++i) {
        std::snprintf(name, sizeof(name), "/%s_%04zu.rflw", split.c_str(), i);
        d.samples.push_back(read_sample_file(dir + name));
    }
    return d;
}

/// Loads a RadioMapSeer-layout directory:
///   root/png/buildings_complete/<map>.png   building occupancy (8-bit gray)
///   root/gain/DPM/<map>_<tx>.png            normalized gain per transmitter
///   root/antenna/<map>.json                 JSON array of [row, col] pairs
inline Dataset load_radiomapseer(const std::string& root) {
    namespace fs = std::filesystem;
    fs::path antenna_dir = fs::path(root) / "antenna";
    if (!fs::is_directory(antenna_dir))
        throw std::runtime_error("load_radiomapseer: missing directory " + antenna_dir.string());

    Dataset d;
    d.mode = DatasetMode::SRM;
    d.split = "radiomapseer";
    d.lo_db = 0.0;
    d.hi_db = 1.0;  // gain PNGs are already normalized

    std::vector<fs::path> maps;
    for (const auto& e : fs::directory_iterator(antenna_dir))
        if (e.path().extension() == ".json") maps.push_back(e.path());
    std::sort(maps.begin(), maps.end());

    for (const auto& ant_path : maps) {
        std::string map_id = ant_path.stem().string();
        std::ifstream af(ant_path);
        if (!af) throw std::runtime_error("load_radiomapseer: cannot open " + ant_path.string());
        nlohmann::json antennas = nlohmann::json::parse(af);

        fs::path bpath = fs::path(root) / "png" / "buildings_complete" / (map_id + ".png");
        if (!fs::exists(bpath))
            throw std::runtime_error("load_radiomapseer: missing file " + bpath.string());
        png::Gray8 bimg = png::read_gray8(bpath.string());
        d.H = bimg.height;
        d.W = bimg.width;

        for (size_t tx = 0; tx < antennas.size(); ++tx) {
            fs::path gpath =
                fs::path(root) / "gain" / "DPM" / (map_id + "_" + std::to_string(tx) + ".png");
            if (!fs::exists(gpath))
                throw std::runtime_error("load_radiomapseer: missing file " + gpath.string());
            png::Gray8 gimg = png::read_gray8(gpath.string());
            if (gimg.width != d.W || gimg.height != d.H)
                throw std::runtime_error("load_radiomapseer: size mismatch in " + gpath.string());

            DatasetSample s;
            s.condition = Tensor({2, d.H, d.W});
            s.target = Tensor({d.H, d.W});
            for (int i = 0; i < d.H * d.W; ++i) {
                s.condition.data[static_cast<size_t>(i)] = bimg.pixels[static_cast<size_t>(i)] / 255.0;
                s.target.data[static_cast<size_t>(i)] = gimg.pixels[static_cast<size_t>(i)] / 255.0;
            }
            int r = antennas[tx].at(0), c = antennas[tx].at(1);
            if (r < 0 || r >= d.H || c < 0 || c >= d.W)
                throw std::runtime_error("load_radiomapseer: transmitter outside grid in " +
                                         ant_path.string());
            s.condition.data[static_cast<size_t>(d.H * d.W + r * d.W + c)] = 1.0;
            d.samples.push_back(std::move(s));
        }
    }
    return d;
}

}  // namespace radioflow
