#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace radioflow {

/// Minimal 8-bit grayscale PNG codec (non-interlaced). Enough for dataset
/// fixtures and visualization output; not a general-purpose image library.
namespace png {

struct Gray8 {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> pixels;  // row-major
};

namespace detail {

inline void put_u32(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(static_cast<uint8_t>(x >> 24));
    v.push_back(static_cast<uint8_t>(x >> 16));
    v.push_back(static_cast<uint8_t>(x >> 8));
    v.push_back(static_cast<uint8_t>(x));
}

inline uint32_t get_u32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

inline void chunk(std::vector<uint8_t>& out, const char type[4],
                  const std::vector<uint8_t>& payload) {
    put_u32(out, static_cast<uint32_t>(payload.size()));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    uint32_t crc = static_cast<uint32_t>(
        crc32(0, out.data() + start, static_cast<uInt>(out.size() - start)));
    put_u32(out, crc);
}

inline int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace detail

inline void write_gray8(const std::string& path, const Gray8& img) {
    using namespace detail;
    if (static_cast<long long>(img.pixels.size()) !=
        static_cast<long long>(img.width) * img.height)
        throw std::invalid_argument("write_gray8: pixel buffer size mismatch");

    // raw scanlines with filter byte 0
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(img.height) * (img.width + 1));
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), img.pixels.begin() + static_cast<long>(y) * img.width,
                   img.pixels.begin() + static_cast<long>(y + 1) * img.width);
    }
    uLongf comp_size = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> comp(comp_size);
    if (compress2(comp.data(), &comp_size, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("write_gray8: deflate failed");
    comp.resize(comp_size);

    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<uint8_t> ihdr;
    put_u32(ihdr, static_cast<uint32_t>(img.width));
    put_u32(ihdr, static_cast<uint32_t>(img.height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(0);  // grayscale
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter method
    ihdr.push_back(0);  // non-interlaced
    chunk(out, "IHDR", ihdr);
    chunk(out, "IDAT", comp);
    chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_gray8: cannot open " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("write_gray8: write failed for " + path);
}

inline Gray8 read_gray8(const std::string& path) {
    using namespace detail;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_gray8: cannot open " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0)
        throw std::runtime_error("read_gray8: not a PNG file: " + path);

    Gray8 img;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    int bit_depth = 0, color_type = -1;
    while (pos + 8 <= buf.size()) {
        uint32_t len = get_u32(&buf[pos]);
        if (pos + 12 + len > buf.size())
            throw std::runtime_error("read_gray8: truncated chunk in " + path);
        std::string type(reinterpret_cast<const char*>(&buf[pos + 4]), 4);
        const uint8_t* payload = &buf[pos + 8];
        if (type == "IHDR") {
            img.width = static_cast<int>(get_u32(payload));
            img.height = static_cast<int>(get_u32(payload + 4));
            bit_depth = payload[8];
            color_type = payload[9];
            if (payload[12] != 0)
                throw std::runtime_error("read_gray8: interlaced PNG unsupported: " + path);
        } else if (type == "IDAT") {
            idat.insert(idat.end(), payload, payload + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (bit_depth != 8 || color_type != 0)
        throw std::runtime_error("read_gray8: expected 8-bit grayscale: " + path);

    size_t raw_size = static_cast<size_t>(img.height) * (img.width + 1);
    std::vector<uint8_t> raw(raw_size);
    uLongf dst = static_cast<uLongf>(raw_size);
    if (uncompress(raw.data(), &dst, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        dst != raw_size)
        throw std::runtime_error("read_gray8: inflate failed for " + path);

    img.pixels.assign(static_cast<size_t>(img.width) * img.height, 0);
    int W = img.width;
    for (int y = 0; y < img.height; ++y) {
        const uint8_t* row = &raw[static_cast<size_t>(y) * (W + 1)];
        uint8_t filter = row[0];
        uint8_t* cur = &img.pixels[static_cast<size_t>(y) * W];
        const uint8_t* up = y > 0 ? &img.pixels[static_cast<size_t>(y - 1) * W] : nullptr;
        for (int x = 0; x < W; ++x) {
            int a = x > 0 ? cur[x - 1] : 0;
            int b = up ? up[x] : 0;
            int c = (x > 0 && up) ? up[x - 1] : 0;
            int v = row[x + 1];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default:
                    throw std::runtime_error("read_gray8: bad filter type in " + path);
            }
            cur[x] = static_cast<uint8_t>(v & 0xff);
        }
    }
    return img;
}

}  // namespace png
}  // namespace radioflow
