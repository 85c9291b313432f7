#include "bevpred/imageio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "bevpred/serialize.hpp"

namespace bevpred {

void write_pgm16(const std::string& path, const std::vector<uint16_t>& pix, int w, int h) {
    if (pix.size() != static_cast<size_t>(w) * h)
        throw std::invalid_argument("write_pgm16: pixel count mismatch");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_pgm16: cannot open " + path);
    f << "P5\n" << w << " " << h << "\n65535\n";
    for (uint16_t v : pix) {
        const char bytes[2] = {static_cast<char>(v >> 8), static_cast<char>(v & 0xFF)};
        f.write(bytes, 2);
    }
    if (!f) throw std::runtime_error("write_pgm16: write failed for " + path);
}

namespace {

void put_be32(std::string& s, uint32_t v) {
    s.push_back(static_cast<char>(v >> 24));
    s.push_back(static_cast<char>((v >> 16) & 0xFF));
    s.push_back(static_cast<char>((v >> 8) & 0xFF));
    s.push_back(static_cast<char>(v & 0xFF));
}

void append_chunk(std::string& out, const char type[4], const std::string& data) {
    put_be32(out, static_cast<uint32_t>(data.size()));
    out.append(type, 4);
    out.append(data);
    uint32_t c = io::crc32(type, 4);
    c = io::crc32(data.data(), data.size(), c);
    put_be32(out, io::crc32_final(c));
}

uint32_t adler32(const std::string& data) {
    uint32_t a = 1, b = 0;
    for (unsigned char ch : data) {
        a = (a + ch) % 65521u;
        b = (b + a) % 65521u;
    }
    return (b << 16) | a;
}

}  // namespace

void write_png_rgb(const std::string& path, const std::vector<uint8_t>& rgb, int w, int h) {
    if (rgb.size() != static_cast<size_t>(w) * h * 3)
        throw std::invalid_argument("write_png_rgb: pixel count mismatch");
    std::string out("\x89PNG\r\n\x1a\n", 8);

    std::string ihdr;
    put_be32(ihdr, static_cast<uint32_t>(w));
    put_be32(ihdr, static_cast<uint32_t>(h));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // truecolor
    ihdr.push_back(0);   // deflate
    ihdr.push_back(0);   // adaptive filters
    ihdr.push_back(0);   // no interlace
    append_chunk(out, "IHDR", ihdr);

    // raw scanlines, filter byte 0 per row
    std::string raw;
    raw.reserve(static_cast<size_t>(h) * (static_cast<size_t>(w) * 3 + 1));
    for (int y = 0; y < h; y++) {
        raw.push_back(0);
        raw.append(reinterpret_cast<const char*>(rgb.data() + static_cast<size_t>(y) * w * 3),
                   static_cast<size_t>(w) * 3);
    }

    // zlib wrapper with stored deflate blocks
    std::string idat;
    idat.push_back(0x78);
    idat.push_back(0x01);
    size_t off = 0;
    while (off < raw.size() || raw.empty()) {
        const size_t n = std::min<size_t>(65535, raw.size() - off);
        const bool last = off + n == raw.size();
        idat.push_back(last ? 1 : 0);
        idat.push_back(static_cast<char>(n & 0xFF));
        idat.push_back(static_cast<char>(n >> 8));
        idat.push_back(static_cast<char>(~n & 0xFF));
        idat.push_back(static_cast<char>((~n >> 8) & 0xFF));
        idat.append(raw, off, n);
        off += n;
        if (last) break;
    }
    put_be32(idat, adler32(raw));
    append_chunk(out, "IDAT", idat);
    append_chunk(out, "IEND", "");

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_png_rgb: cannot open " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("write_png_rgb: write failed for " + path);
}

void write_heatmap_pgm(const std::string& path, const Tensor& map, double lo, double hi) {
    if (map.rank() != 2) throw ShapeError("write_heatmap_pgm expects [H,W]");
    const int h = static_cast<int>(map.dim(0)), w = static_cast<int>(map.dim(1));
    std::vector<uint16_t> pix(static_cast<size_t>(h) * w);
    const double span = hi > lo ? hi - lo : 1.0;
    for (size_t i = 0; i < pix.size(); i++) {
        double u = (static_cast<double>(map.data()[i]) - lo) / span;
        u = std::clamp(u, 0.0, 1.0);
        pix[i] = static_cast<uint16_t>(std::lround(u * 65535.0));
    }
    write_pgm16(path, pix, w, h);
}

void write_label_png(const std::string& path, const std::vector<int>& labels, int h, int w) {
    if (labels.size() != static_cast<size_t>(h) * w)
        throw std::invalid_argument("write_label_png: label count mismatch");
    std::vector<uint8_t> rgb(labels.size() * 3, 0);
    for (size_t i = 0; i < labels.size(); i++) {
        const int lbl = labels[i];
        if (lbl == 0) continue;  // background stays black
        // splitmix-style hash keeps label colors stable and well separated
        uint64_t x = static_cast<uint64_t>(lbl) * 0x9E3779B97F4A7C15ull;
        x ^= x >> 30;
        x *= 0xBF58476D1CE4E5B9ull;
        x ^= x >> 27;
        rgb[3 * i] = static_cast<uint8_t>(64 + (x & 0xBF));
        rgb[3 * i + 1] = static_cast<uint8_t>(64 + ((x >> 8) & 0xBF));
        rgb[3 * i + 2] = static_cast<uint8_t>(64 + ((x >> 16) & 0xBF));
    }
    write_png_rgb(path, rgb, w, h);
}

}  // namespace bevpred
