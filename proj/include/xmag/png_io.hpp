#pragma once

#include <zlib.h>

#include <cstring>
#include <filesystem>

#include "xmag/image.hpp"

// Minimal PNG reader/writer for 8-bit RGB, the only pixel format this
// project stores. The writer emits filter type 0 scanlines; the reader
// handles all five standard filters so externally produced RGB8 PNGs load
// too. Interlaced, paletted, and non-8-bit files are rejected.

namespace xmag::png {

namespace detail {

inline void put_u32(std::string& s, uint32_t v) {
    s.push_back(static_cast<char>((v >> 24) & 0xff));
    s.push_back(static_cast<char>((v >> 16) & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
    s.push_back(static_cast<char>(v & 0xff));
}

inline uint32_t get_u32(const unsigned char* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

inline void append_chunk(std::string& out, const char type[4], const std::string& payload) {
    put_u32(out, static_cast<uint32_t>(payload.size()));
    const size_t crc_start = out.size();
    out.append(type, 4);
    out.append(payload);
    const uint32_t crc = static_cast<uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(out.data() + crc_start), static_cast<uInt>(out.size() - crc_start)));
    put_u32(out, crc);
}

inline std::string zlib_compress(const std::string& raw, int level) {
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::string out(bound, '\0');
    if (::compress2(reinterpret_cast<Bytef*>(out.data()), &bound,
                    reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                    level) != Z_OK)
        throw IoError("zlib compress failed");
    out.resize(bound);
    return out;
}

inline std::string zlib_decompress(const std::string& comp, size_t expected) {
    std::string out(expected, '\0');
    uLongf dest_len = static_cast<uLongf>(expected);
    if (::uncompress(reinterpret_cast<Bytef*>(out.data()), &dest_len,
                     reinterpret_cast<const Bytef*>(comp.data()), static_cast<uLong>(comp.size())) != Z_OK ||
        dest_len != expected)
        throw IoError("zlib decompress failed or size mismatch");
    return out;
}

inline int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace detail

inline std::string encode(const Image& img) {
    if (img.h <= 0 || img.w <= 0) throw InvariantError("png encode: empty image");
    std::string out("\x89PNG\r\n\x1a\n", 8);

    std::string ihdr;
    detail::put_u32(ihdr, static_cast<uint32_t>(img.w));
    detail::put_u32(ihdr, static_cast<uint32_t>(img.h));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type: truecolor RGB
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter method
    ihdr.push_back(0);   // no interlace
    detail::append_chunk(out, "IHDR", ihdr);

    const size_t stride = static_cast<size_t>(img.w) * 3;
    std::string raw;
    raw.reserve((stride + 1) * img.h);
    for (int y = 0; y < img.h; ++y) {
        raw.push_back('\0');  // filter 0
        raw.append(reinterpret_cast<const char*>(&img.px[y * stride]), stride);
    }
    detail::append_chunk(out, "IDAT", detail::zlib_compress(raw, 1));
    detail::append_chunk(out, "IEND", "");
    return out;
}

inline Image decode(const std::string& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), "\x89PNG\r\n\x1a\n", 8) != 0)
        throw IoError("not a PNG file");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    size_t off = 8;
    int w = 0, h = 0;
    bool have_ihdr = false;
    std::string idat;
    while (off + 12 <= bytes.size()) {
        const uint32_t len = detail::get_u32(p + off);
        if (off + 12 + len > bytes.size()) throw IoError("truncated PNG chunk");
        const char* type = bytes.data() + off + 4;
        const unsigned char* payload = p + off + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw IoError("bad IHDR");
            w = static_cast<int>(detail::get_u32(payload));
            h = static_cast<int>(detail::get_u32(payload + 4));
            if (payload[8] != 8 || payload[9] != 2 || payload[12] != 0)
                throw IoError("unsupported PNG format (need 8-bit RGB, non-interlaced)");
            have_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.append(bytes.data() + off + 8, len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        off += 12 + len;
    }
    if (!have_ihdr || w <= 0 || h <= 0) throw IoError("missing IHDR");

    const size_t stride = static_cast<size_t>(w) * 3;
    const std::string raw = detail::zlib_decompress(idat, (stride + 1) * h);

    Image img(h, w);
    std::vector<uint8_t> prev(stride, 0);
    for (int y = 0; y < h; ++y) {
        const auto* row = reinterpret_cast<const unsigned char*>(raw.data() + y * (stride + 1));
        const int filter = row[0];
        uint8_t* cur = &img.px[y * stride];
        for (size_t x = 0; x < stride; ++x) {
            const int rx = row[1 + x];
            const int a = x >= 3 ? cur[x - 3] : 0;
            const int b = prev[x];
            const int c = x >= 3 ? prev[x - 3] : 0;
            int v = 0;
            switch (filter) {
                case 0: v = rx; break;
                case 1: v = rx + a; break;
                case 2: v = rx + b; break;
                case 3: v = rx + (a + b) / 2; break;
                case 4: v = rx + detail::paeth(a, b, c); break;
                default: throw IoError("bad PNG filter type");
            }
            cur[x] = static_cast<uint8_t>(v & 0xff);
        }
        std::copy(cur, cur + stride, prev.begin());
    }
    return img;
}

inline void write(const std::filesystem::path& path, const Image& img) {
    write_file(path, encode(img));
}

inline Image read(const std::filesystem::path& path) { return decode(read_file(path)); }

}  // namespace xmag::png
