#pragma once

#include <cstdint>
#include <vector>

#include "xmag/common.hpp"

namespace xmag {

// Interleaved 8-bit RGB image.
struct Image {
    int h = 0, w = 0;
    std::vector<uint8_t> px;

    Image() = default;
    Image(int height, int width) : h(height), w(width), px(static_cast<size_t>(height) * width * 3, 0) {}

    uint8_t& at(int y, int x, int c) { return px[(static_cast<size_t>(y) * w + x) * 3 + c]; }
    uint8_t at(int y, int x, int c) const { return px[(static_cast<size_t>(y) * w + x) * 3 + c]; }

    bool operator==(const Image& o) const { return h == o.h && w == o.w && px == o.px; }
};

inline Image crop(const Image& src, int y0, int x0, int height, int width) {
    if (y0 < 0 || x0 < 0 || y0 + height > src.h || x0 + width > src.w)
        throw InvariantError("crop window out of bounds");
    Image out(height, width);
    for (int y = 0; y < height; ++y) {
        const uint8_t* s = &src.px[(static_cast<size_t>(y0 + y) * src.w + x0) * 3];
        std::copy(s, s + static_cast<size_t>(width) * 3, &out.px[static_cast<size_t>(y) * width * 3]);
    }
    return out;
}

inline Image hflip(const Image& src) {
    Image out(src.h, src.w);
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = src.at(y, src.w - 1 - x, c);
    return out;
}

inline Image vflip(const Image& src) {
    Image out(src.h, src.w);
    for (int y = 0; y < src.h; ++y) {
        const uint8_t* s = &src.px[static_cast<size_t>(src.h - 1 - y) * src.w * 3];
        std::copy(s, s + static_cast<size_t>(src.w) * 3, &out.px[static_cast<size_t>(y) * src.w * 3]);
    }
    return out;
}

// clockwise quarter turn: output (y, x) reads input (h-1-x, y)
inline Image rot90cw(const Image& src) {
    Image out(src.w, src.h);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = src.at(src.h - 1 - x, y, c);
    return out;
}

inline Image brightness(const Image& src, double factor) {
    Image out(src.h, src.w);
    for (size_t i = 0; i < src.px.size(); ++i)
        out.px[i] = clamp_u8(std::round(src.px[i] * factor));
    return out;
}

inline Image contrast(const Image& src, double factor) {
    Image out(src.h, src.w);
    for (size_t i = 0; i < src.px.size(); ++i)
        out.px[i] = clamp_u8(std::round((src.px[i] - 128.0) * factor + 128.0));
    return out;
}

// Box-filter 4x reduction; each output pixel is the mean of a 4x4 block,
// rounded half up via integer arithmetic.
inline Image box_downsample4(const Image& src) {
    if (src.h % 4 != 0 || src.w % 4 != 0)
        throw InvariantError("box_downsample4 requires dimensions divisible by 4");
    Image out(src.h / 4, src.w / 4);
    for (int y = 0; y < out.h; ++y) {
        for (int x = 0; x < out.w; ++x) {
            for (int c = 0; c < 3; ++c) {
                unsigned sum = 0;
                for (int dy = 0; dy < 4; ++dy)
                    for (int dx = 0; dx < 4; ++dx) sum += src.at(4 * y + dy, 4 * x + dx, c);
                out.at(y, x, c) = static_cast<uint8_t>((sum + 8) / 16);
            }
        }
    }
    return out;
}

inline void mean_rgb(const Image& img, double out[3]) {
    double acc[3] = {0, 0, 0};
    const size_t n = static_cast<size_t>(img.h) * img.w;
    for (size_t i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) acc[c] += img.px[i * 3 + c];
    for (int c = 0; c < 3; ++c) out[c] = acc[c] / static_cast<double>(n);
}

inline Image random_image(int h, int w, Rng& rng) {
    Image img(h, w);
    for (auto& p : img.px) p = static_cast<uint8_t>(rng.below(256));
    return img;
}

}  // namespace xmag
