#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "xmag/image.hpp"

// Deterministic synthetic mini-WSI generator. Every pixel is a pure function
// of (seed, y, x, channel): generation order cannot change the bytes, and
// regenerating from the same (config, seed) is byte-identical by construction.
//
// A slide is partitioned into square texture cells. Each cell carries one
// phenotype class; a `dominance` fraction of cells carry the slide's own
// label, the rest are drawn uniformly from the other classes. Classes are
// separated both by base color (distinct points on an RGB hue circle) and by
// spatial frequency (class-dependent stripe period), so a linear readout of
// patch color statistics can recover the slide label.

namespace xmag {

struct GeneratorConfig {
    int height = 896;
    int width = 896;
    int n_classes = 2;
    double dominance = 0.85;  // fraction of cells carrying the slide label
    int noise = 10;           // per-pixel uniform noise amplitude, 8-bit units
    int cell_px = 112;        // texture cell edge; 896 / 112 = 8 cells per tile edge
};

struct SyntheticWsi {
    std::string id;
    Image pixels;
    std::vector<int> region_labels;  // h*w, phenotype class per pixel
    int slide_label = 0;
    uint64_t seed = 0;

    int region_at(int y, int x) const { return region_labels[static_cast<size_t>(y) * pixels.w + x]; }
};

inline void validate_generator_config(const GeneratorConfig& cfg) {
    if (cfg.height <= 0 || cfg.height % 896 != 0 || cfg.width <= 0 || cfg.width % 896 != 0)
        throw ConfigError("generator dimensions must be positive multiples of 896, got " +
                          std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
    if (cfg.n_classes < 2) throw ConfigError("generator needs n_classes >= 2");
    if (cfg.dominance <= 0.0 || cfg.dominance > 1.0) throw ConfigError("dominance must be in (0, 1]");
    if (cfg.cell_px <= 0) throw ConfigError("cell_px must be positive");
    if (cfg.noise < 0 || cfg.noise > 60) throw ConfigError("noise must be in [0, 60]");
}

namespace detail {

// Distinct base colors on a hue circle around mid-gray.
inline std::array<int, 3> class_base_color(int cls, int n_classes) {
    const double ang = 2.0 * 3.14159265358979323846 * cls / n_classes;
    const double third = 2.0 * 3.14159265358979323846 / 3.0;
    return {static_cast<int>(std::lround(150.0 + 62.0 * std::cos(ang))),
            static_cast<int>(std::lround(150.0 + 62.0 * std::cos(ang - third))),
            static_cast<int>(std::lround(150.0 + 62.0 * std::cos(ang + third)))};
}

// Integer triangle wave with period p, range roughly [-amp, amp].
inline int tri_wave(int t, int p, int amp) {
    const int m = ((t % p) + p) % p;
    return (std::abs(2 * m - p) * 2 * amp) / p - amp;
}

inline int cell_class(uint64_t seed, int cy, int cx, int slide_label, const GeneratorConfig& cfg) {
    const uint64_t h = hash_mix(seed, 0x63656c6cULL, (static_cast<uint64_t>(cy) << 32) | static_cast<uint32_t>(cx));
    const double u = (h >> 11) * 0x1.0p-53;
    if (u < cfg.dominance || cfg.n_classes == 1) return slide_label;
    // Uniform over the other classes.
    const uint64_t h2 = splitmix64(h);
    int other = static_cast<int>(h2 % static_cast<uint64_t>(cfg.n_classes - 1));
    if (other >= slide_label) ++other;
    return other;
}

}  // namespace detail

inline SyntheticWsi generate_synthetic_wsi(const GeneratorConfig& cfg, uint64_t seed) {
    validate_generator_config(cfg);
    SyntheticWsi wsi;
    wsi.seed = seed;
    wsi.id = "slide_" + hex64(seed);
    wsi.slide_label = static_cast<int>(hash_mix(seed, 0x6c6162656cULL) % static_cast<uint64_t>(cfg.n_classes));
    wsi.pixels = Image(cfg.height, cfg.width);
    wsi.region_labels.assign(static_cast<size_t>(cfg.height) * cfg.width, 0);

    // Precompute palette + stripe period per class.
    std::vector<std::array<int, 3>> base(cfg.n_classes);
    std::vector<int> period(cfg.n_classes), slope(cfg.n_classes);
    for (int c = 0; c < cfg.n_classes; ++c) {
        base[c] = detail::class_base_color(c, cfg.n_classes);
        period[c] = 6 + 5 * c;      // class-dependent spatial frequency
        slope[c] = 1 + (c % 3);     // stripe direction varies a little too
    }

    const int cells_x = (cfg.width + cfg.cell_px - 1) / cfg.cell_px;
    std::vector<int> cell_cls;  // row of cell classes, recomputed per cell row
    cell_cls.resize(cells_x);

    for (int y = 0; y < cfg.height; ++y) {
        const int cy = y / cfg.cell_px;
        if (y % cfg.cell_px == 0 || y == 0)
            for (int cx = 0; cx < cells_x; ++cx)
                cell_cls[cx] = detail::cell_class(seed, cy, cx, wsi.slide_label, cfg);
        for (int x = 0; x < cfg.width; ++x) {
            const int cls = cell_cls[x / cfg.cell_px];
            wsi.region_labels[static_cast<size_t>(y) * cfg.width + x] = cls;
            const int stripe = detail::tri_wave(x + slope[cls] * y, period[cls], 16);
            const uint64_t hp = hash_mix(seed, 0x706978ULL, (static_cast<uint64_t>(y) << 32) | static_cast<uint32_t>(x));
            for (int c = 0; c < 3; ++c) {
                // Three independent noise draws from one per-pixel hash.
                const int noise =
                    cfg.noise == 0
                        ? 0
                        : static_cast<int>((hp >> (c * 21)) % static_cast<uint64_t>(2 * cfg.noise + 1)) - cfg.noise;
                wsi.pixels.px[(static_cast<size_t>(y) * cfg.width + x) * 3 + c] =
                    clamp_u8(base[cls][c] + stripe + noise);
            }
        }
    }
    return wsi;
}

}  // namespace xmag
