#pragma once

#include <variant>
#include <vector>

#include "xmag/pyramid.hpp"

// Paired augmentation: the same ordered op list is applied at both
// magnifications, and children are always re-derived by decomposing the
// augmented parent so spatial correspondence cannot drift.

namespace xmag {

enum class AugOp : int { HFlip = 0, VFlip = 1, Rot90 = 2, Brightness = 3, Contrast = 4 };

struct AugStep {
    AugOp op;
    double factor = 1.0;  // used by Brightness / Contrast only

    bool operator==(const AugStep&) const = default;
};

struct AugmentationSpec {
    uint64_t seed = 0;
    std::vector<AugStep> ops;  // applied in order

    bool operator==(const AugmentationSpec&) const = default;
};

inline AugmentationSpec identity_augmentation() { return {}; }

// Draw a spec from a seed: each geometric op is included independently with
// probability 1/2; brightness and contrast factors are uniform in [0.85, 1.15].
inline AugmentationSpec sample_augmentation(uint64_t seed) {
    Rng rng(hash_mix(seed, 0x617567ULL));
    AugmentationSpec spec;
    spec.seed = seed;
    if (rng.coin()) spec.ops.push_back({AugOp::HFlip, 1.0});
    if (rng.coin()) spec.ops.push_back({AugOp::VFlip, 1.0});
    if (rng.coin()) spec.ops.push_back({AugOp::Rot90, 1.0});
    spec.ops.push_back({AugOp::Brightness, rng.uniform(0.85, 1.15)});
    spec.ops.push_back({AugOp::Contrast, rng.uniform(0.85, 1.15)});
    return spec;
}

inline Image apply_augmentation(const Image& img, const AugmentationSpec& spec) {
    Image out = img;
    for (const AugStep& s : spec.ops) {
        switch (s.op) {
            case AugOp::HFlip: out = hflip(out); break;
            case AugOp::VFlip: out = vflip(out); break;
            case AugOp::Rot90: out = rot90cw(out); break;
            case AugOp::Brightness: out = brightness(out, s.factor); break;
            case AugOp::Contrast: out = contrast(out, s.factor); break;
        }
    }
    return out;
}

// Where each child cell (r, c) of the 4x4 grid moves under the spec's
// geometric ops: returns perm with perm[old_index] = new_index.
inline std::array<int, kChildren> grid_permutation(const AugmentationSpec& spec) {
    std::array<int, kChildren> perm;
    for (int i = 0; i < kChildren; ++i) perm[i] = i;
    const int n = kChildGrid - 1;
    for (const AugStep& s : spec.ops) {
        for (int i = 0; i < kChildren; ++i) {
            const int r = perm[i] / kChildGrid, c = perm[i] % kChildGrid;
            switch (s.op) {
                case AugOp::HFlip: perm[i] = r * kChildGrid + (n - c); break;
                case AugOp::VFlip: perm[i] = (n - r) * kChildGrid + c; break;
                case AugOp::Rot90: perm[i] = c * kChildGrid + (n - r); break;  // clockwise
                default: break;                                               // photometric: no movement
            }
        }
    }
    return perm;
}

inline PyramidPatchPair paired_augment(const PyramidPatchPair& pair, const AugmentationSpec& spec) {
    PyramidPatchPair out;
    Image parent = apply_augmentation(pair.parent_20x, spec);
    out.children_20x = decompose_parent(parent);
    out.patch_5x = apply_augmentation(pair.patch_5x, spec);
    out.parent_20x = std::move(parent);
    out.grid_row = pair.grid_row;
    out.grid_col = pair.grid_col;
    out.slide_id = pair.slide_id;
    out.slide_label = pair.slide_label;
    out.region_histogram = pair.region_histogram;
    return out;
}

}  // namespace xmag
