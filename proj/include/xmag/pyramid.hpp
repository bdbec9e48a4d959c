#pragma once

#include <array>
#include <vector>

#include "xmag/synthetic.hpp"

// Multi-magnification patch geometry: 896x896 parent tiles at 20x, their 16
// non-overlapping 224x224 children (row-major 4x4 grid), and the spatially
// equivalent 224x224 patch at 5x (4x box downscale of the parent).

namespace xmag {

constexpr int kParentSide = 896;
constexpr int kChildSide = 224;
constexpr int kChildGrid = 4;                            // 4x4 children
constexpr int kChildren = kChildGrid * kChildGrid;       // 16

struct PyramidPatchPair {
    Image parent_20x;                         // 896x896x3
    std::array<Image, kChildren> children_20x;  // each 224x224x3, row-major
    Image patch_5x;                           // 224x224x3
    int grid_row = 0, grid_col = 0;
    std::string slide_id;
    int slide_label = 0;                       // carried for manifest assembly
    std::vector<int64_t> region_histogram;     // per-class pixel counts in this tile
};

// Child index covering parent pixel (y, x).
inline int child_index_of(int y, int x) { return kChildGrid * (y / kChildSide) + x / kChildSide; }

inline std::array<Image, kChildren> decompose_parent(const Image& parent) {
    if (parent.h != kParentSide || parent.w != kParentSide)
        throw InvariantError("decompose_parent expects 896x896 input, got " + std::to_string(parent.h) + "x" +
                             std::to_string(parent.w));
    std::array<Image, kChildren> out;
    for (int i = 0; i < kChildren; ++i)
        out[i] = crop(parent, (i / kChildGrid) * kChildSide, (i % kChildGrid) * kChildSide, kChildSide, kChildSide);
    return out;
}

// Inverse of decompose_parent; used by tests and by paired augmentation checks.
inline Image reassemble_children(const std::array<Image, kChildren>& children) {
    Image out(kParentSide, kParentSide);
    for (int i = 0; i < kChildren; ++i) {
        const Image& ch = children[i];
        if (ch.h != kChildSide || ch.w != kChildSide) throw InvariantError("child has wrong dimensions");
        const int y0 = (i / kChildGrid) * kChildSide, x0 = (i % kChildGrid) * kChildSide;
        for (int y = 0; y < kChildSide; ++y)
            std::copy(&ch.px[static_cast<size_t>(y) * kChildSide * 3],
                      &ch.px[static_cast<size_t>(y) * kChildSide * 3] + static_cast<size_t>(kChildSide) * 3,
                      &out.px[(static_cast<size_t>(y0 + y) * kParentSide + x0) * 3]);
    }
    return out;
}

inline Image downsample_to_5x(const Image& parent) {
    if (parent.h != kParentSide || parent.w != kParentSide)
        throw InvariantError("downsample_to_5x expects 896x896 input, got " + std::to_string(parent.h) + "x" +
                             std::to_string(parent.w));
    return box_downsample4(parent);
}

inline PyramidPatchPair make_pair_from_parent(Image parent, int grid_row, int grid_col, std::string slide_id,
                                              int slide_label) {
    PyramidPatchPair p;
    p.children_20x = decompose_parent(parent);
    p.patch_5x = downsample_to_5x(parent);
    p.parent_20x = std::move(parent);
    p.grid_row = grid_row;
    p.grid_col = grid_col;
    p.slide_id = std::move(slide_id);
    p.slide_label = slide_label;
    return p;
}

// One pair per non-overlapping 896^2 tile, row-major. Config validation
// guarantees exact tiling, so no partial tiles can occur on synthetic slides.
inline std::vector<PyramidPatchPair> tessellate(const SyntheticWsi& wsi) {
    const int rows = wsi.pixels.h / kParentSide, cols = wsi.pixels.w / kParentSide;
    if (rows * kParentSide != wsi.pixels.h || cols * kParentSide != wsi.pixels.w)
        throw InvariantError("slide dimensions are not multiples of 896");
    int n_classes = 0;
    for (int v : wsi.region_labels) n_classes = std::max(n_classes, v + 1);

    std::vector<PyramidPatchPair> out;
    out.reserve(static_cast<size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            PyramidPatchPair p = make_pair_from_parent(
                crop(wsi.pixels, r * kParentSide, c * kParentSide, kParentSide, kParentSide), r, c, wsi.id,
                wsi.slide_label);
            p.region_histogram.assign(static_cast<size_t>(n_classes), 0);
            for (int y = 0; y < kParentSide; ++y)
                for (int x = 0; x < kParentSide; ++x)
                    ++p.region_histogram[static_cast<size_t>(wsi.region_at(r * kParentSide + y, c * kParentSide + x))];
            out.push_back(std::move(p));
        }
    return out;
}

}  // namespace xmag
