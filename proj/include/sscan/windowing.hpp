// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <utility>

#include "sscan/tensor.hpp"

namespace sscan::win {

// Layout of a feature map split into fixed window x window tiles.
// Non-divisible maps are mirror-padded on the bottom/right first;
// feature_h/feature_w keep the pre-padding size so merges can crop.
struct RegionGrid {
    std::size_t h_windows = 0;
    std::size_t w_windows = 0;
    std::size_t window = 0;
    std::size_t feature_h = 0;
    std::size_t feature_w = 0;
    std::size_t pad_bottom = 0;
    std::size_t pad_right = 0;

    std::size_t regions() const { return h_windows * w_windows; }
    std::size_t padded_h() const { return h_windows * window; }
    std::size_t padded_w() const { return w_windows * window; }
    std::size_t tokens() const { return window * window; }
};

RegionGrid make_grid(std::size_t feature_h, std::size_t feature_w, std::size_t window);

// [H,W,C] -> ([n_regions, window^2, C], grid). Tokens are row-major
// within each window; windows are row-major over the grid.
std::pair<Tensor, RegionGrid> partition_windows(const Tensor& x, std::size_t window);

// Inverse of partition_windows, cropped back to feature_h x feature_w.
Tensor merge_windows(const Tensor& windows, const RegionGrid& grid);

// Split of partition_windows for callers that roll between pad and split.
Tensor pad_to_grid(const Tensor& x, const RegionGrid& grid);
Tensor partition_padded(const Tensor& padded, const RegionGrid& grid);
Tensor merge_padded(const Tensor& windows, const RegionGrid& grid);  // stays padded

// Toroidal roll by (dy, dx); negative and oversized shifts wrap.
Tensor cyclic_shift(const Tensor& x, long dy, long dx);

// Pre-softmax additive mask [n_regions, window^2, window^2] with 0 for
// allowed pairs and -1e9 where tokens come from different pre-shift
// windows. shift must satisfy 0 <= shift < window.
Tensor shift_attention_mask(const RegionGrid& grid, std::size_t shift);

inline constexpr double kMaskForbidden = -1e9;

}  // namespace sscan::win
