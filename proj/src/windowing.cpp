// SPDX-License-Identifier: Apache-2.0

#include "sscan/windowing.hpp"

#include <vector>

namespace sscan::win {

RegionGrid make_grid(std::size_t feature_h, std::size_t feature_w, std::size_t window) {
    if (window == 0) throw ValueError("make_grid: window must be >= 1");
    if (feature_h == 0 || feature_w == 0) throw ValueError("make_grid: empty feature map");
    RegionGrid g;
    g.window = window;
    g.feature_h = feature_h;
    g.feature_w = feature_w;
    g.h_windows = (feature_h + window - 1) / window;
    g.w_windows = (feature_w + window - 1) / window;
    g.pad_bottom = g.h_windows * window - feature_h;
    g.pad_right = g.w_windows * window - feature_w;
    return g;
}

Tensor pad_to_grid(const Tensor& x, const RegionGrid& grid) {
    if (x.rank() != 3 || x.shape()[0] != grid.feature_h || x.shape()[1] != grid.feature_w) {
        throw ShapeError("pad_to_grid: map " + shape_str(x.shape()) + " does not match grid " +
                         std::to_string(grid.feature_h) + "x" + std::to_string(grid.feature_w));
    }
    if (grid.pad_bottom == 0 && grid.pad_right == 0) return x;
    return reflect_pad_hw(x, grid.pad_bottom, grid.pad_right);
}

Tensor partition_padded(const Tensor& padded, const RegionGrid& grid) {
    const auto& s = padded.shape();
    if (s.size() != 3 || s[0] != grid.padded_h() || s[1] != grid.padded_w()) {
        throw ShapeError("partition_padded: map " + shape_str(s) + " does not match padded grid " +
                         std::to_string(grid.padded_h()) + "x" + std::to_string(grid.padded_w()));
    }
    const std::size_t c = s[2];
    const std::size_t m = grid.window;
    // [hw*M, ww*M, C] -> [hw, M, ww, M, C] -> [hw, ww, M, M, C] -> [n, M^2, C]
    Tensor t = reshape(padded, {grid.h_windows, m, grid.w_windows, m, c});
    t = permute(t, {0, 2, 1, 3, 4});
    return reshape(t, {grid.regions(), m * m, c});
}

std::pair<Tensor, RegionGrid> partition_windows(const Tensor& x, std::size_t window) {
    if (x.rank() != 3) throw ShapeError("partition_windows: want [H,W,C], got " + shape_str(x.shape()));
    RegionGrid grid = make_grid(x.shape()[0], x.shape()[1], window);
    Tensor padded = pad_to_grid(x, grid);
    return {partition_padded(padded, grid), grid};
}

Tensor merge_padded(const Tensor& windows, const RegionGrid& grid) {
    const auto& s = windows.shape();
    if (s.size() != 3 || s[0] != grid.regions() || s[1] != grid.tokens()) {
        throw ShapeError("merge_padded: windows " + shape_str(s) + " do not match grid with " +
                         std::to_string(grid.regions()) + " regions of " +
                         std::to_string(grid.tokens()) + " tokens");
    }
    const std::size_t c = s[2];
    const std::size_t m = grid.window;
    Tensor t = reshape(windows, {grid.h_windows, grid.w_windows, m, m, c});
    t = permute(t, {0, 2, 1, 3, 4});
    return reshape(t, {grid.padded_h(), grid.padded_w(), c});
}

Tensor merge_windows(const Tensor& windows, const RegionGrid& grid) {
    Tensor padded = merge_padded(windows, grid);
    if (grid.pad_bottom == 0 && grid.pad_right == 0) return padded;
    return crop2d(padded, grid.feature_h, grid.feature_w);
}

Tensor cyclic_shift(const Tensor& x, long dy, long dx) {
    if (x.rank() != 3) throw ShapeError("cyclic_shift: want [H,W,C], got " + shape_str(x.shape()));
    return roll2d(x, dy, dx);
}

Tensor shift_attention_mask(const RegionGrid& grid, std::size_t shift) {
    if (shift >= grid.window) {
        throw ValueError("shift_attention_mask: shift " + std::to_string(shift) +
                         " must be < window " + std::to_string(grid.window));
    }
    const std::size_t m = grid.window;
    const std::size_t t = grid.tokens();
    const std::size_t n = grid.regions();
    const std::size_t hp = grid.padded_h(), wp = grid.padded_w();

    std::vector<double> mask(n * t * t, 0.0);
    if (shift == 0) return Tensor::from_data({n, t, t}, std::move(mask));

    // Label every post-shift pixel with the id of the pre-shift window
    // its content came from; pairs with different labels are forbidden.
    const long s = static_cast<long>(shift);
    std::vector<std::size_t> label(hp * wp);
    for (std::size_t y = 0; y < hp; ++y)
        for (std::size_t x = 0; x < wp; ++x) {
            const std::size_t sy = (y + s) % hp;
            const std::size_t sx = (x + s) % wp;
            label[y * wp + x] = (sy / m) * grid.w_windows + (sx / m);
        }

    for (std::size_t wy = 0; wy < grid.h_windows; ++wy)
        for (std::size_t wx = 0; wx < grid.w_windows; ++wx) {
            const std::size_t r = wy * grid.w_windows + wx;
            for (std::size_t a = 0; a < t; ++a) {
                const std::size_t ya = wy * m + a / m, xa = wx * m + a % m;
                for (std::size_t b = 0; b < t; ++b) {
                    const std::size_t yb = wy * m + b / m, xb = wx * m + b % m;
                    if (label[ya * wp + xa] != label[yb * wp + xb]) {
                        mask[(r * t + a) * t + b] = kMaskForbidden;
                    }
                }
            }
        }

    return Tensor::from_data({n, t, t}, std::move(mask));
}

}  // namespace sscan::win
