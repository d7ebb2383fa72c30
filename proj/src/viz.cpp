// SPDX-License-Identifier: Apache-2.0

#include "sscan/viz.hpp"

#include <algorithm>

namespace sscan::viz {

namespace {

Box window_box(const win::RegionGrid& grid, std::size_t row, std::size_t col, Box::Kind kind) {
    Box b;
    b.kind = kind;
    b.y0 = row * grid.window;
    b.x0 = col * grid.window;
    b.y1 = std::min(b.y0 + grid.window, grid.feature_h);
    b.x1 = std::min(b.x0 + grid.window, grid.feature_w);
    return b;
}

}  // namespace

std::vector<Box> attention_boxes(const win::RegionGrid& grid, const attn::RoutingResult& routing,
                                 std::size_t query_row, std::size_t query_col) {
    if (query_row >= grid.h_windows || query_col >= grid.w_windows) {
        throw ValueError("attention_boxes: window (" + std::to_string(query_row) + "," +
                         std::to_string(query_col) + ") outside grid " +
                         std::to_string(grid.h_windows) + "x" + std::to_string(grid.w_windows));
    }
    const std::size_t query = query_row * grid.w_windows + query_col;
    if (routing.topk_indices.size() != grid.regions()) {
        throw ValueError("attention_boxes: routing covers " +
                         std::to_string(routing.topk_indices.size()) + " regions, grid has " +
                         std::to_string(grid.regions()));
    }

    std::vector<Box> boxes;
    boxes.reserve(routing.k_used + 1);
    for (std::size_t idx : routing.topk_indices[query]) {
        boxes.push_back(window_box(grid, idx / grid.w_windows, idx % grid.w_windows, Box::Kind::key));
    }
    boxes.push_back(window_box(grid, query_row, query_col, Box::Kind::query));
    return boxes;
}

void draw_box(ImageU8& img, const Box& box, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (box.y1 <= box.y0 || box.x1 <= box.x0) return;
    const std::size_t y1 = std::min(box.y1, img.height);
    const std::size_t x1 = std::min(box.x1, img.width);
    if (box.y0 >= img.height || box.x0 >= img.width) return;

    auto put = [&](std::size_t y, std::size_t x) {
        if (img.channels == 3) {
            img.at(y, x, 0) = r;
            img.at(y, x, 1) = g;
            img.at(y, x, 2) = b;
        } else {
            img.at(y, x, 0) = static_cast<std::uint8_t>((r + g + b) / 3);
        }
    };

    for (std::size_t x = box.x0; x < x1; ++x) {
        put(box.y0, x);
        put(y1 - 1, x);
    }
    for (std::size_t y = box.y0; y < y1; ++y) {
        put(y, box.x0);
        put(y, x1 - 1);
    }
}

}  // namespace sscan::viz
