// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "sscan/attention.hpp"
#include "sscan/image.hpp"
#include "sscan/windowing.hpp"

namespace sscan::viz {

struct Box {
    std::size_t y0 = 0, x0 = 0;  // inclusive
    std::size_t y1 = 0, x1 = 0;  // exclusive
    enum class Kind { query, key } kind = Kind::key;
};

// One query box plus its routed key windows, clipped to the feature map.
// Returns k_used + 1 boxes, query last so it draws on top.
std::vector<Box> attention_boxes(const win::RegionGrid& grid, const attn::RoutingResult& routing,
                                 std::size_t query_row, std::size_t query_col);

// 1-pixel rectangle outline, clipped to the image.
void draw_box(ImageU8& img, const Box& box, std::uint8_t r, std::uint8_t g, std::uint8_t b);

}  // namespace sscan::viz
