// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "sscan/tensor.hpp"

namespace sscan {

// 8-bit image, row-major, interleaved samples, RGB channel order.
struct ImageU8 {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;  // 1 or 3
    std::vector<std::uint8_t> data;

    static ImageU8 create(std::size_t height, std::size_t width, std::size_t channels,
                          std::uint8_t fill = 0);

    std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
        return data[(y * width + x) * channels + c];
    }
    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
        return data[(y * width + x) * channels + c];
    }

    bool same_dims(const ImageU8& other) const {
        return height == other.height && width == other.width && channels == other.channels;
    }
};

// [0,255] u8 <-> [0,1] float [C,H,W] conversions; to_image clamps.
Tensor image_to_tensor(const ImageU8& img);
ImageU8 tensor_to_image(const Tensor& t);

}  // namespace sscan
