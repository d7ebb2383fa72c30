// SPDX-License-Identifier: Apache-2.0

#include "sscan/image.hpp"

#include <algorithm>
#include <cmath>

namespace sscan {

ImageU8 ImageU8::create(std::size_t height, std::size_t width, std::size_t channels,
                        std::uint8_t fill) {
    if (height == 0 || width == 0 || (channels != 1 && channels != 3)) {
        throw ValueError("image: dims must be positive with 1 or 3 channels");
    }
    ImageU8 img;
    img.height = height;
    img.width = width;
    img.channels = channels;
    img.data.assign(height * width * channels, fill);
    return img;
}

Tensor image_to_tensor(const ImageU8& img) {
    std::vector<double> data(img.channels * img.height * img.width);
    for (std::size_t c = 0; c < img.channels; ++c)
        for (std::size_t y = 0; y < img.height; ++y)
            for (std::size_t x = 0; x < img.width; ++x)
                data[(c * img.height + y) * img.width + x] = img.at(y, x, c) / 255.0;
    return Tensor::from_data({img.channels, img.height, img.width}, std::move(data));
}

ImageU8 tensor_to_image(const Tensor& t) {
    const auto& s = t.shape();
    if (s.size() != 3 || (s[0] != 1 && s[0] != 3)) {
        throw ShapeError("tensor_to_image: want [1|3,H,W], got " + shape_str(s));
    }
    ImageU8 img = ImageU8::create(s[1], s[2], s[0]);
    const auto& v = t.values();
    for (std::size_t c = 0; c < s[0]; ++c)
        for (std::size_t y = 0; y < s[1]; ++y)
            for (std::size_t x = 0; x < s[2]; ++x) {
                const double val = v[(c * s[1] + y) * s[2] + x];
                const double scaled = std::round(std::clamp(val, 0.0, 1.0) * 255.0);
                img.at(y, x, c) = static_cast<std::uint8_t>(scaled);
            }
    return img;
}

}  // namespace sscan
