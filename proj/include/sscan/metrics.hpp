// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "sscan/image.hpp"

namespace sscan::metrics {

// Peak signal-to-noise ratio in dB against the 255 peak. on_y converts
// RGB to the BT.601 luma channel first; crop_border pixels are dropped
// from every side. Identical inputs return +infinity.
double psnr(const ImageU8& a, const ImageU8& b, std::size_t crop_border, bool on_y);

// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5),
// C1=(0.01*255)^2, C2=(0.03*255)^2. Images must keep at least 11x11
// pixels after the border crop.
double ssim(const ImageU8& a, const ImageU8& b, std::size_t crop_border, bool on_y);

}  // namespace sscan::metrics
