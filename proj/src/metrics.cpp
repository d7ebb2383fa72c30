// SPDX-License-Identifier: Apache-2.0

#include "sscan/metrics.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace sscan::metrics {

namespace {

// Planar double image (one channel), either the luma plane or gray data,
// cropped by `border` on all sides. Values stay in the [0,255] range.
std::vector<double> to_plane(const ImageU8& img, std::size_t border, bool on_y, std::size_t& out_h,
                             std::size_t& out_w) {
    if (img.height <= 2 * border || img.width <= 2 * border) {
        throw ValueError("metrics: crop_border " + std::to_string(border) +
                         " leaves no pixels in a " + std::to_string(img.height) + "x" +
                         std::to_string(img.width) + " image");
    }
    out_h = img.height - 2 * border;
    out_w = img.width - 2 * border;
    std::vector<double> plane(out_h * out_w);
    for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t x = 0; x < out_w; ++x) {
            const std::size_t sy = y + border, sx = x + border;
            double v;
            if (img.channels == 3 && on_y) {
                const double r = img.at(sy, sx, 0) / 255.0;
                const double g = img.at(sy, sx, 1) / 255.0;
                const double b = img.at(sy, sx, 2) / 255.0;
                v = 65.481 * r + 128.553 * g + 24.966 * b + 16.0;  // BT.601 luma
            } else if (img.channels == 3) {
                v = (img.at(sy, sx, 0) + img.at(sy, sx, 1) + img.at(sy, sx, 2)) / 3.0;
            } else {
                v = img.at(sy, sx, 0);
            }
            plane[y * out_w + x] = v;
        }
    return plane;
}

void check_pair(const ImageU8& a, const ImageU8& b) {
    if (!a.same_dims(b)) {
        throw ShapeError("metrics: image dims disagree: " + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + "x" + std::to_string(a.channels) + " vs " +
                         std::to_string(b.height) + "x" + std::to_string(b.width) + "x" +
                         std::to_string(b.channels));
    }
}

constexpr std::size_t kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);

std::vector<double> gaussian_kernel() {
    std::vector<double> k(kSsimWindow);
    const double half = (kSsimWindow - 1) / 2.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < kSsimWindow; ++i) {
        const double d = static_cast<double>(i) - half;
        k[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += k[i];
    }
    for (double& v : k) v /= sum;
    return k;
}

}  // namespace

double psnr(const ImageU8& a, const ImageU8& b, std::size_t crop_border, bool on_y) {
    check_pair(a, b);
    std::size_t h = 0, w = 0;
    const auto pa = to_plane(a, crop_border, on_y, h, w);
    const auto pb = to_plane(b, crop_border, on_y, h, w);
    double mse = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        const double d = pa[i] - pb[i];
        mse += d * d;
    }
    mse /= static_cast<double>(pa.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double ssim(const ImageU8& a, const ImageU8& b, std::size_t crop_border, bool on_y) {
    check_pair(a, b);
    std::size_t h = 0, w = 0;
    const auto pa = to_plane(a, crop_border, on_y, h, w);
    const auto pb = to_plane(b, crop_border, on_y, h, w);
    if (h < kSsimWindow || w < kSsimWindow) {
        throw ValueError("ssim: image must be at least 11x11 after crop, got " + std::to_string(h) +
                         "x" + std::to_string(w));
    }

    const auto kernel = gaussian_kernel();

    // Separable Gaussian-weighted moments, valid positions only.
    auto blur = [&](const std::vector<double>& src) {
        std::vector<double> tmp(h * (w - kSsimWindow + 1));
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x + kSsimWindow <= w; ++x) {
                double acc = 0.0;
                for (std::size_t i = 0; i < kSsimWindow; ++i) acc += kernel[i] * src[y * w + x + i];
                tmp[y * (w - kSsimWindow + 1) + x] = acc;
            }
        const std::size_t ow = w - kSsimWindow + 1;
        std::vector<double> out((h - kSsimWindow + 1) * ow);
        for (std::size_t y = 0; y + kSsimWindow <= h; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                double acc = 0.0;
                for (std::size_t i = 0; i < kSsimWindow; ++i) acc += kernel[i] * tmp[(y + i) * ow + x];
                out[y * ow + x] = acc;
            }
        return out;
    };

    std::vector<double> aa(pa.size()), bb(pb.size()), ab(pa.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        aa[i] = pa[i] * pa[i];
        bb[i] = pb[i] * pb[i];
        ab[i] = pa[i] * pb[i];
    }

    const auto mu_a = blur(pa), mu_b = blur(pb);
    const auto m_aa = blur(aa), m_bb = blur(bb), m_ab = blur(ab);

    double total = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i], mb = mu_b[i];
        const double va = m_aa[i] - ma * ma;
        const double vb = m_bb[i] - mb * mb;
        const double cov = m_ab[i] - ma * mb;
        const double num = (2.0 * ma * mb + kC1) * (2.0 * cov + kC2);
        const double den = (ma * ma + mb * mb + kC1) * (va + vb + kC2);
        total += num / den;
    }
    return total / static_cast<double>(mu_a.size());
}

}  // namespace sscan::metrics
