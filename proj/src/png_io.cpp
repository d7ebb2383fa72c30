// SPDX-License-Identifier: Apache-2.0

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "sscan/io.hpp"

namespace sscan::io {

namespace {

constexpr std::uint8_t kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};
constexpr std::size_t kMaxPixels = 100'000'000;

std::uint32_t read_u32be(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
           std::uint32_t(p[3]);
}

void push_u32be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void push_chunk(std::vector<std::uint8_t>& out, const char type[4],
                const std::vector<std::uint8_t>& payload) {
    push_u32be(out, static_cast<std::uint32_t>(payload.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0, out.data() + start, static_cast<uInt>(out.size() - start)));
    push_u32be(out, crc);
}

std::uint8_t paeth(std::uint8_t a, std::uint8_t b, std::uint8_t c) {
    const int p = int(a) + int(b) - int(c);
    const int pa = std::abs(p - int(a));
    const int pb = std::abs(p - int(b));
    const int pc = std::abs(p - int(c));
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

ImageU8 decode_png(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0) {
        throw PngError(PngErrorKind::not_png, "png: missing PNG signature");
    }

    std::size_t pos = 8;
    bool have_ihdr = false;
    std::size_t width = 0, height = 0, channels = 0;
    std::vector<std::uint8_t> idat;
    bool done = false;

    while (!done) {
        if (pos + 8 > bytes.size()) throw PngError(PngErrorKind::corrupt, "png: truncated chunk header");
        const std::uint32_t len = read_u32be(bytes.data() + pos);
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        if (pos + 12 + std::size_t(len) > bytes.size()) {
            throw PngError(PngErrorKind::corrupt, "png: truncated chunk data");
        }
        const std::uint8_t* payload = bytes.data() + pos + 8;
        const std::uint32_t want_crc = read_u32be(payload + len);
        const std::uint32_t got_crc = static_cast<std::uint32_t>(
            crc32(0, bytes.data() + pos + 4, static_cast<uInt>(len + 4)));
        if (want_crc != got_crc) throw PngError(PngErrorKind::corrupt, "png: chunk CRC mismatch");

        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw PngError(PngErrorKind::corrupt, "png: bad IHDR length");
            width = read_u32be(payload);
            height = read_u32be(payload + 4);
            const std::uint8_t bit_depth = payload[8];
            const std::uint8_t color_type = payload[9];
            const std::uint8_t compression = payload[10];
            const std::uint8_t filter = payload[11];
            const std::uint8_t interlace = payload[12];
            if (width == 0 || height == 0 || width * height > kMaxPixels) {
                throw PngError(PngErrorKind::corrupt, "png: bad image dimensions");
            }
            if (bit_depth != 8) {
                throw PngError(PngErrorKind::unsupported,
                               "png: unsupported bit depth " + std::to_string(bit_depth) +
                                   " (only 8-bit supported)");
            }
            if (color_type != 0 && color_type != 2) {
                throw PngError(PngErrorKind::unsupported,
                               "png: unsupported color type " + std::to_string(color_type) +
                                   " (only grayscale and RGB supported)");
            }
            if (interlace != 0) {
                throw PngError(PngErrorKind::unsupported, "png: interlaced images not supported");
            }
            if (compression != 0 || filter != 0) {
                throw PngError(PngErrorKind::unsupported, "png: unsupported compression/filter method");
            }
            channels = color_type == 2 ? 3 : 1;
            have_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            if (!have_ihdr) throw PngError(PngErrorKind::corrupt, "png: IDAT before IHDR");
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            done = true;
        }
        // Other (ancillary) chunks are skipped.
        pos += 12 + len;
    }

    if (!have_ihdr) throw PngError(PngErrorKind::corrupt, "png: missing IHDR");
    if (idat.empty()) throw PngError(PngErrorKind::corrupt, "png: missing IDAT");

    const std::size_t row_bytes = width * channels;
    const std::size_t raw_size = height * (row_bytes + 1);
    std::vector<std::uint8_t> raw(raw_size);
    uLongf dest_len = raw_size;
    const int zres = uncompress(raw.data(), &dest_len, idat.data(), static_cast<uLong>(idat.size()));
    if (zres != Z_OK || dest_len != raw_size) {
        throw PngError(PngErrorKind::corrupt, "png: IDAT decompression failed");
    }

    ImageU8 img = ImageU8::create(height, width, channels);
    const std::size_t bpp = channels;
    std::vector<std::uint8_t> prior(row_bytes, 0);
    for (std::size_t y = 0; y < height; ++y) {
        const std::uint8_t* src = raw.data() + y * (row_bytes + 1);
        const std::uint8_t filter = src[0];
        std::uint8_t* dst = img.data.data() + y * row_bytes;
        switch (filter) {
            case 0:
                std::memcpy(dst, src + 1, row_bytes);
                break;
            case 1:
                for (std::size_t i = 0; i < row_bytes; ++i)
                    dst[i] = src[1 + i] + (i >= bpp ? dst[i - bpp] : 0);
                break;
            case 2:
                for (std::size_t i = 0; i < row_bytes; ++i) dst[i] = src[1 + i] + prior[i];
                break;
            case 3:
                for (std::size_t i = 0; i < row_bytes; ++i) {
                    const int left = i >= bpp ? dst[i - bpp] : 0;
                    dst[i] = src[1 + i] + static_cast<std::uint8_t>((left + prior[i]) / 2);
                }
                break;
            case 4:
                for (std::size_t i = 0; i < row_bytes; ++i) {
                    const std::uint8_t left = i >= bpp ? dst[i - bpp] : 0;
                    const std::uint8_t up_left = i >= bpp ? prior[i - bpp] : 0;
                    dst[i] = src[1 + i] + paeth(left, prior[i], up_left);
                }
                break;
            default:
                throw PngError(PngErrorKind::corrupt,
                               "png: unknown scanline filter " + std::to_string(filter));
        }
        std::memcpy(prior.data(), dst, row_bytes);
    }
    return img;
}

std::vector<std::uint8_t> encode_png(const ImageU8& img) {
    if (img.height == 0 || img.width == 0 || (img.channels != 1 && img.channels != 3) ||
        img.data.size() != img.height * img.width * img.channels) {
        throw ValueError("encode_png: malformed image");
    }

    std::vector<std::uint8_t> out(kSignature, kSignature + 8);

    std::vector<std::uint8_t> ihdr;
    push_u32be(ihdr, static_cast<std::uint32_t>(img.width));
    push_u32be(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(8);                                   // bit depth
    ihdr.push_back(img.channels == 3 ? 2 : 0);           // color type
    ihdr.push_back(0);                                   // compression
    ihdr.push_back(0);                                   // filter method
    ihdr.push_back(0);                                   // no interlace
    push_chunk(out, "IHDR", ihdr);

    const std::size_t row_bytes = img.width * img.channels;
    std::vector<std::uint8_t> raw(img.height * (row_bytes + 1));
    for (std::size_t y = 0; y < img.height; ++y) {
        raw[y * (row_bytes + 1)] = 0;  // filter: none
        std::memcpy(raw.data() + y * (row_bytes + 1) + 1, img.data.data() + y * row_bytes, row_bytes);
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                  Z_DEFAULT_COMPRESSION) != Z_OK) {
        throw IoError("encode_png: deflate failed");
    }
    compressed.resize(bound);
    push_chunk(out, "IDAT", compressed);
    push_chunk(out, "IEND", {});
    return out;
}

ImageU8 load_png(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PngError(PngErrorKind::open_failed, "png: cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return decode_png(bytes);
}

void save_png(const ImageU8& img, const std::string& path) {
    const auto bytes = encode_png(img);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw PngError(PngErrorKind::open_failed, "png: cannot create '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("png: write failed for '" + path + "'");
}

}  // namespace sscan::io
