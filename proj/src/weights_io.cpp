// SPDX-License-Identifier: Apache-2.0

#include <bit>
#include <cstring>
#include <fstream>

#include "sscan/io.hpp"

namespace sscan::io {

namespace {

constexpr char kMagic[4] = {'S', 'S', 'C', 'W'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kMaxRank = 8;
constexpr std::uint64_t kMaxElements = 1ull << 33;

void push_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void push_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void push_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

// Sequential little-endian reader; throws `truncated` when data runs out.
class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t remaining() const { return bytes_.size() - pos_; }
    bool at_end() const { return pos_ == bytes_.size(); }

    const std::uint8_t* take(std::size_t n) {
        if (remaining() < n) {
            throw WeightsError(WeightsErrorKind::truncated,
                               "weights: file truncated (wanted " + std::to_string(n) +
                                   " more bytes, have " + std::to_string(remaining()) + ")");
        }
        const std::uint8_t* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }

    std::uint8_t u8() { return *take(1); }

    std::uint16_t u16() {
        const std::uint8_t* p = take(2);
        return static_cast<std::uint16_t>(p[0] | (std::uint16_t(p[1]) << 8));
    }

    std::uint32_t u32() {
        const std::uint8_t* p = take(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
        return v;
    }

    std::uint64_t u64() {
        const std::uint8_t* p = take(8);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
        return v;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

bool valid_utf8(const std::uint8_t* s, std::size_t n) {
    std::size_t i = 0;
    while (i < n) {
        const std::uint8_t c = s[i];
        std::size_t extra;
        if (c < 0x80) {
            extra = 0;
        } else if ((c & 0xE0) == 0xC0 && c >= 0xC2) {
            extra = 1;
        } else if ((c & 0xF0) == 0xE0) {
            extra = 2;
        } else if ((c & 0xF8) == 0xF0 && c <= 0xF4) {
            extra = 3;
        } else {
            return false;
        }
        if (i + extra >= n) return false;
        for (std::size_t j = 1; j <= extra; ++j) {
            if ((s[i + j] & 0xC0) != 0x80) return false;
        }
        i += extra + 1;
    }
    return true;
}

}  // namespace

const char* weights_error_kind_name(WeightsErrorKind kind) {
    switch (kind) {
        case WeightsErrorKind::open_failed: return "open_failed";
        case WeightsErrorKind::bad_magic: return "bad_magic";
        case WeightsErrorKind::bad_version: return "bad_version";
        case WeightsErrorKind::truncated: return "truncated";
        case WeightsErrorKind::bad_name: return "bad_name";
        case WeightsErrorKind::duplicate_name: return "duplicate_name";
        case WeightsErrorKind::bad_rank: return "bad_rank";
        case WeightsErrorKind::bad_dims: return "bad_dims";
        case WeightsErrorKind::bad_dtype: return "bad_dtype";
        case WeightsErrorKind::size_mismatch: return "size_mismatch";
        case WeightsErrorKind::trailing_data: return "trailing_data";
    }
    return "?";
}

std::vector<std::uint8_t> encode_weights(const model::WeightStore& store) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    push_u16(out, kVersion);
    push_u32(out, static_cast<std::uint32_t>(store.size()));
    for (const auto& [name, tensor] : store) {
        if (name.empty() || name.size() > 0xFFFF) {
            throw ValueError("weights: tensor name length out of range: '" + name + "'");
        }
        push_u16(out, static_cast<std::uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        const auto& shape = tensor.shape();
        if (shape.size() > kMaxRank) {
            throw ValueError("weights: rank " + std::to_string(shape.size()) + " too large");
        }
        out.push_back(static_cast<std::uint8_t>(shape.size()));
        for (std::size_t d : shape) push_u32(out, static_cast<std::uint32_t>(d));
        out.push_back(0);  // dtype: f64 little-endian
        const auto& values = tensor.values();
        push_u64(out, static_cast<std::uint64_t>(values.size()) * 8);
        for (double v : values) push_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

model::WeightStore decode_weights(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);

    const std::uint8_t* magic = [&] {
        try {
            return r.take(4);
        } catch (const WeightsError&) {
            throw WeightsError(WeightsErrorKind::bad_magic, "weights: file too short for magic");
        }
    }();
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw WeightsError(WeightsErrorKind::bad_magic, "weights: bad magic (not an SSCW file)");
    }
    const std::uint16_t version = r.u16();
    if (version != kVersion) {
        throw WeightsError(WeightsErrorKind::bad_version,
                           "weights: unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = r.u32();

    model::WeightStore store;
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::uint16_t name_len = r.u16();
        if (name_len == 0) {
            throw WeightsError(WeightsErrorKind::bad_name, "weights: empty tensor name");
        }
        const std::uint8_t* name_bytes = r.take(name_len);
        if (!valid_utf8(name_bytes, name_len)) {
            throw WeightsError(WeightsErrorKind::bad_name, "weights: tensor name is not valid UTF-8");
        }
        std::string name(reinterpret_cast<const char*>(name_bytes), name_len);
        if (store.contains(name)) {
            throw WeightsError(WeightsErrorKind::duplicate_name,
                               "weights: duplicate tensor name '" + name + "'");
        }

        const std::uint8_t rank = r.u8();
        if (rank == 0 || rank > kMaxRank) {
            throw WeightsError(WeightsErrorKind::bad_rank,
                               "weights: rank " + std::to_string(rank) + " out of range for '" +
                                   name + "'");
        }
        std::vector<std::size_t> shape(rank);
        std::uint64_t elements = 1;
        for (std::uint8_t i = 0; i < rank; ++i) {
            const std::uint32_t d = r.u32();
            if (d == 0) {
                throw WeightsError(WeightsErrorKind::bad_dims,
                                   "weights: zero dimension in '" + name + "'");
            }
            shape[i] = d;
            elements *= d;
            if (elements > kMaxElements) {
                throw WeightsError(WeightsErrorKind::bad_dims,
                                   "weights: tensor '" + name + "' is implausibly large");
            }
        }

        const std::uint8_t dtype = r.u8();
        if (dtype != 0) {
            throw WeightsError(WeightsErrorKind::bad_dtype,
                               "weights: unknown dtype tag " + std::to_string(dtype) + " for '" +
                                   name + "'");
        }

        const std::uint64_t byte_len = r.u64();
        if (byte_len != elements * 8) {
            throw WeightsError(WeightsErrorKind::size_mismatch,
                               "weights: '" + name + "' declares " + std::to_string(byte_len) +
                                   " bytes for " + std::to_string(elements) + " elements");
        }
        if (byte_len > r.remaining()) {
            throw WeightsError(WeightsErrorKind::truncated,
                               "weights: data for '" + name + "' extends past end of file");
        }
        const std::uint8_t* data = r.take(static_cast<std::size_t>(byte_len));

        std::vector<double> values(elements);
        for (std::uint64_t i = 0; i < elements; ++i) {
            std::uint64_t bits = 0;
            for (int b = 7; b >= 0; --b) bits = (bits << 8) | data[i * 8 + b];
            values[i] = std::bit_cast<double>(bits);
        }
        store.insert(name, Tensor::from_data(shape, std::move(values)));
    }

    if (!r.at_end()) {
        throw WeightsError(WeightsErrorKind::trailing_data,
                           "weights: " + std::to_string(r.remaining()) + " trailing bytes");
    }
    return store;
}

void save_weights(const model::WeightStore& store, const std::string& path) {
    const auto bytes = encode_weights(store);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw WeightsError(WeightsErrorKind::open_failed, "weights: cannot create '" + path + "'");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("weights: write failed for '" + path + "'");
}

model::WeightStore load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw WeightsError(WeightsErrorKind::open_failed, "weights: cannot open '" + path + "'");
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return decode_weights(bytes);
}

}  // namespace sscan::io
