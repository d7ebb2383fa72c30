// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sscan/attention.hpp"
#include "sscan/image.hpp"
#include "sscan/model.hpp"

namespace sscan::io {

// ---- PNG (8-bit RGB/grayscale, non-interlaced) ---------------------------

enum class PngErrorKind { open_failed, not_png, unsupported, corrupt };

class PngError : public IoError {
public:
    PngError(PngErrorKind kind, const std::string& msg) : IoError(msg), kind_(kind) {}
    PngErrorKind kind() const { return kind_; }

private:
    PngErrorKind kind_;
};

ImageU8 load_png(const std::string& path);
void save_png(const ImageU8& img, const std::string& path);

ImageU8 decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const ImageU8& img);

// ---- weight container ------------------------------------------------------
//
// Layout (little-endian throughout):
//   magic "SSCW" | version u16 | tensor_count u32
//   per tensor: name_len u16 | name (UTF-8) | rank u8 | dims u32 x rank
//               | dtype u8 (0 = f64) | byte_len u64 | raw data

enum class WeightsErrorKind {
    open_failed,
    bad_magic,
    bad_version,
    truncated,
    bad_name,
    duplicate_name,
    bad_rank,
    bad_dims,
    bad_dtype,
    size_mismatch,
    trailing_data,
};

const char* weights_error_kind_name(WeightsErrorKind kind);

class WeightsError : public IoError {
public:
    WeightsError(WeightsErrorKind kind, const std::string& msg) : IoError(msg), kind_(kind) {}
    WeightsErrorKind kind() const { return kind_; }

private:
    WeightsErrorKind kind_;
};

void save_weights(const model::WeightStore& store, const std::string& path);
model::WeightStore load_weights(const std::string& path);

std::vector<std::uint8_t> encode_weights(const model::WeightStore& store);
model::WeightStore decode_weights(std::span<const std::uint8_t> bytes);

// ---- run configuration -------------------------------------------------------

struct RunConfig {
    model::ModelConfig model;
    attn::AttentionConfig attention;
};

// JSON object; unknown keys are rejected, missing keys take the shipped
// defaults. Throws ValueError naming the offending key.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

}  // namespace sscan::io
