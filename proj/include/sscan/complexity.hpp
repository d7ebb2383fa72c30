// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sscan/attention.hpp"
#include "sscan/model.hpp"

namespace sscan::cost {

enum class Variant { prev_variable_window, ours_fixed_window };

const char* variant_name(Variant v);

struct Dims {
    std::size_t h = 0, w = 0, c = 0;
    std::size_t window = 0;  // M for ours, S (regions per side) for prev
    std::size_t topk = 0;
    std::size_t bytes_per_scalar = 4;
};

// Closed-form cost of one selective-attention pass. FLOPs convention:
// one multiply-accumulate = 2 FLOPs; the attention term counts the
// query-key score products. Memory counts live intermediates only.
struct CostReport {
    Variant variant = Variant::ours_fixed_window;
    Dims dims;
    std::uint64_t routing_flops = 0;
    std::uint64_t attention_flops = 0;
    std::uint64_t total_flops = 0;
    std::uint64_t peak_intermediate_bytes = 0;
};

// Variable-window routing attention (S regions per side, S^2 regions):
// routing 2*(S^2)^2*C, attention 2*k*(HW)^2*C / S^2.
CostReport flops_prev(std::size_t H, std::size_t W, std::size_t C, std::size_t S, std::size_t k,
                      std::size_t bytes_per_scalar = 4);

// Fixed MxM windows (HW/M^2 regions): routing 2*(HW/M^2)^2*C,
// attention 2*k*M^2*HW*C.
CostReport flops_ours(std::size_t H, std::size_t W, std::size_t C, std::size_t M, std::size_t k,
                      std::size_t bytes_per_scalar = 4);

// Largest live intermediate among {score block, softmax output,
// gathered K/V}; tiled mode keeps only one region's score block alive.
std::uint64_t peak_attention_memory(Variant variant, std::size_t H, std::size_t W, std::size_t C,
                                    std::size_t m_or_s, std::size_t k, std::size_t bytes_per_scalar,
                                    bool tiled);

// Exact multiply-accumulate x2 counts from one instrumented fgca pass
// (routing adjacency product and token-to-token score product).
struct MeasuredFlops {
    std::uint64_t routing_flops = 0;
    std::uint64_t attention_flops = 0;
    std::uint64_t total_flops = 0;
};

MeasuredFlops measured_attention_flops(const model::ModelConfig& cfg, std::size_t H, std::size_t W,
                                       attn::Mode mode, std::uint64_t seed = 0);

struct SweepCell {
    std::size_t h = 0, w = 0, c = 0;
    std::size_t window_ours = 8;       // M
    std::size_t regions_side_prev = 8;  // S
    std::size_t topk = 4;
    std::size_t bytes_per_scalar = 4;
};

std::vector<CostReport> sweep_costs(const std::vector<SweepCell>& grid,
                                    const std::vector<Variant>& variants, bool tiled = false);

std::string to_csv(const std::vector<CostReport>& rows);

}  // namespace sscan::cost
