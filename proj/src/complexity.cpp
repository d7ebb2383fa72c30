// SPDX-License-Identifier: Apache-2.0

#include "sscan/complexity.hpp"

#include <algorithm>
#include <random>
#include <sstream>

namespace sscan::cost {

const char* variant_name(Variant v) {
    return v == Variant::prev_variable_window ? "prev_variable_window" : "ours_fixed_window";
}

namespace {

void check_dims(std::size_t H, std::size_t W, std::size_t C) {
    if (H == 0 || W == 0 || C == 0) throw ValueError("cost model: dimensions must be positive");
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// Region layout shared by the FLOPs and memory models. `prev` splits the
// map into S x S regions whose size grows with the input; `ours` tiles
// it with fixed MxM windows.
struct RegionLayout {
    std::uint64_t regions;
    std::uint64_t tokens_per_region;
};

RegionLayout layout_for(Variant variant, std::size_t H, std::size_t W, std::size_t m_or_s) {
    if (m_or_s == 0) throw ValueError("cost model: window/region parameter must be positive");
    if (variant == Variant::prev_variable_window) {
        const std::uint64_t s2 = static_cast<std::uint64_t>(m_or_s) * m_or_s;
        return {s2, static_cast<std::uint64_t>(ceil_div(H, m_or_s)) * ceil_div(W, m_or_s)};
    }
    const std::uint64_t hw = static_cast<std::uint64_t>(ceil_div(H, m_or_s)) * ceil_div(W, m_or_s);
    return {hw, static_cast<std::uint64_t>(m_or_s) * m_or_s};
}

}  // namespace

CostReport flops_prev(std::size_t H, std::size_t W, std::size_t C, std::size_t S, std::size_t k,
                      std::size_t bytes_per_scalar) {
    check_dims(H, W, C);
    if (S == 0 || k == 0) throw ValueError("flops_prev: S and k must be positive");
    const std::uint64_t s2 = static_cast<std::uint64_t>(S) * S;
    const std::uint64_t hw = static_cast<std::uint64_t>(H) * W;
    if (hw % s2 != 0) {
        throw ValueError("flops_prev: H*W = " + std::to_string(hw) + " not divisible into " +
                         std::to_string(s2) + " regions");
    }
    CostReport r;
    r.variant = Variant::prev_variable_window;
    r.dims = {H, W, C, S, k, bytes_per_scalar};
    r.routing_flops = 2 * s2 * s2 * C;
    r.attention_flops = 2 * k * hw * hw * C / s2;
    r.total_flops = r.routing_flops + r.attention_flops;
    r.peak_intermediate_bytes =
        peak_attention_memory(r.variant, H, W, C, S, k, bytes_per_scalar, false);
    return r;
}

CostReport flops_ours(std::size_t H, std::size_t W, std::size_t C, std::size_t M, std::size_t k,
                      std::size_t bytes_per_scalar) {
    check_dims(H, W, C);
    if (M == 0 || k == 0) throw ValueError("flops_ours: M and k must be positive");
    const std::uint64_t m2 = static_cast<std::uint64_t>(M) * M;
    const std::uint64_t hw = static_cast<std::uint64_t>(H) * W;
    const std::uint64_t regions = hw / m2;
    if (hw % m2 != 0) {
        throw ValueError("flops_ours: H*W = " + std::to_string(hw) + " not divisible by M^2 = " +
                         std::to_string(m2));
    }
    CostReport r;
    r.variant = Variant::ours_fixed_window;
    r.dims = {H, W, C, M, k, bytes_per_scalar};
    r.routing_flops = 2 * regions * regions * C;
    r.attention_flops = 2 * k * m2 * hw * C;
    r.total_flops = r.routing_flops + r.attention_flops;
    r.peak_intermediate_bytes =
        peak_attention_memory(r.variant, H, W, C, M, k, bytes_per_scalar, false);
    return r;
}

std::uint64_t peak_attention_memory(Variant variant, std::size_t H, std::size_t W, std::size_t C,
                                    std::size_t m_or_s, std::size_t k, std::size_t bytes_per_scalar,
                                    bool tiled) {
    check_dims(H, W, C);
    const RegionLayout lay = layout_for(variant, H, W, m_or_s);
    const std::uint64_t k_used = std::min<std::uint64_t>(k, lay.regions);
    const std::uint64_t gathered_tokens = k_used * lay.tokens_per_region;

    // Live sets: all regions' score blocks (and the same-sized softmax
    // output), or one region's block when tiled, plus gathered K and V.
    const std::uint64_t score_regions = tiled ? 1 : lay.regions;
    const std::uint64_t scores = score_regions * lay.tokens_per_region * gathered_tokens;
    const std::uint64_t gathered_kv = 2 * lay.regions * gathered_tokens * C;

    return std::max(scores, gathered_kv) * bytes_per_scalar;
}

MeasuredFlops measured_attention_flops(const model::ModelConfig& cfg, std::size_t H, std::size_t W,
                                       attn::Mode mode, std::uint64_t seed) {
    cfg.validate();
    check_dims(H, W, cfg.embed_dim);

    std::mt19937_64 rng(seed);
    auto fill = [&](const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        std::vector<double> data(n);
        for (double& v : data) v = (static_cast<double>(rng() >> 11) * 0x1.0p-53) * 2.0 - 1.0;
        return Tensor::from_data(shape, std::move(data));
    };

    const std::size_t c = cfg.embed_dim;
    attn::AttnWeights w;
    w.wq = fill({c, c});
    w.wk = fill({c, c});
    w.wv = fill({c, c});
    w.wo = fill({c, c});
    w.bo = Tensor::zeros({c});
    if (cfg.qkv_bias) {
        w.bq = Tensor::zeros({c});
        w.bk = Tensor::zeros({c});
        w.bv = Tensor::zeros({c});
    }
    Tensor x = fill({H, W, c});

    FlopMeter meter;
    {
        FlopMeter::Enable enable(meter);
        attn::fgca_forward(x, cfg.attention(), w, mode);
    }

    MeasuredFlops m;
    m.routing_flops = meter.section(attn::kFlopSectionRouting);
    m.attention_flops = meter.section(attn::kFlopSectionAttention);
    m.total_flops = m.routing_flops + m.attention_flops;
    return m;
}

std::vector<CostReport> sweep_costs(const std::vector<SweepCell>& grid,
                                    const std::vector<Variant>& variants, bool tiled) {
    std::vector<CostReport> rows;
    rows.reserve(grid.size() * variants.size());
    for (const SweepCell& cell : grid) {
        for (Variant v : variants) {
            CostReport r = v == Variant::prev_variable_window
                               ? flops_prev(cell.h, cell.w, cell.c, cell.regions_side_prev,
                                            cell.topk, cell.bytes_per_scalar)
                               : flops_ours(cell.h, cell.w, cell.c, cell.window_ours, cell.topk,
                                            cell.bytes_per_scalar);
            if (tiled) {
                r.peak_intermediate_bytes =
                    peak_attention_memory(v, cell.h, cell.w, cell.c, r.dims.window, cell.topk,
                                          cell.bytes_per_scalar, true);
            }
            rows.push_back(r);
        }
    }
    return rows;
}

std::string to_csv(const std::vector<CostReport>& rows) {
    std::ostringstream os;
    os << "variant,H,W,C,window,topk,bytes_per_scalar,routing_flops,attention_flops,total_flops,"
          "peak_intermediate_bytes\n";
    for (const CostReport& r : rows) {
        os << variant_name(r.variant) << ',' << r.dims.h << ',' << r.dims.w << ',' << r.dims.c << ','
           << r.dims.window << ',' << r.dims.topk << ',' << r.dims.bytes_per_scalar << ','
           << r.routing_flops << ',' << r.attention_flops << ',' << r.total_flops << ','
           << r.peak_intermediate_bytes << '\n';
    }
    return os.str();
}

}  // namespace sscan::cost
