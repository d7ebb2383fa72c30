// SPDX-License-Identifier: Apache-2.0

#include "sscan/attention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sscan::attn {

void AttentionConfig::validate() const {
    if (window == 0) throw ValueError("attention config: window must be >= 1");
    if (num_heads == 0 || head_dim == 0) {
        throw ValueError("attention config: heads and head_dim must be >= 1");
    }
    if (topk_train == 0 || topk_infer == 0) throw ValueError("attention config: top-k must be >= 1");
}

std::tuple<Tensor, Tensor, Tensor> project_qkv(const Tensor& x_windows, const AttnWeights& w) {
    auto proj = [&](const Tensor& weight, const Tensor& bias) {
        Tensor y = matmul(x_windows, weight);
        if (bias.defined()) y = add_rowvec(y, bias);
        return y;
    };
    return {proj(w.wq, w.bq), proj(w.wk, w.bk), proj(w.wv, w.bv)};
}

Tensor region_descriptors(const Tensor& t) {
    if (t.rank() != 3) throw ShapeError("region_descriptors: want [n,T,C], got " + shape_str(t.shape()));
    return mean_axis(t, 1);
}

RoutingResult route_topk(const Tensor& qr, const Tensor& kr, std::size_t k) {
    if (qr.rank() != 2 || kr.rank() != 2 || qr.shape() != kr.shape()) {
        throw ShapeError("route_topk: want matching [n,C] descriptors, got " + shape_str(qr.shape()) +
                         " and " + shape_str(kr.shape()));
    }
    if (k == 0) throw ValueError("route_topk: k must be >= 1");
    const std::size_t n = qr.shape()[0];

    Tensor adjacency;
    {
        FlopMeter::Section section(kFlopSectionRouting);
        adjacency = matmul(qr, transpose_last2(kr));
    }

    RoutingResult result;
    result.adjacency = adjacency;
    result.k_used = std::min(k, n);
    result.topk_indices.resize(n);

    const auto& scores = adjacency.values();
    std::vector<std::size_t> order(n);
    for (std::size_t r = 0; r < n; ++r) {
        std::iota(order.begin(), order.end(), 0);
        const double* row = scores.data() + r * n;
        // Descending score, ties toward the smaller region index.
        std::sort(order.begin(), order.end(), [row](std::size_t a, std::size_t b) {
            if (row[a] != row[b]) return row[a] > row[b];
            return a < b;
        });
        result.topk_indices[r].assign(order.begin(), order.begin() + result.k_used);
    }
    return result;
}

std::pair<Tensor, Tensor> gather_kv(const Tensor& k, const Tensor& v, const RoutingResult& r) {
    if (k.shape() != v.shape()) {
        throw ShapeError("gather_kv: K and V shapes disagree: " + shape_str(k.shape()) + " vs " +
                         shape_str(v.shape()));
    }
    return {gather_regions(k, r.topk_indices), gather_regions(v, r.topk_indices)};
}

Tensor split_heads(const Tensor& t, std::size_t num_heads) {
    const auto& s = t.shape();
    if (s.size() != 3 || s[2] % num_heads != 0) {
        throw ShapeError("split_heads: cannot split " + shape_str(s) + " into " +
                         std::to_string(num_heads) + " heads");
    }
    const std::size_t d = s[2] / num_heads;
    Tensor r = reshape(t, {s[0], s[1], num_heads, d});
    return permute(r, {0, 2, 1, 3});
}

Tensor merge_heads(const Tensor& t) {
    const auto& s = t.shape();
    if (s.size() != 4) throw ShapeError("merge_heads: want [n,h,T,d], got " + shape_str(s));
    Tensor r = permute(t, {0, 2, 1, 3});
    return reshape(r, {s[0], s[2], s[1] * s[3]});
}

Tensor token_to_token_attention(const Tensor& q, const Tensor& kg, const Tensor& vg) {
    const auto& sq = q.shape();
    const auto& sk = kg.shape();
    if (sq.size() != 4 || sk.size() != 4 || sq[3] != sk[3]) {
        throw ShapeError("token_to_token_attention: want [n,h,T,d] x [n,h,S,d], got " + shape_str(sq) +
                         " and " + shape_str(sk));
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(sq[3]));
    Tensor scores;
    {
        FlopMeter::Section section(kFlopSectionAttention);
        scores = matmul(q, transpose_last2(kg));
    }
    scores = mul_scalar(scores, scale);
    Tensor weights = softmax_lastdim(scores);
    FlopMeter::Section section(kFlopSectionAttentionValues);
    return matmul(weights, vg);
}

namespace {

Tensor output_projection(const Tensor& merged, const AttnWeights& w) {
    Tensor y = matmul(merged, w.wo);
    if (w.bo.defined()) y = add_rowvec(y, w.bo);
    return y;
}

// Expand the [(2M-1)^2, heads] table into the [heads, T, T] additive bias.
Tensor expand_relpos_bias(const Tensor& table, std::size_t window, std::size_t num_heads) {
    const std::size_t rows = relpos_table_rows(window);
    const std::size_t t = window * window;
    if (table.shape() != std::vector<std::size_t>{rows, num_heads}) {
        throw ShapeError("relative position table must be [" + std::to_string(rows) + ", " +
                         std::to_string(num_heads) + "], got " + shape_str(table.shape()));
    }
    Tensor picked = index_rows(table, relative_position_index(window));  // [T*T, heads]
    Tensor shaped = reshape(picked, {t, t, num_heads});
    return permute(shaped, {2, 0, 1});
}

}  // namespace

Tensor fgca_forward(const Tensor& x, const AttentionConfig& cfg, const AttnWeights& w, Mode mode,
                    FgcaTrace* trace) {
    cfg.validate();
    auto [xw, grid] = win::partition_windows(x, cfg.window);

    auto [q, k, v] = project_qkv(xw, w);

    // Routing on head-merged descriptors: one decision per region, shared
    // across heads. Selection is a constant discontinuity; no gradient
    // flows through the adjacency.
    Tensor qr = region_descriptors(q);
    Tensor kr = region_descriptors(k);
    RoutingResult routing = route_topk(qr, kr, cfg.topk(mode));
    if (trace) {
        trace->captured = true;
        trace->routing = routing;
        trace->grid = grid;
    }

    auto [kg, vg] = gather_kv(k, v, routing);

    Tensor qh = split_heads(q, cfg.num_heads);
    Tensor kh = split_heads(kg, cfg.num_heads);
    Tensor vh = split_heads(vg, cfg.num_heads);
    Tensor out = token_to_token_attention(qh, kh, vh);

    Tensor merged = output_projection(merge_heads(out), w);
    return win::merge_windows(merged, grid);
}

std::size_t relpos_table_rows(std::size_t window) {
    return (2 * window - 1) * (2 * window - 1);
}

std::vector<std::size_t> relative_position_index(std::size_t window) {
    const std::size_t t = window * window;
    std::vector<std::size_t> index(t * t);
    const long m = static_cast<long>(window);
    for (std::size_t a = 0; a < t; ++a) {
        const long ya = static_cast<long>(a) / m, xa = static_cast<long>(a) % m;
        for (std::size_t b = 0; b < t; ++b) {
            const long yb = static_cast<long>(b) / m, xb = static_cast<long>(b) % m;
            const long dy = ya - yb + m - 1;
            const long dx = xa - xb + m - 1;
            index[a * t + b] = static_cast<std::size_t>(dy * (2 * m - 1) + dx);
        }
    }
    return index;
}

Tensor window_attention(const Tensor& x, const AttentionConfig& cfg, const AttnWeights& w,
                        std::size_t shift, WindowAttnTrace* trace) {
    cfg.validate();
    if (x.rank() != 3) throw ShapeError("window_attention: want [H,W,C], got " + shape_str(x.shape()));
    if (shift >= cfg.window) {
        throw ValueError("window_attention: shift " + std::to_string(shift) + " must be < window " +
                         std::to_string(cfg.window));
    }

    win::RegionGrid grid = win::make_grid(x.shape()[0], x.shape()[1], cfg.window);
    Tensor padded = win::pad_to_grid(x, grid);
    if (shift > 0) {
        padded = win::cyclic_shift(padded, -static_cast<long>(shift), -static_cast<long>(shift));
    }
    Tensor xw = win::partition_padded(padded, grid);

    auto [q, k, v] = project_qkv(xw, w);
    Tensor qh = split_heads(q, cfg.num_heads);
    Tensor kh = split_heads(k, cfg.num_heads);
    Tensor vh = split_heads(v, cfg.num_heads);

    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));
    Tensor scores = mul_scalar(matmul(qh, transpose_last2(kh)), scale);

    if (w.relpos.defined()) {
        Tensor bias = expand_relpos_bias(w.relpos, cfg.window, cfg.num_heads);
        scores = add_broadcast_axis0(scores, bias);
    }

    Tensor mask = win::shift_attention_mask(grid, shift);
    if (shift > 0) {
        scores = add_broadcast_axis1(scores, mask);
    }

    Tensor weights = softmax_lastdim(scores);
    if (trace) {
        trace->captured = true;
        trace->attn_weights = weights;
        trace->mask = mask;
    }

    Tensor out = matmul(weights, vh);
    Tensor merged = output_projection(merge_heads(out), w);

    Tensor map = win::merge_padded(merged, grid);
    if (shift > 0) {
        map = win::cyclic_shift(map, static_cast<long>(shift), static_cast<long>(shift));
    }
    if (grid.pad_bottom > 0 || grid.pad_right > 0) {
        map = crop2d(map, grid.feature_h, grid.feature_w);
    }
    return map;
}

}  // namespace sscan::attn
