// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <tuple>
#include <utility>
#include <vector>

#include "sscan/tensor.hpp"
#include "sscan/windowing.hpp"

namespace sscan::attn {

enum class Mode { train, infer };

struct AttentionConfig {
    std::size_t window = 8;
    std::size_t num_heads = 6;
    std::size_t head_dim = 10;
    std::size_t topk_train = 32;
    std::size_t topk_infer = 64;
    bool qkv_bias = true;

    std::size_t embed_dim() const { return num_heads * head_dim; }
    std::size_t topk(Mode mode) const { return mode == Mode::train ? topk_train : topk_infer; }
    void validate() const;
};

// Per-region routing decision: raw adjacency scores plus the selected
// key regions, ordered by descending score (ties toward lower index).
struct RoutingResult {
    Tensor adjacency;                                   // [n_regions, n_regions]
    std::vector<std::vector<std::size_t>> topk_indices;  // [n_regions][k_used]
    std::size_t k_used = 0;
};

// One attention unit's parameters. relpos is defined only for WA/SWA
// (table [(2M-1)^2, heads]); bq/bk/bv are undefined when qkv_bias is off.
struct AttnWeights {
    Tensor wq, bq;
    Tensor wk, bk;
    Tensor wv, bv;
    Tensor wo, bo;
    Tensor relpos;
};

// Per-token linear projections; no mixing across tokens.
std::tuple<Tensor, Tensor, Tensor> project_qkv(const Tensor& x_windows, const AttnWeights& w);

// Mean over the token axis: [n, T, C] -> [n, C].
Tensor region_descriptors(const Tensor& t);

// Adjacency = Qr * Kr^T; per row keep the k best-scoring regions.
// k is clamped to the region count.
RoutingResult route_topk(const Tensor& qr, const Tensor& kr, std::size_t k);

// Concatenate each query region's selected key/value windows in routing
// order (best first), preserving intra-window token order.
std::pair<Tensor, Tensor> gather_kv(const Tensor& k, const Tensor& v, const RoutingResult& r);

// Scaled dot-product attention per window and head:
// Q [n,h,T,d] over gathered Kg/Vg [n,h,S,d] -> [n,h,T,d].
Tensor token_to_token_attention(const Tensor& q, const Tensor& kg, const Tensor& vg);

// [n,T,C] <-> [n,heads,T,d] head plumbing.
Tensor split_heads(const Tensor& t, std::size_t num_heads);
Tensor merge_heads(const Tensor& t);

struct FgcaTrace {
    bool captured = false;
    RoutingResult routing;
    win::RegionGrid grid;
};

// Full fine-grained context-aware attention pass on a [H,W,C] map:
// partition -> project -> route top-k -> gather -> attend -> output
// projection -> merge. Shape-preserving.
Tensor fgca_forward(const Tensor& x, const AttentionConfig& cfg, const AttnWeights& w, Mode mode,
                    FgcaTrace* trace = nullptr);

struct WindowAttnTrace {
    bool captured = false;
    Tensor attn_weights;  // [n, heads, T, T] post-softmax
    Tensor mask;          // [n, T, T] additive mask actually applied
};

// Window self-attention with learned relative position bias; shift > 0
// applies the cyclic shift plus its attention mask (SWA).
Tensor window_attention(const Tensor& x, const AttentionConfig& cfg, const AttnWeights& w,
                        std::size_t shift, WindowAttnTrace* trace = nullptr);

// Flattened [T*T] lookup of relative-position bias rows for an MxM window.
std::vector<std::size_t> relative_position_index(std::size_t window);

std::size_t relpos_table_rows(std::size_t window);

// FLOP meter sections tensor ops are tagged with inside fgca_forward.
inline constexpr const char* kFlopSectionRouting = "routing";
inline constexpr const char* kFlopSectionAttention = "attention";
inline constexpr const char* kFlopSectionAttentionValues = "attention_values";

}  // namespace sscan::attn
