// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sscan/attention.hpp"
#include "sscan/tensor.hpp"

namespace sscan::model {

enum class LayerOrder { fgca_first, wa_first, wa_only };

const char* layer_order_name(LayerOrder order);

struct ModelConfig {
    std::size_t in_channels = 3;
    std::size_t embed_dim = 60;
    std::size_t n_sscan_blocks = 4;   // stacked residual blocks
    std::size_t n_fgca_blocks = 2;    // FGCA blocks per residual block
    std::size_t window = 8;
    std::size_t num_heads = 6;
    std::size_t mlp_ratio = 2;
    std::size_t scale = 4;
    LayerOrder layer_order = LayerOrder::fgca_first;
    std::size_t topk_train = 32;
    std::size_t topk_infer = 64;
    bool qkv_bias = true;

    void validate() const;
    attn::AttentionConfig attention() const;

    // Tiny configuration used by gradient checks and toy training.
    static ModelConfig micro();
};

// Ordered name -> tensor map. Iteration and serialization follow
// insertion order; names are unique.
class WeightStore {
public:
    void insert(const std::string& name, Tensor t);
    bool contains(const std::string& name) const;
    const Tensor& get(const std::string& name) const;
    Tensor& get(const std::string& name);

    std::size_t size() const { return entries_.size(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    std::vector<Tensor> parameters() const;
    void set_requires_grad(bool requires_grad);
    std::uint64_t total_scalars() const;

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Every learned tensor of the configured model, in definition order.
std::vector<std::pair<std::string, std::vector<std::size_t>>> parameter_shapes(const ModelConfig& cfg);

// Exact learned-scalar count.
std::uint64_t count_params(const ModelConfig& cfg);

// Truncated-normal attention/linear weights (std 0.02, cut at 2 std),
// fan-in-scaled normal convolutions, zero biases, unit layer-norm gains.
// Deterministic by seed.
WeightStore init_weights(const ModelConfig& cfg, std::uint64_t seed);

// Throws if the store does not contain exactly the configured parameters.
void validate_store(const ModelConfig& cfg, const WeightStore& store);

std::uint64_t conv_param_count(std::size_t cin, std::size_t cout, std::size_t k);

struct ForwardTrace {
    attn::FgcaTrace first_fgca;  // routing of the first FGCA unit hit
};

// [C*scale^2, H, W] -> [C, scale*H, scale*W]; channel (c*s^2 + dy*s + dx)
// lands at spatial offset (dy, dx).
Tensor pixel_shuffle(const Tensor& x, std::size_t scale);

Tensor shallow_extract(const Tensor& i_lr, const ModelConfig& cfg, const WeightStore& w);
Tensor fgca_block_forward(const Tensor& x, const ModelConfig& cfg, const WeightStore& w,
                          const std::string& prefix, attn::Mode mode, ForwardTrace* trace = nullptr);
Tensor sscan_block_forward(const Tensor& x, const ModelConfig& cfg, const WeightStore& w,
                           const std::string& prefix, attn::Mode mode, ForwardTrace* trace = nullptr);
Tensor deep_extract(const Tensor& f0, const ModelConfig& cfg, const WeightStore& w, attn::Mode mode,
                    ForwardTrace* trace = nullptr);
Tensor reconstruct(const Tensor& f_df, const ModelConfig& cfg, const WeightStore& w);

// Full pipeline: [C_in, H, W] in [0,1] -> [C_in, scale*H, scale*W].
Tensor forward(const Tensor& i_lr, const ModelConfig& cfg, const WeightStore& w, attn::Mode mode,
               ForwardTrace* trace = nullptr);

// Names of the attention units inside one FGCA block, in execution order.
std::vector<std::string> attention_unit_kinds(LayerOrder order);

}  // namespace sscan::model
