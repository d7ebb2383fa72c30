// SPDX-License-Identifier: Apache-2.0

#include "sscan/model.hpp"

#include <cmath>
#include <random>

namespace sscan::model {

const char* layer_order_name(LayerOrder order) {
    switch (order) {
        case LayerOrder::fgca_first: return "fgca_first";
        case LayerOrder::wa_first: return "wa_first";
        case LayerOrder::wa_only: return "wa_only";
    }
    return "?";
}

void ModelConfig::validate() const {
    if (in_channels == 0) throw ValueError("config: in_channels must be >= 1");
    if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0) {
        throw ValueError("config: embed_dim (" + std::to_string(embed_dim) +
                         ") must be a positive multiple of num_heads (" + std::to_string(num_heads) +
                         ")");
    }
    if (scale < 2 || scale > 4) {
        throw ValueError("config: scale must be one of {2,3,4}, got " + std::to_string(scale));
    }
    if (window == 0) throw ValueError("config: window must be >= 1");
    if (n_sscan_blocks == 0 || n_fgca_blocks == 0) {
        throw ValueError("config: block counts must be >= 1");
    }
    if (mlp_ratio == 0) throw ValueError("config: mlp_ratio must be >= 1");
    if (topk_train == 0 || topk_infer == 0) throw ValueError("config: top-k must be >= 1");
}

attn::AttentionConfig ModelConfig::attention() const {
    attn::AttentionConfig a;
    a.window = window;
    a.num_heads = num_heads;
    a.head_dim = embed_dim / num_heads;
    a.topk_train = topk_train;
    a.topk_infer = topk_infer;
    a.qkv_bias = qkv_bias;
    return a;
}

ModelConfig ModelConfig::micro() {
    ModelConfig cfg;
    cfg.in_channels = 3;
    cfg.embed_dim = 8;
    cfg.n_sscan_blocks = 1;
    cfg.n_fgca_blocks = 1;
    cfg.window = 4;
    cfg.num_heads = 2;
    cfg.mlp_ratio = 2;
    cfg.scale = 2;
    cfg.topk_train = 4;
    cfg.topk_infer = 8;
    return cfg;
}

// ---- WeightStore -----------------------------------------------------------

void WeightStore::insert(const std::string& name, Tensor t) {
    if (index_.count(name)) throw ValueError("weight store: duplicate name '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, std::move(t));
}

bool WeightStore::contains(const std::string& name) const { return index_.count(name) > 0; }

const Tensor& WeightStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValueError("weight store: missing parameter '" + name + "'");
    return entries_[it->second].second;
}

Tensor& WeightStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValueError("weight store: missing parameter '" + name + "'");
    return entries_[it->second].second;
}

std::vector<Tensor> WeightStore::parameters() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& [_, t] : entries_) out.push_back(t);
    return out;
}

void WeightStore::set_requires_grad(bool requires_grad) {
    for (auto& [_, t] : entries_) t.set_requires_grad(requires_grad);
}

std::uint64_t WeightStore::total_scalars() const {
    std::uint64_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
}

// ---- parameter enumeration ---------------------------------------------------

std::vector<std::string> attention_unit_kinds(LayerOrder order) {
    switch (order) {
        case LayerOrder::fgca_first: return {"fgca", "wa", "swa"};
        case LayerOrder::wa_first: return {"wa", "swa", "fgca"};
        case LayerOrder::wa_only: return {"wa", "swa"};
    }
    return {};
}

namespace {

using ShapeList = std::vector<std::pair<std::string, std::vector<std::size_t>>>;

void push_linear(ShapeList& out, const std::string& name, std::size_t in, std::size_t wide,
                 bool bias) {
    out.emplace_back(name + ".weight", std::vector<std::size_t>{in, wide});
    if (bias) out.emplace_back(name + ".bias", std::vector<std::size_t>{wide});
}

void push_conv(ShapeList& out, const std::string& name, std::size_t cin, std::size_t cout,
               std::size_t k) {
    out.emplace_back(name + ".weight", std::vector<std::size_t>{cout, cin, k, k});
    out.emplace_back(name + ".bias", std::vector<std::size_t>{cout});
}

void push_layer_norm(ShapeList& out, const std::string& name, std::size_t c) {
    out.emplace_back(name + ".gamma", std::vector<std::size_t>{c});
    out.emplace_back(name + ".beta", std::vector<std::size_t>{c});
}

void push_attention_unit(ShapeList& out, const std::string& prefix, const ModelConfig& cfg,
                         const std::string& kind) {
    const std::size_t c = cfg.embed_dim;
    push_layer_norm(out, prefix + ".ln_attn", c);
    push_linear(out, prefix + ".wq", c, c, cfg.qkv_bias);
    push_linear(out, prefix + ".wk", c, c, cfg.qkv_bias);
    push_linear(out, prefix + ".wv", c, c, cfg.qkv_bias);
    push_linear(out, prefix + ".wo", c, c, true);
    if (kind != "fgca") {
        out.emplace_back(prefix + ".relpos",
                         std::vector<std::size_t>{attn::relpos_table_rows(cfg.window), cfg.num_heads});
    }
    push_layer_norm(out, prefix + ".ln_mlp", c);
    push_linear(out, prefix + ".mlp.fc1", c, cfg.mlp_ratio * c, true);
    push_linear(out, prefix + ".mlp.fc2", cfg.mlp_ratio * c, c, true);
}

}  // namespace

ShapeList parameter_shapes(const ModelConfig& cfg) {
    cfg.validate();
    ShapeList out;
    push_conv(out, "shallow", cfg.in_channels, cfg.embed_dim, 3);
    for (std::size_t i = 0; i < cfg.n_sscan_blocks; ++i) {
        const std::string sp = "sscan" + std::to_string(i);
        for (std::size_t j = 0; j < cfg.n_fgca_blocks; ++j) {
            const std::string bp = sp + ".blk" + std::to_string(j);
            for (const auto& kind : attention_unit_kinds(cfg.layer_order)) {
                push_attention_unit(out, bp + "." + kind, cfg, kind);
            }
        }
        push_conv(out, sp + ".conv", cfg.embed_dim, cfg.embed_dim, 3);
    }
    push_conv(out, "body_conv", cfg.embed_dim, cfg.embed_dim, 3);
    push_conv(out, "recon", cfg.embed_dim, cfg.in_channels * cfg.scale * cfg.scale, 3);
    return out;
}

std::uint64_t count_params(const ModelConfig& cfg) {
    std::uint64_t n = 0;
    for (const auto& [_, shape] : parameter_shapes(cfg)) {
        std::uint64_t p = 1;
        for (std::size_t d : shape) p *= d;
        n += p;
    }
    return n;
}

std::uint64_t conv_param_count(std::size_t cin, std::size_t cout, std::size_t k) {
    return static_cast<std::uint64_t>(cin) * cout * k * k + cout;
}

namespace {

double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Box-Muller, pinned so init is bit-reproducible across standard libraries.
double normal_sample(std::mt19937_64& rng) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double trunc_normal_sample(std::mt19937_64& rng, double std_dev) {
    double z = normal_sample(rng);
    while (std::fabs(z) > 2.0) z = normal_sample(rng);
    return z * std_dev;
}

bool is_conv_weight(const std::string& name, const std::vector<std::size_t>& shape) {
    return shape.size() == 4 && name.size() > 7 && name.ends_with(".weight");
}

}  // namespace

WeightStore init_weights(const ModelConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    WeightStore store;
    for (const auto& [name, shape] : parameter_shapes(cfg)) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        std::vector<double> data(n, 0.0);
        if (name.ends_with(".gamma")) {
            std::fill(data.begin(), data.end(), 1.0);
        } else if (name.ends_with(".beta") || name.ends_with(".bias")) {
            // zeros
        } else if (is_conv_weight(name, shape)) {
            const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
            const double std_dev = std::sqrt(2.0 / fan_in);
            for (double& v : data) v = normal_sample(rng) * std_dev;
        } else {
            for (double& v : data) v = trunc_normal_sample(rng, 0.02);
        }
        store.insert(name, Tensor::from_data(shape, std::move(data)));
    }
    return store;
}

void validate_store(const ModelConfig& cfg, const WeightStore& store) {
    const auto expected = parameter_shapes(cfg);
    if (store.size() != expected.size()) {
        throw ValueError("weight store has " + std::to_string(store.size()) + " tensors, config wants " +
                         std::to_string(expected.size()));
    }
    for (const auto& [name, shape] : expected) {
        if (!store.contains(name)) throw ValueError("weight store: missing parameter '" + name + "'");
        if (store.get(name).shape() != shape) {
            throw ValueError("weight store: parameter '" + name + "' has shape " +
                             shape_str(store.get(name).shape()) + ", config wants " + shape_str(shape));
        }
    }
}

// ---- forward ------------------------------------------------------------------

namespace {

attn::AttnWeights unit_weights(const WeightStore& w, const std::string& prefix, bool qkv_bias,
                               bool relpos) {
    attn::AttnWeights u;
    u.wq = w.get(prefix + ".wq.weight");
    u.wk = w.get(prefix + ".wk.weight");
    u.wv = w.get(prefix + ".wv.weight");
    u.wo = w.get(prefix + ".wo.weight");
    u.bo = w.get(prefix + ".wo.bias");
    if (qkv_bias) {
        u.bq = w.get(prefix + ".wq.bias");
        u.bk = w.get(prefix + ".wk.bias");
        u.bv = w.get(prefix + ".wv.bias");
    }
    if (relpos) u.relpos = w.get(prefix + ".relpos");
    return u;
}

Tensor mlp_forward(const Tensor& x, const WeightStore& w, const std::string& prefix) {
    Tensor h = add_rowvec(matmul(x, w.get(prefix + ".fc1.weight")), w.get(prefix + ".fc1.bias"));
    h = gelu(h);
    return add_rowvec(matmul(h, w.get(prefix + ".fc2.weight")), w.get(prefix + ".fc2.bias"));
}

Tensor conv_on_hwc(const Tensor& x_hwc, const WeightStore& w, const std::string& prefix) {
    Tensor chw = permute(x_hwc, {2, 0, 1});
    Tensor y = conv2d(chw, w.get(prefix + ".weight"), w.get(prefix + ".bias"), 1, 1);
    return permute(y, {1, 2, 0});
}

}  // namespace

Tensor pixel_shuffle(const Tensor& x, std::size_t scale) {
    const auto& s = x.shape();
    if (s.size() != 3) throw ShapeError("pixel_shuffle: want [C,H,W], got " + shape_str(s));
    if (scale == 0 || s[0] % (scale * scale) != 0) {
        throw ShapeError("pixel_shuffle: channels " + std::to_string(s[0]) +
                         " not divisible by scale^2 = " + std::to_string(scale * scale));
    }
    const std::size_t c = s[0] / (scale * scale), h = s[1], w = s[2];
    Tensor t = reshape(x, {c, scale, scale, h, w});
    t = permute(t, {0, 3, 1, 4, 2});  // [C, H, sy, W, sx]
    return reshape(t, {c, h * scale, w * scale});
}

Tensor shallow_extract(const Tensor& i_lr, const ModelConfig& cfg, const WeightStore& w) {
    if (i_lr.rank() != 3 || i_lr.shape()[0] != cfg.in_channels) {
        throw ShapeError("shallow_extract: want [" + std::to_string(cfg.in_channels) +
                         ",H,W], got " + shape_str(i_lr.shape()));
    }
    return conv2d(i_lr, w.get("shallow.weight"), w.get("shallow.bias"), 1, 1);
}

Tensor fgca_block_forward(const Tensor& x, const ModelConfig& cfg, const WeightStore& w,
                          const std::string& prefix, attn::Mode mode, ForwardTrace* trace) {
    const attn::AttentionConfig acfg = cfg.attention();
    Tensor h = x;
    for (const auto& kind : attention_unit_kinds(cfg.layer_order)) {
        const std::string up = prefix + "." + kind;
        Tensor normed = layer_norm(h, w.get(up + ".ln_attn.gamma"), w.get(up + ".ln_attn.beta"));
        Tensor attended;
        if (kind == "fgca") {
            attn::FgcaTrace* ft = nullptr;
            if (trace && !trace->first_fgca.captured) ft = &trace->first_fgca;
            attended = attn::fgca_forward(normed, acfg, unit_weights(w, up, cfg.qkv_bias, false),
                                          mode, ft);
        } else {
            const std::size_t shift = kind == "swa" ? cfg.window / 2 : 0;
            attended =
                attn::window_attention(normed, acfg, unit_weights(w, up, cfg.qkv_bias, true), shift);
        }
        h = add(h, attended);
        Tensor normed2 = layer_norm(h, w.get(up + ".ln_mlp.gamma"), w.get(up + ".ln_mlp.beta"));
        h = add(h, mlp_forward(normed2, w, up + ".mlp"));
    }
    return h;
}

Tensor sscan_block_forward(const Tensor& x, const ModelConfig& cfg, const WeightStore& w,
                           const std::string& prefix, attn::Mode mode, ForwardTrace* trace) {
    Tensor h = x;
    for (std::size_t j = 0; j < cfg.n_fgca_blocks; ++j) {
        h = fgca_block_forward(h, cfg, w, prefix + ".blk" + std::to_string(j), mode, trace);
    }
    h = conv_on_hwc(h, w, prefix + ".conv");
    return add(h, x);
}

Tensor deep_extract(const Tensor& f0, const ModelConfig& cfg, const WeightStore& w, attn::Mode mode,
                    ForwardTrace* trace) {
    // f0 arrives as [C,H,W] from the shallow conv; attention runs on [H,W,C].
    Tensor h = permute(f0, {1, 2, 0});
    for (std::size_t i = 0; i < cfg.n_sscan_blocks; ++i) {
        h = sscan_block_forward(h, cfg, w, "sscan" + std::to_string(i), mode, trace);
    }
    Tensor chw = permute(h, {2, 0, 1});
    chw = conv2d(chw, w.get("body_conv.weight"), w.get("body_conv.bias"), 1, 1);
    return add(chw, f0);
}

Tensor reconstruct(const Tensor& f_df, const ModelConfig& cfg, const WeightStore& w) {
    Tensor expanded = conv2d(f_df, w.get("recon.weight"), w.get("recon.bias"), 1, 1);
    return pixel_shuffle(expanded, cfg.scale);
}

Tensor forward(const Tensor& i_lr, const ModelConfig& cfg, const WeightStore& w, attn::Mode mode,
               ForwardTrace* trace) {
    cfg.validate();
    Tensor f0 = shallow_extract(i_lr, cfg, w);
    Tensor f_df = deep_extract(f0, cfg, w, mode, trace);
    return reconstruct(f_df, cfg, w);
}

}  // namespace sscan::model
