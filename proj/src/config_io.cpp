// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sscan/io.hpp"

namespace sscan::io {

namespace {

using nlohmann::json;

std::size_t take_count(const json& j, const std::string& key, std::size_t fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<std::int64_t>() <= 0) {
        throw ValueError("config: key '" + key + "' must be a positive integer");
    }
    return v.get<std::size_t>();
}

bool take_bool(const json& j, const std::string& key, bool fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_boolean()) throw ValueError("config: key '" + key + "' must be a boolean");
    return v.get<bool>();
}

model::LayerOrder take_layer_order(const json& j, const std::string& key,
                                   model::LayerOrder fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_string()) throw ValueError("config: key '" + key + "' must be a string");
    const std::string s = v.get<std::string>();
    if (s == "fgca_first") return model::LayerOrder::fgca_first;
    if (s == "wa_first") return model::LayerOrder::wa_first;
    if (s == "wa_only") return model::LayerOrder::wa_only;
    throw ValueError("config: key '" + key + "' must be one of fgca_first|wa_first|wa_only, got '" +
                     s + "'");
}

const std::set<std::string> kKnownKeys = {
    "in_channels", "embed_dim",  "n_sscan_blocks", "n_fgca_blocks",
    "window_size", "num_heads",  "mlp_ratio",      "scale",
    "layer_order", "topk_train", "topk_infer",     "qkv_bias",
};

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ValueError(std::string("config: malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw ValueError("config: top level must be a JSON object");

    for (const auto& [key, _] : j.items()) {
        if (!kKnownKeys.count(key)) throw ValueError("config: unknown key '" + key + "'");
    }

    model::ModelConfig cfg;  // defaults
    cfg.in_channels = take_count(j, "in_channels", cfg.in_channels);
    cfg.embed_dim = take_count(j, "embed_dim", cfg.embed_dim);
    cfg.n_sscan_blocks = take_count(j, "n_sscan_blocks", cfg.n_sscan_blocks);
    cfg.n_fgca_blocks = take_count(j, "n_fgca_blocks", cfg.n_fgca_blocks);
    cfg.window = take_count(j, "window_size", cfg.window);
    cfg.num_heads = take_count(j, "num_heads", cfg.num_heads);
    cfg.mlp_ratio = take_count(j, "mlp_ratio", cfg.mlp_ratio);
    cfg.scale = take_count(j, "scale", cfg.scale);
    cfg.layer_order = take_layer_order(j, "layer_order", cfg.layer_order);
    cfg.topk_train = take_count(j, "topk_train", cfg.topk_train);
    cfg.topk_infer = take_count(j, "topk_infer", cfg.topk_infer);
    cfg.qkv_bias = take_bool(j, "qkv_bias", cfg.qkv_bias);

    if (cfg.scale < 2 || cfg.scale > 4) {
        throw ValueError("config: key 'scale' must be one of {2,3,4}, got " +
                         std::to_string(cfg.scale));
    }
    if (cfg.embed_dim % cfg.num_heads != 0) {
        throw ValueError("config: key 'embed_dim' (" + std::to_string(cfg.embed_dim) +
                         ") must be divisible by 'num_heads' (" + std::to_string(cfg.num_heads) + ")");
    }
    cfg.validate();

    return RunConfig{cfg, cfg.attention()};
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

}  // namespace sscan::io
