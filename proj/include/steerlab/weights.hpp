#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "steerlab/error.hpp"
#include "steerlab/rng.hpp"
#include "steerlab/tensor.hpp"

namespace steerlab {

/// Hyperparameters of the pre-LN decoder-only transformer.
struct ModelConfig {
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t vocab_size = 257;
    std::size_t max_seq_len = 256;
    double ln_epsilon = 1e-5;

    std::size_t head_dim() const { return d_model / n_heads; }
    std::size_t d_mlp() const { return 4 * d_model; }

    void validate() const
    {
        if (d_model == 0 || n_layers == 0 || n_heads == 0 || vocab_size == 0) {
            throw InvalidArgument("model dimensions must all be >= 1");
        }
        if (d_model % n_heads != 0) {
            throw InvalidArgument("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                                  std::to_string(n_heads) + ")");
        }
        if (max_seq_len < 2) throw InvalidArgument("max_seq_len must be >= 2");
        if (!(ln_epsilon > 0.0)) throw InvalidArgument("ln_epsilon must be positive");
    }

    bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c)
{
    j = nlohmann::json{{"d_model", c.d_model},         {"n_layers", c.n_layers},
                       {"n_heads", c.n_heads},         {"vocab_size", c.vocab_size},
                       {"max_seq_len", c.max_seq_len}, {"ln_epsilon", c.ln_epsilon}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c)
{
    try {
        j.at("d_model").get_to(c.d_model);
        j.at("n_layers").get_to(c.n_layers);
        j.at("n_heads").get_to(c.n_heads);
        j.at("vocab_size").get_to(c.vocab_size);
        j.at("max_seq_len").get_to(c.max_seq_len);
        c.ln_epsilon = j.value("ln_epsilon", 1e-5);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("model config: ") + e.what());
    }
}

/// Named parameter tensors. Immutable once a Model is built from it.
using WeightStore = std::map<std::string, Tensor>;

namespace weight_names {

inline std::string block(std::size_t layer, const std::string& leaf)
{
    return "blocks." + std::to_string(layer) + "." + leaf;
}

inline const std::string kTokenEmbedding = "wte";
inline const std::string kPositionEmbedding = "wpe";
inline const std::string kFinalNormWeight = "ln_f.weight";
inline const std::string kFinalNormBias = "ln_f.bias";
inline const std::string kUnembedding = "unembed";

}  // namespace weight_names

/// Every tensor a model with `config` must carry, with its shape.
inline std::map<std::string, std::vector<std::size_t>> expected_shapes(const ModelConfig& config)
{
    const std::size_t d = config.d_model;
    const std::size_t m = config.d_mlp();
    std::map<std::string, std::vector<std::size_t>> shapes;
    shapes[weight_names::kTokenEmbedding] = {config.vocab_size, d};
    shapes[weight_names::kPositionEmbedding] = {config.max_seq_len, d};
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        using weight_names::block;
        shapes[block(l, "ln1.weight")] = {d};
        shapes[block(l, "ln1.bias")] = {d};
        shapes[block(l, "attn.qkv.weight")] = {d, 3 * d};
        shapes[block(l, "attn.qkv.bias")] = {3 * d};
        shapes[block(l, "attn.out.weight")] = {d, d};
        shapes[block(l, "attn.out.bias")] = {d};
        shapes[block(l, "ln2.weight")] = {d};
        shapes[block(l, "ln2.bias")] = {d};
        shapes[block(l, "mlp.in.weight")] = {d, m};
        shapes[block(l, "mlp.in.bias")] = {m};
        shapes[block(l, "mlp.out.weight")] = {m, d};
        shapes[block(l, "mlp.out.bias")] = {d};
    }
    shapes[weight_names::kFinalNormWeight] = {d};
    shapes[weight_names::kFinalNormBias] = {d};
    shapes[weight_names::kUnembedding] = {d, config.vocab_size};
    return shapes;
}

/// Throws ShapeError/FormatError unless `store` matches `config` exactly.
inline void check_store(const ModelConfig& config, const WeightStore& store)
{
    const auto shapes = expected_shapes(config);
    for (const auto& [name, shape] : shapes) {
        auto it = store.find(name);
        if (it == store.end()) throw FormatError("missing tensor '" + name + "'");
        if (it->second.shape != shape) {
            throw ShapeError("tensor '" + name + "' has shape " + shape_string(it->second.shape) + ", expected " +
                             shape_string(shape));
        }
        if (it->second.numel() != Tensor::element_count(shape)) {
            throw ShapeError("tensor '" + name + "' holds " + std::to_string(it->second.numel()) + " values");
        }
    }
    for (const auto& [name, tensor] : store) {
        if (!shapes.contains(name)) throw FormatError("unexpected tensor '" + name + "'");
    }
}

/// GPT-2 style initialisation: N(0, 0.02) for embeddings and projection
/// matrices, layer-norm gains 1, all biases 0. Tensors are filled in name order.
inline WeightStore init_random(const ModelConfig& config, std::uint64_t seed)
{
    config.validate();
    Rng rng(seed);
    WeightStore store;
    for (const auto& [name, shape] : expected_shapes(config)) {
        Tensor t(shape);
        const bool is_bias = name.ends_with(".bias");
        const bool is_norm_gain = name.ends_with(".weight") && name.find("ln") != std::string::npos;
        if (is_norm_gain) {
            std::fill(t.data.begin(), t.data.end(), 1.0f);
        } else if (!is_bias) {
            for (float& x : t.data) x = static_cast<float>(0.02 * rng.normal());
        }
        store.emplace(name, std::move(t));
    }
    return store;
}

}  // namespace steerlab
