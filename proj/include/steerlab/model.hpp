#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "steerlab/activation.hpp"
#include "steerlab/error.hpp"
#include "steerlab/hooks.hpp"
#include "steerlab/rng.hpp"
#include "steerlab/tensor.hpp"
#include "steerlab/tokenizer.hpp"
#include "steerlab/weights.hpp"
#include "steerlab/weights_io.hpp"

namespace steerlab {

/// A loaded pre-LN GPT-2 style transformer. Immutable; cheap to copy (the
/// weights are shared), safe to use from several threads at once.
class Model {
public:
    Model(ModelConfig config, WeightStore store) : config_(config)
    {
        config_.validate();
        fingerprint_ = weights_fingerprint(config_, store);
        store_ = std::make_shared<const WeightStore>(std::move(store));
    }

    static Model from_file(const std::filesystem::path& path)
    {
        auto loaded = load_weights(path);
        return Model(loaded.config, std::move(loaded.store));
    }

    static Model random(const ModelConfig& config, std::uint64_t seed)
    {
        return Model(config, init_random(config, seed));
    }

    const ModelConfig& config() const { return config_; }
    const WeightStore& weights() const { return *store_; }
    const Tensor& weight(const std::string& name) const { return store_->at(name); }
    const std::string& fingerprint() const { return fingerprint_; }
    ByteTokenizer tokenizer() const { return ByteTokenizer(config_.vocab_size); }

private:
    ModelConfig config_;
    std::shared_ptr<const WeightStore> store_;
    std::string fingerprint_;
};

struct ForwardResult {
    Tensor logits;  // [seq_len x vocab_size]
    std::vector<ActivationRecord> captured;
};

namespace detail {

// out[r, :] = a[r, :] * w + bias
inline void linear(const std::vector<float>& a, std::size_t rows, const Tensor& w, const Tensor* bias,
                   std::vector<float>& out)
{
    const std::size_t in = w.rows();
    const std::size_t cols = w.cols();
    out.assign(rows * cols, 0.0f);
    for (std::size_t r = 0; r < rows; ++r) {
        float* o = out.data() + r * cols;
        if (bias) std::copy(bias->data.begin(), bias->data.end(), o);
        const float* ar = a.data() + r * in;
        for (std::size_t k = 0; k < in; ++k) {
            const float av = ar[k];
            const float* wr = w.data.data() + k * cols;
            for (std::size_t c = 0; c < cols; ++c) o[c] += av * wr[c];
        }
    }
}

inline void layer_norm_row(std::span<const float> x, const Tensor& gain, const Tensor& bias, double eps,
                           std::span<float> out)
{
    double mean = 0.0;
    for (float v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double var = 0.0;
    for (float v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.size());
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = static_cast<float>((x[i] - mean) * inv) * gain.data[i] + bias.data[i];
    }
}

inline void layer_norm(const std::vector<float>& x, std::size_t rows, std::size_t d, const Tensor& gain,
                       const Tensor& bias, double eps, std::vector<float>& out)
{
    out.resize(rows * d);
    for (std::size_t r = 0; r < rows; ++r) {
        layer_norm_row({x.data() + r * d, d}, gain, bias, eps, {out.data() + r * d, d});
    }
}

// tanh approximation, as in GPT-2
inline float gelu(float x)
{
    constexpr float k = 0.7978845608028654f;  // sqrt(2/pi)
    return 0.5f * x * (1.0f + std::tanh(k * (x + 0.044715f * x * x * x)));
}

inline std::vector<std::size_t> hook_positions(const HookSpec& hook, std::size_t seq_len)
{
    switch (hook.positions) {
        case PositionPolicy::final: return {seq_len - 1};
        case PositionPolicy::explicit_list: return hook.explicit_positions;
        case PositionPolicy::all: break;
    }
    std::vector<std::size_t> all(seq_len);
    for (std::size_t i = 0; i < seq_len; ++i) all[i] = i;
    return all;
}

inline void run_hooks(std::size_t layer, Site site, std::vector<float>& act, std::size_t seq_len, std::size_t d,
                      std::span<const HookSpec> hooks, std::vector<std::vector<ActivationRecord>>& slots)
{
    for (const HookSpec& h : hooks) {
        if (h.layer != layer || h.site != site || h.mode != HookMode::add) continue;
        for (std::size_t p : hook_positions(h, seq_len)) {
            float* row = act.data() + p * d;
            for (std::size_t i = 0; i < d; ++i) row[i] += h.scale * h.vector[i];
        }
    }
    for (std::size_t k = 0; k < hooks.size(); ++k) {
        const HookSpec& h = hooks[k];
        if (h.layer != layer || h.site != site || h.mode != HookMode::capture) continue;
        for (std::size_t p : hook_positions(h, seq_len)) {
            ActivationRecord rec;
            rec.vector.assign(act.begin() + static_cast<std::ptrdiff_t>(p * d),
                              act.begin() + static_cast<std::ptrdiff_t>((p + 1) * d));
            rec.layer = layer;
            rec.site = site;
            rec.position = p;
            slots[k].push_back(std::move(rec));
        }
    }
}

inline void validate_inputs(const ModelConfig& config, std::span<const TokenId> tokens, std::span<const HookSpec> hooks)
{
    if (tokens.empty()) throw InvalidArgument("forward: empty token sequence");
    if (tokens.size() > config.max_seq_len) {
        throw InvalidArgument("forward: sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                              std::to_string(config.max_seq_len));
    }
    for (TokenId t : tokens) {
        if (t >= config.vocab_size) throw InvalidArgument("forward: token id " + std::to_string(t) + " out of range");
    }
    for (const HookSpec& h : hooks) {
        if (h.layer >= config.n_layers) {
            throw InvalidArgument("hook layer " + std::to_string(h.layer) + " out of range for a " +
                                  std::to_string(config.n_layers) + "-layer model");
        }
        if (h.mode == HookMode::add && h.vector.size() != config.d_model) {
            throw InvalidArgument("add hook vector has length " + std::to_string(h.vector.size()) + ", expected " +
                                  std::to_string(config.d_model));
        }
        if (h.positions == PositionPolicy::explicit_list) {
            for (std::size_t p : h.explicit_positions) {
                if (p >= tokens.size()) throw InvalidArgument("hook position " + std::to_string(p) + " out of range");
            }
        }
    }
}

}  // namespace detail

/// Runs the model over `tokens`, applying add hooks and recording capture hooks.
/// Captured records are grouped by hook, in hook order, ascending position.
inline ForwardResult forward(const Model& model, std::span<const TokenId> tokens, std::span<const HookSpec> hooks = {})
{
    const ModelConfig& cfg = model.config();
    detail::validate_inputs(cfg, tokens, hooks);

    const std::size_t seq = tokens.size();
    const std::size_t d = cfg.d_model;
    const std::size_t n_heads = cfg.n_heads;
    const std::size_t hd = cfg.head_dim();
    using weight_names::block;

    std::vector<std::vector<ActivationRecord>> slots(hooks.size());

    const Tensor& wte = model.weight(weight_names::kTokenEmbedding);
    const Tensor& wpe = model.weight(weight_names::kPositionEmbedding);
    std::vector<float> x(seq * d);
    for (std::size_t t = 0; t < seq; ++t) {
        auto te = wte.row(tokens[t]);
        auto pe = wpe.row(t);
        for (std::size_t i = 0; i < d; ++i) x[t * d + i] = te[i] + pe[i];
    }

    std::vector<float> h, qkv, z(seq * d), branch, hidden;
    std::vector<float> scores(seq);
    const float inv_sqrt_hd = 1.0f / std::sqrt(static_cast<float>(hd));

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        detail::run_hooks(l, Site::resid_pre, x, seq, d, hooks, slots);

        detail::layer_norm(x, seq, d, model.weight(block(l, "ln1.weight")), model.weight(block(l, "ln1.bias")),
                           cfg.ln_epsilon, h);
        detail::linear(h, seq, model.weight(block(l, "attn.qkv.weight")), &model.weight(block(l, "attn.qkv.bias")),
                       qkv);
        for (std::size_t head = 0; head < n_heads; ++head) {
            const std::size_t qo = head * hd;
            const std::size_t ko = d + head * hd;
            const std::size_t vo = 2 * d + head * hd;
            for (std::size_t i = 0; i < seq; ++i) {
                const float* q = qkv.data() + i * 3 * d + qo;
                float max_score = -INFINITY;
                for (std::size_t j = 0; j <= i; ++j) {
                    const float* k = qkv.data() + j * 3 * d + ko;
                    float s = 0.0f;
                    for (std::size_t c = 0; c < hd; ++c) s += q[c] * k[c];
                    scores[j] = s * inv_sqrt_hd;
                    max_score = std::max(max_score, scores[j]);
                }
                float denom = 0.0f;
                for (std::size_t j = 0; j <= i; ++j) {
                    scores[j] = std::exp(scores[j] - max_score);
                    denom += scores[j];
                }
                float* out = z.data() + i * d + head * hd;
                std::fill(out, out + hd, 0.0f);
                for (std::size_t j = 0; j <= i; ++j) {
                    const float p = scores[j] / denom;
                    const float* v = qkv.data() + j * 3 * d + vo;
                    for (std::size_t c = 0; c < hd; ++c) out[c] += p * v[c];
                }
            }
        }
        detail::linear(z, seq, model.weight(block(l, "attn.out.weight")), &model.weight(block(l, "attn.out.bias")),
                       branch);
        detail::run_hooks(l, Site::attn_out, branch, seq, d, hooks, slots);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += branch[i];

        detail::layer_norm(x, seq, d, model.weight(block(l, "ln2.weight")), model.weight(block(l, "ln2.bias")),
                           cfg.ln_epsilon, h);
        detail::linear(h, seq, model.weight(block(l, "mlp.in.weight")), &model.weight(block(l, "mlp.in.bias")), hidden);
        for (float& v : hidden) v = detail::gelu(v);
        detail::linear(hidden, seq, model.weight(block(l, "mlp.out.weight")), &model.weight(block(l, "mlp.out.bias")),
                       branch);
        detail::run_hooks(l, Site::mlp_out, branch, seq, d, hooks, slots);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += branch[i];

        detail::run_hooks(l, Site::resid_post, x, seq, d, hooks, slots);
    }

    detail::layer_norm(x, seq, d, model.weight(weight_names::kFinalNormWeight),
                       model.weight(weight_names::kFinalNormBias), cfg.ln_epsilon, h);
    ForwardResult result;
    std::vector<float> logits;
    detail::linear(h, seq, model.weight(weight_names::kUnembedding), nullptr, logits);
    result.logits.shape = {seq, cfg.vocab_size};
    result.logits.data = std::move(logits);
    for (auto& slot : slots) {
        for (auto& rec : slot) result.captured.push_back(std::move(rec));
    }
    return result;
}

/// Decoding strategy. Temperature sampling is deterministic for a fixed seed.
struct Sampling {
    enum class Kind { greedy, temperature };
    Kind kind = Kind::greedy;
    double temperature = 1.0;
    std::uint64_t seed = 0;

    static Sampling greedy() { return {}; }
    static Sampling with_temperature(double tau, std::uint64_t seed)
    {
        if (!(tau > 0.0)) throw InvalidArgument("temperature must be positive");
        return {Kind::temperature, tau, seed};
    }
};

/// Index of the largest logit; ties go to the lowest id.
inline TokenId argmax_token(std::span<const float> logits)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) best = i;
    }
    return static_cast<TokenId>(best);
}

inline TokenId sample_token(std::span<const float> logits, double temperature, Rng& rng)
{
    const float max_logit = *std::max_element(logits.begin(), logits.end());
    std::vector<double> weights(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        weights[i] = std::exp((static_cast<double>(logits[i]) - max_logit) / temperature);
        total += weights[i];
    }
    double u = rng.uniform() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        u -= weights[i];
        if (u < 0.0) return static_cast<TokenId>(i);
    }
    return static_cast<TokenId>(weights.size() - 1);
}

/// Autoregressive decoding; returns prompt followed by `n_tokens` new tokens.
///
/// Hooks with the `final` policy act at the last position of every decoding
/// step. Positions that were last in an earlier step keep their intervention,
/// matching what a key/value-cached decoder would have computed for them.
inline TokenSequence generate(const Model& model, TokenSequence prompt, std::size_t n_tokens, const Sampling& sampling,
                              std::span<const HookSpec> hooks = {})
{
    if (prompt.empty()) throw InvalidArgument("generate: empty prompt");
    if (prompt.size() + n_tokens > model.config().max_seq_len) {
        throw InvalidArgument("generate: prompt of " + std::to_string(prompt.size()) + " tokens plus " +
                              std::to_string(n_tokens) + " new tokens exceeds max_seq_len " +
                              std::to_string(model.config().max_seq_len));
    }
    Rng rng(sampling.seed);
    const std::size_t first_steered = prompt.size() - 1;
    TokenSequence seq = std::move(prompt);
    std::vector<HookSpec> step_hooks(hooks.begin(), hooks.end());
    for (std::size_t step = 0; step < n_tokens; ++step) {
        for (std::size_t k = 0; k < hooks.size(); ++k) {
            if (hooks[k].positions != PositionPolicy::final) continue;
            step_hooks[k].positions = PositionPolicy::explicit_list;
            step_hooks[k].explicit_positions.clear();
            for (std::size_t p = first_steered; p < seq.size(); ++p) step_hooks[k].explicit_positions.push_back(p);
        }
        const ForwardResult res = forward(model, seq, step_hooks);
        const auto last = res.logits.row(seq.size() - 1);
        seq.push_back(sampling.kind == Sampling::Kind::greedy ? argmax_token(last)
                                                               : sample_token(last, sampling.temperature, rng));
    }
    return seq;
}

}  // namespace steerlab
