#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "steerlab/capture.hpp"
#include "steerlab/error.hpp"
#include "steerlab/model.hpp"

namespace steerlab {

enum class ExtractionMethod { mean_centred, no_centred, actadd, function_vector };

inline std::string_view method_name(ExtractionMethod m)
{
    switch (m) {
        case ExtractionMethod::mean_centred: return "mean_centred";
        case ExtractionMethod::no_centred: return "no_centred";
        case ExtractionMethod::actadd: return "actadd";
        case ExtractionMethod::function_vector: return "function_vector";
    }
    return "?";
}

inline ExtractionMethod parse_method(std::string_view name)
{
    for (auto m : {ExtractionMethod::mean_centred, ExtractionMethod::no_centred, ExtractionMethod::actadd,
                   ExtractionMethod::function_vector}) {
        if (method_name(m) == name) return m;
    }
    throw InvalidArgument("unknown extraction method '" + std::string(name) + "'");
}

/// A steering direction together with where and how it was extracted.
struct DistillationVector {
    std::vector<float> vector;
    std::size_t layer = 0;
    Site site = Site::resid_pre;
    std::string target_dataset_id;
    std::string training_dataset_id;
    std::size_t n = 0;
    std::size_t n_prime = 0;
    ExtractionMethod method = ExtractionMethod::mean_centred;
    std::string model_fingerprint;
};

/// mu_target - mu_training, element-wise.
inline DistillationVector mean_centre(const MeanVector& mu_target, const MeanVector& mu_training)
{
    require_same_origin(mu_target, mu_training, "mean_centre");
    if (mu_target.count == 0 || mu_training.count == 0) throw InvalidArgument("mean_centre: empty mean");
    if (mu_target.vector.size() != mu_training.vector.size()) throw MismatchError("mean_centre: lengths differ");
    DistillationVector dv;
    dv.vector.resize(mu_target.vector.size());
    for (std::size_t i = 0; i < dv.vector.size(); ++i) dv.vector[i] = mu_target.vector[i] - mu_training.vector[i];
    dv.layer = mu_target.layer;
    dv.site = mu_target.site;
    dv.target_dataset_id = mu_target.dataset_id;
    dv.training_dataset_id = mu_training.dataset_id;
    dv.n = mu_target.count;
    dv.n_prime = mu_training.count;
    dv.method = ExtractionMethod::mean_centred;
    dv.model_fingerprint = mu_target.model_fingerprint;
    return dv;
}

/// The uncentred baseline: the target mean used as-is.
inline DistillationVector no_centre(const MeanVector& mu_target)
{
    DistillationVector dv;
    dv.vector = mu_target.vector;
    dv.layer = mu_target.layer;
    dv.site = mu_target.site;
    dv.target_dataset_id = mu_target.dataset_id;
    dv.n = mu_target.count;
    dv.method = ExtractionMethod::no_centred;
    dv.model_fingerprint = mu_target.model_fingerprint;
    return dv;
}

/// Full extraction: capture both corpora, average, subtract.
inline DistillationVector extract_distillation(const Model& model, const Corpus& target, const Corpus& training,
                                               std::size_t layer, Site site, const CaptureOptions& options = {},
                                               const std::string& target_id = "target",
                                               const std::string& training_id = "training")
{
    const MeanVector mu_target = mean_activation(collect_activations(model, target, layer, site, options, target_id));
    const MeanVector mu_training =
        mean_activation(collect_activations(model, training, layer, site, options, training_id));
    return mean_centre(mu_target, mu_training);
}

/// Rescales to unit L2 norm. Steering uses raw vectors unless asked for this.
inline DistillationVector normalized(DistillationVector dv)
{
    const double n = norm(dv.vector);
    if (n == 0.0) throw InvalidArgument("cannot normalise a zero vector");
    for (float& x : dv.vector) x = static_cast<float>(x / n);
    return dv;
}

/// Counterbalanced prompt difference: per-position mean of
/// act(prompt) - act(counter_prompt), the shorter prompt right-padded with
/// spaces. The shared BOS position is not averaged.
inline DistillationVector actadd_vector(const Model& model, std::string_view prompt, std::string_view counter_prompt,
                                        std::size_t layer, Site site)
{
    if (prompt.empty() || counter_prompt.empty()) throw InvalidArgument("actadd_vector: empty prompt");
    const ByteTokenizer tok = model.tokenizer();
    TokenSequence a = tok.encode(prompt);
    TokenSequence c = tok.encode(counter_prompt);
    const std::size_t len = std::max(a.size(), c.size());
    a.resize(len, ByteTokenizer::kSpace);
    c.resize(len, ByteTokenizer::kSpace);

    const HookSpec hook = HookSpec::capture(layer, site, PositionPolicy::all);
    const auto ra = forward(model, a, std::span<const HookSpec>(&hook, 1)).captured;
    const auto rc = forward(model, c, std::span<const HookSpec>(&hook, 1)).captured;

    const std::size_t d = model.config().d_model;
    std::vector<double> sum(d, 0.0);
    for (std::size_t p = 1; p < len; ++p) {
        for (std::size_t i = 0; i < d; ++i) sum[i] += static_cast<double>(ra[p].vector[i] - rc[p].vector[i]);
    }
    DistillationVector dv;
    dv.vector.resize(d);
    for (std::size_t i = 0; i < d; ++i) dv.vector[i] = static_cast<float>(sum[i] / static_cast<double>(len - 1));
    dv.layer = layer;
    dv.site = site;
    dv.target_dataset_id = "prompt:" + std::string(prompt);
    dv.training_dataset_id = "prompt:" + std::string(counter_prompt);
    dv.n = len - 1;
    dv.n_prime = len - 1;
    dv.method = ExtractionMethod::actadd;
    dv.model_fingerprint = model.fingerprint();
    return dv;
}

/// A vector, a layer and a coefficient: one single-layer intervention.
struct SteeringSpec {
    DistillationVector vector;
    std::size_t layer = 0;
    double coefficient = 0.0;
    Site site = Site::resid_pre;

    /// Steers at the hook point the vector was extracted from.
    static SteeringSpec from(DistillationVector dv, double coefficient)
    {
        SteeringSpec s;
        s.layer = dv.layer;
        s.site = dv.site;
        s.vector = std::move(dv);
        s.coefficient = coefficient;
        return s;
    }
};

/// Binds a spec to a model as an add hook at the final position.
inline HookSpec apply_steering(const SteeringSpec& spec, const ModelConfig& config)
{
    if (!std::isfinite(spec.coefficient)) throw InvalidArgument("steering coefficient must be finite");
    if (spec.layer >= config.n_layers) {
        throw InvalidArgument("steering layer " + std::to_string(spec.layer) + " out of range for a " +
                              std::to_string(config.n_layers) + "-layer model");
    }
    if (spec.vector.vector.size() != config.d_model) {
        throw InvalidArgument("steering vector has length " + std::to_string(spec.vector.vector.size()) +
                              ", model width is " + std::to_string(config.d_model));
    }
    return HookSpec::add(spec.layer, spec.site, spec.vector.vector, static_cast<float>(spec.coefficient),
                         PositionPolicy::final);
}

/// Decodes `n_tokens` after `prompt` and returns only the continuation text.
inline std::string generate_text(const Model& model, std::string_view prompt, std::size_t n_tokens,
                                 const Sampling& sampling, std::span<const HookSpec> hooks = {})
{
    const ByteTokenizer tok = model.tokenizer();
    const TokenSequence ids = tok.encode(prompt);
    const std::size_t prompt_len = ids.size();
    const TokenSequence out = generate(model, ids, n_tokens, sampling, hooks);
    return tok.decode(std::span<const TokenId>(out).subspan(prompt_len));
}

inline std::string steered_generate(const Model& model, std::string_view prompt, const SteeringSpec& spec,
                                    std::size_t n_tokens, const Sampling& sampling)
{
    if (!spec.vector.model_fingerprint.empty() && spec.vector.model_fingerprint != "synthetic" &&
        spec.vector.model_fingerprint != model.fingerprint()) {
        throw MismatchError("steering vector was extracted from model " + spec.vector.model_fingerprint +
                            ", not " + model.fingerprint());
    }
    const HookSpec hook = apply_steering(spec, model.config());
    return generate_text(model, prompt, n_tokens, sampling, std::span<const HookSpec>(&hook, 1));
}

inline void to_json(nlohmann::json& j, const DistillationVector& dv)
{
    j = nlohmann::json{{"vector", dv.vector},
                       {"layer", dv.layer},
                       {"site", site_name(dv.site)},
                       {"method", method_name(dv.method)},
                       {"target_dataset_id", dv.target_dataset_id},
                       {"training_dataset_id", dv.training_dataset_id},
                       {"n", dv.n},
                       {"n_prime", dv.n_prime},
                       {"model_fingerprint", dv.model_fingerprint}};
}

inline void from_json(const nlohmann::json& j, DistillationVector& dv)
{
    try {
        j.at("vector").get_to(dv.vector);
        j.at("layer").get_to(dv.layer);
        dv.site = parse_site(j.at("site").get<std::string>());
        dv.method = parse_method(j.at("method").get<std::string>());
        j.at("target_dataset_id").get_to(dv.target_dataset_id);
        j.at("training_dataset_id").get_to(dv.training_dataset_id);
        j.at("n").get_to(dv.n);
        j.at("n_prime").get_to(dv.n_prime);
        j.at("model_fingerprint").get_to(dv.model_fingerprint);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("distillation vector: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string("distillation vector: ") + e.what());
    }
    if (!all_finite(dv.vector)) throw FormatError("distillation vector: non-finite entries");
}

inline void save_vector(const std::filesystem::path& path, const DistillationVector& dv) { write_json_file(path, dv); }
inline DistillationVector load_vector(const std::filesystem::path& path)
{
    return read_json_file(path).get<DistillationVector>();
}

}  // namespace steerlab
