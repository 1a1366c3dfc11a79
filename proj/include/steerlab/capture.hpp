#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "steerlab/activation.hpp"
#include "steerlab/corpus.hpp"
#include "steerlab/error.hpp"
#include "steerlab/model.hpp"
#include "steerlab/rng.hpp"

namespace steerlab {

/// Activations gathered at a single (layer, site) of one model.
struct ActivationSet {
    std::vector<ActivationRecord> records;
    std::size_t layer = 0;
    Site site = Site::resid_pre;
    std::string model_fingerprint;
    std::string dataset_id;
    std::vector<std::string> truncated_samples;

    std::size_t dim() const { return records.empty() ? 0 : records.front().vector.size(); }
};

/// Mean of an activation set, with enough provenance to refuse mixing models.
struct MeanVector {
    std::vector<float> vector;
    std::size_t count = 0;
    std::size_t layer = 0;
    Site site = Site::resid_pre;
    std::string dataset_id;
    std::string model_fingerprint;

    /// A count-0 mean carrying `like`'s provenance; the identity for merge_means.
    static MeanVector empty_like(const MeanVector& like)
    {
        MeanVector m;
        m.layer = like.layer;
        m.site = like.site;
        m.dataset_id = like.dataset_id;
        m.model_fingerprint = like.model_fingerprint;
        return m;
    }
};

struct CaptureOptions {
    PositionPolicy policy = PositionPolicy::all;
    // BOS activations are input independent, so they are left out of means
    // unless asked for.
    bool include_bos = false;
};

/// Worker cap from STEERLAB_THREADS, else the hardware concurrency.
inline std::size_t worker_count()
{
    if (const char* env = std::getenv("STEERLAB_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n >= 1) return static_cast<std::size_t>(n);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs `fn(i)` for i in [0, n) on up to worker_count() threads.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn)
{
    const std::size_t workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

/// Runs `model` over each corpus text and records activations at (layer, site).
///
/// Texts longer than the context window are truncated and listed in
/// `truncated_samples`. Records are ordered by (sample_id, position).
inline ActivationSet collect_activations(const Model& model, const Corpus& corpus, std::size_t layer, Site site,
                                         const CaptureOptions& options = {}, std::string dataset_id = {})
{
    if (corpus.empty()) throw InvalidArgument("collect_activations: empty corpus");
    if (layer >= model.config().n_layers) {
        throw InvalidArgument("collect_activations: layer " + std::to_string(layer) + " out of range");
    }
    const ByteTokenizer tok = model.tokenizer();
    const std::size_t max_len = model.config().max_seq_len;
    const HookSpec hook =
        HookSpec::capture(layer, site, options.policy == PositionPolicy::final ? PositionPolicy::final : PositionPolicy::all);

    std::vector<std::vector<ActivationRecord>> per_sample(corpus.size());
    std::vector<char> truncated(corpus.size(), 0);
    parallel_for(corpus.size(), [&](std::size_t i) {
        TokenSequence ids = tok.encode(corpus[i].text);
        if (ids.size() > max_len) {
            ids.resize(max_len);
            truncated[i] = 1;
        }
        ForwardResult res = forward(model, ids, std::span<const HookSpec>(&hook, 1));
        for (auto& rec : res.captured) {
            if (rec.position == 0 && !options.include_bos && options.policy == PositionPolicy::all) continue;
            rec.sample_id = corpus[i].id;
            rec.dataset_id = dataset_id;
            per_sample[i].push_back(std::move(rec));
        }
    });

    ActivationSet set;
    set.layer = layer;
    set.site = site;
    set.model_fingerprint = model.fingerprint();
    set.dataset_id = std::move(dataset_id);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (truncated[i]) set.truncated_samples.push_back(corpus[i].id);
        for (auto& rec : per_sample[i]) set.records.push_back(std::move(rec));
    }
    std::stable_sort(set.records.begin(), set.records.end(), [](const ActivationRecord& a, const ActivationRecord& b) {
        if (a.sample_id != b.sample_id) return a.sample_id < b.sample_id;
        return a.position < b.position;
    });
    return set;
}

/// Arithmetic mean with Kahan-compensated double accumulation.
inline MeanVector mean_activation(const ActivationSet& set)
{
    if (set.records.empty()) throw InvalidArgument("mean_activation: empty activation set");
    const std::size_t d = set.dim();
    std::vector<double> sum(d, 0.0), comp(d, 0.0);
    for (const auto& rec : set.records) {
        if (rec.vector.size() != d) throw InvalidArgument("mean_activation: records have differing lengths");
        for (std::size_t i = 0; i < d; ++i) {
            const double y = rec.vector[i] - comp[i];
            const double t = sum[i] + y;
            comp[i] = (t - sum[i]) - y;
            sum[i] = t;
        }
    }
    MeanVector m;
    m.vector.resize(d);
    const double n = static_cast<double>(set.records.size());
    for (std::size_t i = 0; i < d; ++i) m.vector[i] = static_cast<float>(sum[i] / n);
    m.count = set.records.size();
    m.layer = set.layer;
    m.site = set.site;
    m.dataset_id = set.dataset_id;
    m.model_fingerprint = set.model_fingerprint;
    return m;
}

inline void require_same_origin(const MeanVector& a, const MeanVector& b, const char* what)
{
    if (a.layer != b.layer || a.site != b.site) {
        throw MismatchError(std::string(what) + ": means come from different hook points (layer " +
                            std::to_string(a.layer) + "/" + std::string(site_name(a.site)) + " vs " +
                            std::to_string(b.layer) + "/" + std::string(site_name(b.site)) + ")");
    }
    if (a.model_fingerprint != b.model_fingerprint) {
        throw MismatchError(std::string(what) + ": means come from different models (" + a.model_fingerprint +
                            " vs " + b.model_fingerprint + ")");
    }
}

/// Count-weighted combination of two partial means.
inline MeanVector merge_means(const MeanVector& a, const MeanVector& b)
{
    require_same_origin(a, b, "merge_means");
    if (b.count == 0) return a;
    if (a.count == 0) return b;
    if (a.vector.size() != b.vector.size()) throw MismatchError("merge_means: vector lengths differ");
    MeanVector m = MeanVector::empty_like(a);
    if (a.dataset_id != b.dataset_id) m.dataset_id = a.dataset_id + "+" + b.dataset_id;
    m.count = a.count + b.count;
    const double na = static_cast<double>(a.count);
    const double nb = static_cast<double>(b.count);
    m.vector.resize(a.vector.size());
    for (std::size_t i = 0; i < a.vector.size(); ++i) {
        m.vector[i] = static_cast<float>((na * a.vector[i] + nb * b.vector[i]) / (na + nb));
    }
    return m;
}

/// Parameters of the planted activation model x_i = alpha_i * f + b + v_i,
/// v_i ~ N(0, sigma^2 I).
struct SyntheticGenSpec {
    std::vector<float> f;
    std::vector<float> b;
    std::vector<double> alphas;  // one per sample
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
};

inline ActivationSet synth_activations(const SyntheticGenSpec& spec)
{
    const std::size_t d = spec.f.size();
    if (spec.b.size() != d) throw InvalidArgument("synth_activations: f and b differ in length");
    if (spec.noise_sigma < 0.0) throw InvalidArgument("synth_activations: negative noise scale");
    Rng rng(spec.seed);
    ActivationSet set;
    set.model_fingerprint = "synthetic";
    set.dataset_id = "synthetic";
    set.records.reserve(spec.alphas.size());
    for (std::size_t n = 0; n < spec.alphas.size(); ++n) {
        ActivationRecord rec;
        rec.vector.resize(d);
        for (std::size_t i = 0; i < d; ++i) {
            const double noise = spec.noise_sigma > 0.0 ? spec.noise_sigma * rng.normal() : 0.0;
            rec.vector[i] = static_cast<float>(spec.alphas[n] * spec.f[i] + spec.b[i] + noise);
        }
        rec.sample_id = "synthetic-" + std::to_string(n);
        rec.dataset_id = "synthetic";
        set.records.push_back(std::move(rec));
    }
    return set;
}

inline void to_json(nlohmann::json& j, const MeanVector& m)
{
    j = nlohmann::json{{"vector", m.vector},
                       {"count", m.count},
                       {"layer", m.layer},
                       {"site", site_name(m.site)},
                       {"dataset_id", m.dataset_id},
                       {"model_fingerprint", m.model_fingerprint}};
}

inline void from_json(const nlohmann::json& j, MeanVector& m)
{
    try {
        j.at("vector").get_to(m.vector);
        j.at("count").get_to(m.count);
        j.at("layer").get_to(m.layer);
        m.site = parse_site(j.at("site").get<std::string>());
        j.at("dataset_id").get_to(m.dataset_id);
        j.at("model_fingerprint").get_to(m.model_fingerprint);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("mean vector: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string("mean vector: ") + e.what());
    }
}

inline nlohmann::json read_json_file(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j)
{
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    os << j.dump(2) << '\n';
}

inline void save_mean(const std::filesystem::path& path, const MeanVector& m) { write_json_file(path, m); }
inline MeanVector load_mean(const std::filesystem::path& path) { return read_json_file(path).get<MeanVector>(); }

}  // namespace steerlab
