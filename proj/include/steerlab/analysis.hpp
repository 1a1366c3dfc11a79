#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "steerlab/capture.hpp"
#include "steerlab/csv.hpp"
#include "steerlab/error.hpp"
#include "steerlab/model.hpp"
#include "steerlab/rng.hpp"

namespace steerlab {

inline constexpr std::size_t kDefaultMaxPairs = 2'000'000;

struct CosineSummary {
    double mean = 0.0;
    std::size_t pairs = 0;         // pairs averaged (sampled count when subsampled)
    std::size_t zero_vectors = 0;  // excluded, cosine undefined
    bool sampled = false;
};

/// Mean cosine similarity over all unordered pairs of non-zero vectors.
///
/// When the number of pairs exceeds `max_pairs`, that many pairs are drawn
/// uniformly (with replacement, seeded) instead. std::nullopt means exact.
inline CosineSummary pairwise_cosine_mean(std::span<const std::vector<float>> vectors,
                                          std::optional<std::size_t> max_pairs = kDefaultMaxPairs,
                                          std::uint64_t seed = 0)
{
    CosineSummary out;
    std::vector<std::vector<double>> unit;
    unit.reserve(vectors.size());
    for (const auto& v : vectors) {
        const double n = norm(v);
        if (n == 0.0) {
            ++out.zero_vectors;
            continue;
        }
        std::vector<double> u(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) u[i] = v[i] / n;
        unit.push_back(std::move(u));
    }
    const std::size_t m = unit.size();
    if (m < 2) throw InvalidArgument("pairwise_cosine_mean: fewer than 2 non-zero vectors");
    for (const auto& u : unit) {
        if (u.size() != unit.front().size()) throw InvalidArgument("pairwise_cosine_mean: vector lengths differ");
    }

    auto pair_dot = [&](std::size_t a, std::size_t b) {
        return std::inner_product(unit[a].begin(), unit[a].end(), unit[b].begin(), 0.0);
    };

    const std::size_t total = m * (m - 1) / 2;
    double sum = 0.0;
    if (!max_pairs || total <= *max_pairs) {
        for (std::size_t a = 0; a < m; ++a) {
            for (std::size_t b = a + 1; b < m; ++b) sum += pair_dot(a, b);
        }
        out.pairs = total;
    } else {
        if (*max_pairs == 0) throw InvalidArgument("pairwise_cosine_mean: max_pairs must be positive");
        Rng rng(seed);
        for (std::size_t s = 0; s < *max_pairs; ++s) {
            const std::size_t a = rng.below(m);
            std::size_t b = rng.below(m - 1);
            if (b >= a) ++b;
            sum += pair_dot(a, b);
        }
        out.pairs = *max_pairs;
        out.sampled = true;
    }
    out.mean = std::clamp(sum / static_cast<double>(out.pairs), -1.0, 1.0);
    return out;
}

inline CosineSummary pairwise_cosine_mean(const ActivationSet& set,
                                          std::optional<std::size_t> max_pairs = kDefaultMaxPairs,
                                          std::uint64_t seed = 0)
{
    std::vector<std::vector<float>> vectors;
    vectors.reserve(set.records.size());
    for (const auto& r : set.records) vectors.push_back(r.vector);
    return pairwise_cosine_mean(vectors, max_pairs, seed);
}

struct AnisotropyRow {
    std::size_t layer = 0;
    Site site = Site::resid_pre;
    double mean_cosine = 0.0;
    std::size_t pairs = 0;
};

struct AnisotropyReport {
    std::vector<AnisotropyRow> rows;
};

struct AnisotropyOptions {
    std::optional<std::size_t> max_pairs = kDefaultMaxPairs;
    std::uint64_t seed = 0;
    bool include_bos = false;
};

inline constexpr std::array<Site, 3> kAnisotropySites = {Site::resid_pre, Site::attn_out, Site::mlp_out};

/// Mean pairwise cosine at every (layer, site) with all token positions of all
/// samples pooled per row.
inline AnisotropyReport anisotropy_profile(const Model& model, const Corpus& corpus,
                                           const AnisotropyOptions& options = {})
{
    if (corpus.empty()) throw InvalidArgument("anisotropy_profile: empty corpus");
    const auto& cfg = model.config();
    std::vector<HookSpec> hooks;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        for (Site s : kAnisotropySites) hooks.push_back(HookSpec::capture(l, s, PositionPolicy::all));
    }
    const ByteTokenizer tok = model.tokenizer();
    std::vector<std::vector<ActivationRecord>> per_sample(corpus.size());
    parallel_for(corpus.size(), [&](std::size_t i) {
        TokenSequence ids = tok.encode(corpus[i].text);
        if (ids.size() > cfg.max_seq_len) ids.resize(cfg.max_seq_len);
        per_sample[i] = forward(model, ids, hooks).captured;
    });

    std::vector<std::vector<std::vector<float>>> by_row(hooks.size());
    for (const auto& recs : per_sample) {
        for (const auto& r : recs) {
            if (r.position == 0 && !options.include_bos) continue;
            const std::size_t site_index =
                static_cast<std::size_t>(std::find(kAnisotropySites.begin(), kAnisotropySites.end(), r.site) -
                                         kAnisotropySites.begin());
            by_row[r.layer * kAnisotropySites.size() + site_index].push_back(r.vector);
        }
    }
    AnisotropyReport report;
    for (std::size_t k = 0; k < hooks.size(); ++k) {
        const CosineSummary s = pairwise_cosine_mean(by_row[k], options.max_pairs, options.seed);
        report.rows.push_back({hooks[k].layer, hooks[k].site, s.mean, s.pairs});
    }
    return report;
}

inline std::string anisotropy_csv(const AnisotropyReport& report)
{
    std::string out = "layer,site,mean_cosine,pairs\n";
    for (const auto& r : report.rows) {
        out += csv::row({std::to_string(r.layer), std::string(site_name(r.site)), csv::number(r.mean_cosine),
                         std::to_string(r.pairs)});
    }
    return out;
}

struct LensEntry {
    TokenId token = 0;
    std::string label;
    double score = 0.0;
};

struct LensReport {
    std::string vector_id;
    std::vector<LensEntry> top;     // descending score
    std::vector<LensEntry> bottom;  // ascending score
};

/// Raw inner products of `vector` with every unembedding column; the k highest
/// and k lowest tokens. Ties break towards the lower token id.
inline LensReport logit_lens(std::span<const float> vector, const Tensor& unembedding, std::size_t k,
                             std::string vector_id = {})
{
    if (unembedding.shape.size() != 2 || unembedding.rows() != vector.size()) {
        throw InvalidArgument("logit_lens: vector of length " + std::to_string(vector.size()) +
                              " does not match unembedding of shape " + shape_string(unembedding.shape));
    }
    const std::size_t vocab = unembedding.cols();
    if (k == 0 || 2 * k > vocab) throw InvalidArgument("logit_lens: k must satisfy 1 <= k and 2k <= vocab size");

    std::vector<double> scores(vocab, 0.0);
    for (std::size_t i = 0; i < vector.size(); ++i) {
        const auto row = unembedding.row(i);
        for (std::size_t t = 0; t < vocab; ++t) scores[t] += static_cast<double>(vector[i]) * row[t];
    }
    std::vector<std::size_t> order(vocab);
    std::iota(order.begin(), order.end(), 0);

    LensReport report;
    report.vector_id = std::move(vector_id);
    auto take = [&](auto cmp, std::vector<LensEntry>& dest) {
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), cmp);
        for (std::size_t r = 0; r < k; ++r) {
            const auto t = static_cast<TokenId>(order[r]);
            dest.push_back({t, ByteTokenizer::token_label(t), scores[t]});
        }
    };
    take([&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); },
         report.top);
    take([&](std::size_t a, std::size_t b) { return scores[a] < scores[b] || (scores[a] == scores[b] && a < b); },
         report.bottom);
    return report;
}

/// Model-level lens; `apply_final_norm` passes the vector through the final
/// layer norm first (off by default: the raw inner product is the reading).
inline LensReport logit_lens(const Model& model, std::span<const float> vector, std::size_t k,
                             bool apply_final_norm = false, std::string vector_id = {})
{
    const auto& cfg = model.config();
    if (vector.size() != cfg.d_model) throw InvalidArgument("logit_lens: vector length does not match model width");
    if (!apply_final_norm) return logit_lens(vector, model.weight(weight_names::kUnembedding), k, std::move(vector_id));
    std::vector<float> normed(vector.size());
    detail::layer_norm_row(vector, model.weight(weight_names::kFinalNormWeight),
                           model.weight(weight_names::kFinalNormBias), cfg.ln_epsilon, normed);
    return logit_lens(normed, model.weight(weight_names::kUnembedding), k, std::move(vector_id));
}

inline std::string lens_csv(const LensReport& report)
{
    std::string out = "rank,direction,token,score\n";
    for (std::size_t r = 0; r < report.top.size(); ++r) {
        out += csv::row({std::to_string(r + 1), "top", report.top[r].label, csv::number(report.top[r].score)});
    }
    for (std::size_t r = 0; r < report.bottom.size(); ++r) {
        out += csv::row(
            {std::to_string(r + 1), "bottom", report.bottom[r].label, csv::number(report.bottom[r].score)});
    }
    return out;
}

}  // namespace steerlab
