#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "steerlab/capture.hpp"
#include "steerlab/csv.hpp"
#include "steerlab/error.hpp"
#include "steerlab/model.hpp"
#include "steerlab/rng.hpp"
#include "steerlab/steer.hpp"

namespace steerlab {

/// An input -> output task demonstrated through in-context examples.
struct ICLTask {
    std::string name;
    std::vector<std::pair<std::string, std::string>> pairs;
    std::string example_template = "{x}: {y}\n";
    std::string query_template = "{x}: ";

    void validate() const
    {
        if (pairs.size() < 2) throw InvalidArgument("task '" + name + "' needs at least 2 pairs");
        std::set<std::string> inputs;
        for (const auto& [x, y] : pairs) {
            if (!inputs.insert(x).second) throw InvalidArgument("task '" + name + "' repeats input '" + x + "'");
        }
    }

    std::string format_example(const std::string& x, const std::string& y) const
    {
        return substitute(substitute(example_template, "{x}", x), "{y}", y);
    }

    std::string format_query(const std::string& x) const { return substitute(query_template, "{x}", x); }

private:
    static std::string substitute(std::string s, std::string_view slot, const std::string& value)
    {
        for (auto pos = s.find(slot); pos != std::string::npos; pos = s.find(slot, pos + value.size())) {
            s.replace(pos, slot.size(), value);
        }
        return s;
    }
};

/// Reads {"input": ..., "output": ...} lines.
inline ICLTask load_task_jsonl(const std::filesystem::path& path, std::string name = {})
{
    std::ifstream is(path);
    if (!is) throw IoError("cannot open task file '" + path.string() + "'");
    ICLTask task;
    task.name = name.empty() ? path.stem().string() : std::move(name);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            task.pairs.emplace_back(j.at("input").get<std::string>(), j.at("output").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    task.validate();
    return task;
}

struct ICLPrompt {
    std::string text;  // exemplars followed by the formatted query
    std::string query;
    std::string expected;
};

/// Each prompt holds `n_shots` exemplars plus one held-out query, all distinct pairs.
inline std::vector<ICLPrompt> build_icl_prompts(const ICLTask& task, std::size_t n_shots, std::size_t n_prompts,
                                                std::uint64_t seed)
{
    task.validate();
    if (n_shots + 1 > task.pairs.size()) {
        throw InvalidArgument("task '" + task.name + "' has " + std::to_string(task.pairs.size()) + " pairs, " +
                              std::to_string(n_shots) + "-shot prompts need at least " + std::to_string(n_shots + 1));
    }
    Rng rng(seed);
    std::vector<ICLPrompt> prompts;
    prompts.reserve(n_prompts);
    std::vector<std::size_t> idx(task.pairs.size());
    for (std::size_t p = 0; p < n_prompts; ++p) {
        std::iota(idx.begin(), idx.end(), 0);
        rng.shuffle(idx);
        ICLPrompt prompt;
        for (std::size_t s = 1; s <= n_shots; ++s) {
            const auto& [x, y] = task.pairs[idx[s]];
            prompt.text += task.format_example(x, y);
        }
        const auto& [qx, qy] = task.pairs[idx[0]];
        prompt.text += task.format_query(qx);
        prompt.query = qx;
        prompt.expected = qy;
        prompts.push_back(std::move(prompt));
    }
    return prompts;
}

/// Mean final-token activation over ICL prompts at (layer, site), optionally
/// minus mu_training.
inline DistillationVector extract_function_vector(const Model& model, const ICLTask& task, std::size_t layer,
                                                  Site site, bool centred,
                                                  const std::optional<MeanVector>& mu_training, std::size_t n_shots,
                                                  std::size_t n_prompts, std::uint64_t seed)
{
    if (centred && !mu_training) throw InvalidArgument("extract_function_vector: centring requires mu_training");
    if (n_prompts == 0) throw InvalidArgument("extract_function_vector: n_prompts must be positive");
    if (layer >= model.config().n_layers) throw InvalidArgument("extract_function_vector: layer out of range");
    const auto prompts = build_icl_prompts(task, n_shots, n_prompts, seed);
    const ByteTokenizer tok = model.tokenizer();
    const HookSpec hook = HookSpec::capture(layer, site, PositionPolicy::final);

    ActivationSet set;
    set.layer = layer;
    set.site = site;
    set.model_fingerprint = model.fingerprint();
    set.dataset_id = "icl:" + task.name;
    set.records.resize(prompts.size());
    parallel_for(prompts.size(), [&](std::size_t i) {
        const TokenSequence ids = tok.encode(prompts[i].text);
        if (ids.size() > model.config().max_seq_len) {
            throw InvalidArgument("ICL prompt of " + std::to_string(ids.size()) + " tokens exceeds the context window");
        }
        set.records[i] = forward(model, ids, std::span<const HookSpec>(&hook, 1)).captured.front();
    });
    const MeanVector mean = mean_activation(set);

    DistillationVector dv;
    dv.vector = mean.vector;
    dv.layer = layer;
    dv.site = site;
    dv.target_dataset_id = set.dataset_id;
    dv.n = mean.count;
    dv.method = ExtractionMethod::function_vector;
    dv.model_fingerprint = model.fingerprint();
    if (centred) {
        MeanVector as_mean = mean;
        require_same_origin(as_mean, *mu_training, "extract_function_vector");
        if (mu_training->vector.size() != dv.vector.size()) throw MismatchError("mu_training length differs");
        for (std::size_t i = 0; i < dv.vector.size(); ++i) dv.vector[i] = mean.vector[i] - mu_training->vector[i];
        dv.training_dataset_id = mu_training->dataset_id;
        dv.n_prime = mu_training->count;
    }
    return dv;
}

enum class FvMethod { uncentred, mean_centred, unsteered };

inline std::string_view fv_method_name(FvMethod m)
{
    switch (m) {
        case FvMethod::uncentred: return "uncentred";
        case FvMethod::mean_centred: return "mean_centred";
        case FvMethod::unsteered: return "unsteered";
    }
    return "?";
}

inline FvMethod parse_fv_method(std::string_view s)
{
    for (auto m : {FvMethod::uncentred, FvMethod::mean_centred, FvMethod::unsteered}) {
        if (fv_method_name(m) == s) return m;
    }
    throw InvalidArgument("unknown function-vector method '" + std::string(s) + "'");
}

enum class MatchPolicy {
    first_words,  // the first k generated words, k = words in the expected answer
    full_line,    // the whole first generated line, trimmed
};

struct ZeroShotOptions {
    std::size_t max_new_tokens = 8;
    MatchPolicy match = MatchPolicy::first_words;
};

namespace detail {

inline std::vector<std::string> split_words(std::string_view s)
{
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

}  // namespace detail

/// Case-insensitive comparison of generated text against the expected answer,
/// after cutting the generation at its first newline.
inline bool answer_matches(std::string_view generated, std::string_view expected, MatchPolicy policy)
{
    const std::string_view line = generated.substr(0, generated.find('\n'));
    const auto got = detail::split_words(line);
    const auto want = detail::split_words(expected);
    if (want.empty()) return false;
    if (policy == MatchPolicy::full_line) return got == want;
    if (got.size() < want.size()) return false;
    return std::equal(want.begin(), want.end(), got.begin());
}

struct FVEvalResult {
    std::string task;
    std::optional<std::size_t> layer;  // empty for the unsteered baseline
    FvMethod method = FvMethod::unsteered;
    double lambda = 0.0;
    double accuracy = 0.0;
    std::size_t correct = 0;
    std::size_t n_queries = 0;
    std::uint64_t seed = 0;
};

/// Query indices for evaluation: a seeded permutation, cycled if more queries
/// than pairs are requested.
inline std::vector<std::size_t> query_indices(std::size_t n_pairs, std::size_t n_queries, std::uint64_t seed)
{
    std::vector<std::size_t> perm(n_pairs);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed);
    rng.shuffle(perm);
    std::vector<std::size_t> out(n_queries);
    for (std::size_t i = 0; i < n_queries; ++i) out[i] = perm[i % n_pairs];
    return out;
}

/// Greedy zero-shot accuracy on "{x}: " queries with lambda * fv added at the
/// final position of `layer`. method == unsteered runs without any hook.
inline FVEvalResult eval_zero_shot(const Model& model, const ICLTask& task, const DistillationVector& fv,
                                   std::size_t layer, double lambda, std::size_t n_queries, std::uint64_t seed,
                                   FvMethod method, const ZeroShotOptions& options = {})
{
    task.validate();
    if (n_queries == 0) throw InvalidArgument("eval_zero_shot: n_queries must be positive");
    std::vector<HookSpec> hooks;
    if (method != FvMethod::unsteered) {
        SteeringSpec spec;
        spec.vector = fv;
        spec.layer = layer;
        spec.site = fv.site;
        spec.coefficient = lambda;
        hooks.push_back(apply_steering(spec, model.config()));
    }
    const auto queries = query_indices(task.pairs.size(), n_queries, seed);
    std::vector<char> hit(queries.size(), 0);
    parallel_for(queries.size(), [&](std::size_t i) {
        const auto& [x, y] = task.pairs[queries[i]];
        const std::string out = generate_text(model, task.format_query(x), options.max_new_tokens, Sampling::greedy(), hooks);
        hit[i] = answer_matches(out, y, options.match) ? 1 : 0;
    });

    FVEvalResult r;
    r.task = task.name;
    if (method != FvMethod::unsteered) r.layer = layer;
    r.method = method;
    r.lambda = method == FvMethod::unsteered ? 0.0 : lambda;
    r.correct = static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1));
    r.n_queries = queries.size();
    r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.n_queries);
    r.seed = seed;
    return r;
}

struct LayerSweepOptions {
    Site site = Site::resid_pre;
    std::size_t n_shots = 5;
    std::size_t n_prompts = 10;
    std::size_t n_queries = 20;
    std::optional<Corpus> training;  // required for mean_centred
    CaptureOptions training_capture;
    ZeroShotOptions zero_shot;
};

/// Every (task, layer, method) plus one unsteered row per task, ordered by
/// task, then the baseline, then layer and method.
inline std::vector<FVEvalResult> layer_sweep(const Model& model, const std::vector<ICLTask>& tasks,
                                             const std::vector<std::size_t>& layers,
                                             const std::vector<FvMethod>& methods, double lambda, std::uint64_t seed,
                                             const LayerSweepOptions& options = {})
{
    if (tasks.empty() || layers.empty()) throw InvalidArgument("layer_sweep: empty task or layer list");
    const bool need_training = std::find(methods.begin(), methods.end(), FvMethod::mean_centred) != methods.end();
    if (need_training && !options.training) throw InvalidArgument("layer_sweep: mean_centred needs a training corpus");
    for (FvMethod m : methods) {
        if (m == FvMethod::unsteered) throw InvalidArgument("layer_sweep: the unsteered baseline is always included");
    }

    std::map<std::size_t, MeanVector> mu_training;
    if (need_training) {
        for (std::size_t l : layers) {
            if (!mu_training.contains(l)) {
                mu_training[l] = mean_activation(
                    collect_activations(model, *options.training, l, options.site, options.training_capture, "training"));
            }
        }
    }

    std::vector<FVEvalResult> results;
    for (const auto& task : tasks) {
        results.push_back(eval_zero_shot(model, task, DistillationVector{}, 0, 0.0, options.n_queries, seed,
                                         FvMethod::unsteered, options.zero_shot));
        for (std::size_t l : layers) {
            for (FvMethod m : methods) {
                const bool centred = m == FvMethod::mean_centred;
                const auto fv = extract_function_vector(
                    model, task, l, options.site, centred,
                    centred ? std::optional<MeanVector>(mu_training.at(l)) : std::nullopt, options.n_shots,
                    options.n_prompts, seed);
                results.push_back(eval_zero_shot(model, task, fv, l, lambda, options.n_queries, seed, m, options.zero_shot));
            }
        }
    }
    return results;
}

inline std::string fv_csv(const std::vector<FVEvalResult>& rows)
{
    std::string out = "task,layer,method,lambda,accuracy,n_queries,seed\n";
    for (const auto& r : rows) {
        out += csv::row({r.task, r.layer ? std::to_string(*r.layer) : std::string(), std::string(fv_method_name(r.method)),
                         csv::number(r.lambda), csv::number(r.accuracy), std::to_string(r.n_queries),
                         std::to_string(r.seed)});
    }
    return out;
}

}  // namespace steerlab
