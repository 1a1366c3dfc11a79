#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "steerlab/analysis.hpp"
#include "steerlab/capture.hpp"
#include "steerlab/corpus.hpp"
#include "steerlab/csv.hpp"
#include "steerlab/error.hpp"
#include "steerlab/fv.hpp"
#include "steerlab/model.hpp"
#include "steerlab/plot.hpp"
#include "steerlab/steer.hpp"
#include "steerlab/textmetrics.hpp"
#include "steerlab/weights_io.hpp"

namespace steerlab::cli {

namespace fs = std::filesystem;

inline constexpr std::string_view kVersion = "steerlab 0.1.0";
inline constexpr std::string_view kDefaultGrid = "0,1,2,5,10,20,40,60,80,100";

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Bad or inconsistent invocation; reported with exit code 1.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Resolved flag values keyed by long flag name (without dashes).
using Params = std::map<std::string, std::string>;

namespace detail {

inline std::vector<std::string> split_list(std::string_view s)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const std::size_t end = std::min(s.find(',', start), s.size());
        std::string item(s.substr(start, end - start));
        const auto a = item.find_first_not_of(" \t");
        const auto b = item.find_last_not_of(" \t");
        if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
        start = end + 1;
    }
    return out;
}

inline std::string join(const std::vector<std::string>& items)
{
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
    return out;
}

// Typed access to resolved parameters. Conversion failures name the flag.
class Args {
public:
    explicit Args(Params& p) : p_(p) {}

    bool has(const std::string& k) const { return p_.contains(k) && !p_.at(k).empty(); }

    const std::string& str(const std::string& k) const
    {
        if (!has(k)) throw UsageError("--" + k + " is required");
        return p_.at(k);
    }

    void set(const std::string& k, std::string v) { p_[k] = std::move(v); }

    fs::path path(const std::string& k) const { return str(k); }

    bool flag(const std::string& k) const { return has(k) && p_.at(k) == "true"; }

    std::uint64_t u64(const std::string& k) const { return parse_u64(k, str(k)); }

    std::size_t size(const std::string& k) const { return static_cast<std::size_t>(u64(k)); }

    double real(const std::string& k) const { return parse_real(k, str(k)); }

    std::vector<std::string> list(const std::string& k) const
    {
        auto items = split_list(str(k));
        if (items.empty()) throw UsageError("--" + k + ": empty list");
        return items;
    }

    std::vector<std::size_t> sizes(const std::string& k) const
    {
        std::vector<std::size_t> out;
        for (const auto& s : list(k)) out.push_back(static_cast<std::size_t>(parse_u64(k, s)));
        return out;
    }

    std::vector<double> reals(const std::string& k) const
    {
        std::vector<double> out;
        for (const auto& s : list(k)) out.push_back(parse_real(k, s));
        return out;
    }

    Site site(const std::string& k = "site") const
    {
        try {
            return parse_site(str(k));
        } catch (const InvalidArgument& e) {
            throw UsageError("--" + k + ": " + e.what());
        }
    }

private:
    static std::uint64_t parse_u64(const std::string& k, const std::string& s)
    {
        try {
            std::size_t used = 0;
            if (s.empty() || s[0] == '-') throw std::invalid_argument(s);
            const auto v = std::stoull(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw UsageError("--" + k + ": expected a non-negative integer, got '" + s + "'");
        }
    }

    static double parse_real(const std::string& k, const std::string& s)
    {
        try {
            std::size_t used = 0;
            const double v = std::stod(s, &used);
            if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw UsageError("--" + k + ": expected a finite number, got '" + s + "'");
        }
    }

    Params& p_;
};

enum class OutKind { file, directory };

struct RunContext {
    Args args;
    fs::path out;
    std::ostream& stdout_;
    std::ostream& stderr_;
    nlohmann::json extra = nlohmann::json::object();  // extra manifest fields
    std::vector<std::string> outputs;                 // written files, relative to the output directory
};

struct Command {
    std::string name;
    std::string description;
    OutKind out_kind = OutKind::directory;
    std::set<std::string> paths;  // flags holding a path or a comma list of paths
    std::function<void(CLI::App&)> declare;
    std::function<void(RunContext&)> execute;
};

inline const CLI::Validator& existing_files()
{
    static const CLI::Validator v(
        [](std::string& value) -> std::string {
            for (const auto& item : split_list(value)) {
                if (!fs::is_regular_file(item)) return "File does not exist: " + item;
            }
            return {};
        },
        "FILE[,FILE...]");
    return v;
}

inline const CLI::Validator& site_names()
{
    static const CLI::IsMember v(std::vector<std::string>{"resid_pre", "resid_post", "attn_out", "mlp_out"});
    return v;
}

inline CLI::Option* option(CLI::App& app, const std::string& name, const std::string& desc,
                           std::optional<std::string> def = std::nullopt)
{
    auto* o = app.add_option("--" + name, desc);
    if (def) o->default_str(*def);
    return o;
}

inline CLI::Option* flag(CLI::App& app, const std::string& name, const std::string& desc)
{
    return app.add_flag("--" + name, desc);
}

inline void model_option(CLI::App& app) { option(app, "model", "STW1 weights file")->required()->check(CLI::ExistingFile); }

inline void layer_site_options(CLI::App& app)
{
    option(app, "layer", "transformer block index")->required();
    option(app, "site", "hook site", "resid_pre")->check(site_names());
}

inline void out_option(CLI::App& app, OutKind kind)
{
    option(app, "out", kind == OutKind::file ? "output file" : "output directory")->required();
}

inline Model load_model(const RunContext& ctx)
{
    Model m = Model::from_file(ctx.args.path("model"));
    ctx.stderr_ << "model " << m.fingerprint() << "\n";
    return m;
}

inline CaptureOptions capture_options(const Args& a)
{
    CaptureOptions o;
    try {
        o.policy = parse_policy(a.str("policy"));
    } catch (const InvalidArgument& e) {
        throw UsageError(std::string("--policy: ") + e.what());
    }
    if (o.policy == PositionPolicy::explicit_list) throw UsageError("--policy: use all or final");
    o.include_bos = a.flag("include-bos");
    return o;
}

inline Sampling sampling_for(const Args& a, std::uint64_t seed)
{
    const double t = a.real("temperature");
    if (t < 0.0) throw UsageError("--temperature must be >= 0");
    return t == 0.0 ? Sampling::greedy() : Sampling::with_temperature(t, seed);
}

inline void write_output(RunContext& ctx, const std::string& name, std::string_view text)
{
    csv::write_text(ctx.out / name, text);
    ctx.outputs.push_back(name);
}

inline void write_plot(RunContext& ctx, const csv::Table& table, PlotKind kind, const PlotColumns& cols,
                       std::string_view title)
{
    if (table.rows.empty()) return;
    write_output(ctx, "plot.svg", render_plot(table, kind, cols, title));
}

inline std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

inline void check_vector_model(const DistillationVector& dv, const Model& model)
{
    if (!dv.model_fingerprint.empty() && dv.model_fingerprint != "synthetic" &&
        dv.model_fingerprint != model.fingerprint()) {
        throw MismatchError("vector was extracted from model " + dv.model_fingerprint + ", not " + model.fingerprint());
    }
}

// ---- subcommands ---------------------------------------------------------

inline Command init_command()
{
    Command c{"init", "write a randomly initialised model", OutKind::file, {"out"}, {}, {}};
    c.declare = [](CLI::App& app) {
        const ModelConfig d;
        option(app, "d-model", "residual width", std::to_string(d.d_model));
        option(app, "n-layers", "number of blocks", std::to_string(d.n_layers));
        option(app, "n-heads", "attention heads", std::to_string(d.n_heads));
        option(app, "vocab-size", "vocabulary size (>= 257)", std::to_string(d.vocab_size));
        option(app, "max-seq-len", "context window", std::to_string(d.max_seq_len));
        option(app, "ln-epsilon", "layer-norm epsilon", csv::number(d.ln_epsilon));
        option(app, "seed", "initialisation seed", "0");
        out_option(app, OutKind::file);
    };
    c.execute = [](RunContext& ctx) {
        const Args& a = ctx.args;
        ModelConfig cfg;
        cfg.d_model = a.size("d-model");
        cfg.n_layers = a.size("n-layers");
        cfg.n_heads = a.size("n-heads");
        cfg.vocab_size = a.size("vocab-size");
        cfg.max_seq_len = a.size("max-seq-len");
        cfg.ln_epsilon = a.real("ln-epsilon");
        try {
            cfg.validate();
        } catch (const InvalidArgument& e) {
            throw UsageError(e.what());
        }
        const WeightStore store = init_random(cfg, a.u64("seed"));
        save_weights(ctx.out, cfg, store);
        const std::string fp = weights_fingerprint(cfg, store);
        ctx.extra["model_fingerprint"] = fp;
        ctx.stdout_ << fp << "\n";
    };
    return c;
}

inline Command capture_command()
{
    Command c{"capture", "mean activation of a corpus at one hook point", OutKind::file, {"model", "corpus", "out"}, {}, {}};
    c.declare = [](CLI::App& app) {
        model_option(app);
        option(app, "corpus", "JSONL corpus")->required()->check(CLI::ExistingFile);
        layer_site_options(app);
        option(app, "policy", "token positions: all or final", "all");
        flag(app, "include-bos", "keep the BOS position under --policy all");
        option(app, "dataset-id", "label stored with the mean (default: corpus file stem)");
        out_option(app, OutKind::file);
    };
    c.execute = [](RunContext& ctx) {
        Args& a = ctx.args;
        if (!a.has("dataset-id")) a.set("dataset-id", stem_of(a.str("corpus")));
        const Model model = load_model(ctx);
        const ActivationSet set = collect_activations(model, read_corpus_jsonl(a.path("corpus")), a.size("layer"),
                                                      a.site(), capture_options(a), a.str("dataset-id"));
        for (const auto& id : set.truncated_samples) ctx.stderr_ << "warning: sample '" << id << "' truncated\n";
        const MeanVector mean = mean_activation(set);
        save_mean(ctx.out, mean);
        ctx.extra["model_fingerprint"] = model.fingerprint();
        ctx.stdout_ << mean.count << " activations averaged\n";
    };
    return c;
}

inline Command extract_command()
{
    Command c{"extract", "distillation vector from a target and a training corpus", OutKind::file,
              {"model", "target", "training", "out"}, {}, {}};
    c.declare = [](CLI::App& app) {
        model_option(app);
        option(app, "target", "target corpus (JSONL)")->required()->check(CLI::ExistingFile);
        option(app, "training", "training-distribution corpus (JSONL)")->check(CLI::ExistingFile);
        layer_site_options(app);
        option(app, "policy", "token positions: all or final", "all");
        flag(app, "include-bos", "keep the BOS position under --policy all");
        option(app, "method", "mean_centred or no_centred", "mean_centred");
        flag(app, "normalize", "rescale the vector to unit norm");
        option(app, "target-id", "target dataset label (default: file stem)");
        option(app, "training-id", "training dataset label (default: file stem)");
        out_option(app, OutKind::file);
    };
    c.execute = [](RunContext& ctx) {
        Args& a = ctx.args;
        const std::string method = a.str("method");
        if (method != "mean_centred" && method != "no_centred") {
            throw UsageError("--method: expected mean_centred or no_centred, got '" + method + "'");
        }
        if (method == "mean_centred" && !a.has("training")) throw UsageError("--training is required for mean_centred");
        if (!a.has("target-id")) a.set("target-id", stem_of(a.str("target")));
        if (a.has("training") && !a.has("training-id")) a.set("training-id", stem_of(a.str("training")));

        const Model model = load_model(ctx);
        const CaptureOptions opts = capture_options(a);
        const std::size_t layer = a.size("layer");
        const MeanVector mu_target = mean_activation(
            collect_activations(model, read_corpus_jsonl(a.path("target")), layer, a.site(), opts, a.str("target-id")));
        DistillationVector dv;
        if (method == "mean_centred") {
            const MeanVector mu_training = mean_activation(collect_activations(
                model, read_corpus_jsonl(a.path("training")), layer, a.site(), opts, a.str("training-id")));
            dv = mean_centre(mu_target, mu_training);
        } else {
            dv = no_centre(mu_target);
        }
        if (a.flag("normalize")) dv = normalized(dv);
        save_vector(ctx.out, dv);
        ctx.extra["model_fingerprint"] = model.fingerprint();
        ctx.stdout_ << "norm " << csv::number(norm(dv.vector)) << "\n";
    };
    return c;
}

inline Command actadd_command()
{
    Command c{"actadd", "counterbalanced prompt-difference vector", OutKind::file, {"model", "out"}, {}, {}};
    c.declare = [](CLI::App& app) {
        model_option(app);
        option(app, "prompt", "concept prompt")->required();
        option(app, "counter-prompt", "opposite-concept prompt")->required();
        layer_site_options(app);
        flag(app, "normalize", "rescale the vector to unit norm");
        out_option(app, OutKind::file);
    };
    c.execute = [](RunContext& ctx) {
        const Args& a = ctx.args;
        const Model model = load_model(ctx);
        DistillationVector dv = actadd_vector(model, a.str("prompt"), a.str("counter-prompt"), a.size("layer"), a.site());
        if (a.flag("normalize")) dv = normalized(dv);
        save_vector(ctx.out, dv);
        ctx.extra["model_fingerprint"] = model.fingerprint();
        ctx.stdout_ << "norm " << csv::number(norm(dv.vector)) << "\n";
    };
    return c;
}

inline Command lens_command()
{
    Command c{"lens", "tokens a vector promotes and suppresses through the unembedding", OutKind::directory,
              {"model", "vector", "out"}, {}, {}};
    c.declare = [](CLI::App& app) {
        model_option(app);
        option(app, "vector", "distillation vector JSON")->required()->check(CLI::ExistingFile);
        option(app, "k", "tokens per direction", "10");
        flag(app, "final-norm", "apply the final layer norm before projecting");
        out_option(app, OutKind::directory);
    };
    c.execute = [](RunContext& ctx) {
        const Args& a = ctx.args;
        const Model model = load_model(ctx);
        const DistillationVector dv = load_vector(a.path("vector"));
        check_vector_model(dv, model);
        const LensReport report =
            logit_lens(model, dv.vector, a.size("k"), a.flag("final-norm"), stem_of(a.str("vector")));
        const std::string text = lens_csv(report);
        write_output(ctx, "report.csv", text);
        write_plot(ctx, csv::parse(text), PlotKind::bar, {"token", "", "score"}, "logit lens");
        ctx.extra["model_fingerprint"] = model.fingerprint();
        for (const auto& e : report.top) ctx.stdout_ << "+ " << e.label << " " << csv::number(e.score) << "\n";
        for (const auto& e : report.bottom) ctx.stdout_ << "- " << e.label << " " << csv::number(e.score) << "\n";
    };
    return c;
}

inline Command anisotropy_command()
{
    Command c{"anisotropy", "mean pairwise cosine per layer and site", OutKind::directory, {"model", "corpus", "out"}, {}, {}};
    c.declare = [](CLI::App& app) {
        model_option(app);
        option(app, "corpus", "JSONL corpus")->required()->check(CLI::ExistingFile);
        option(app, "max-pairs", "subsample above this many pairs (0 = always exact)", std::to_string(kDefaultMaxPairs));
        option(app, "seed", "pair-sampling seed", "0");
        flag(app, "include-bos", "include the BOS position");
        out_option(app, OutKind::directory);
    };
    c.execute = [](RunContext& ctx) {
        const Args& a = ctx.args;
        const Model model = load_model(ctx);
        AnisotropyOptions opts;
        const std::size_t max_pairs = a.size("max-pairs");
        opts.max_pairs = max_pairs == 0 ? std::nullopt : std::optional<std::size_t>(max_pairs);
        opts.seed = a.u64("seed");
        opts.include_bos = a.flag("include-bos");
        const std::string text = anisotropy_csv(anisotropy_profile(model, read_corpus_jsonl(a.path("corpus")), opts));
        write_output(ctx, "report.csv", text);
        write_plot(ctx, csv::parse(text), PlotKind::line, {"site", "layer", "mean_cosine"}, "anisotropy");
        ctx.extra["model_fingerprint"] = model.fingerprint();
        ctx.stdout_ << text;
    };
    return c;
}

inline Command steer_command()
{
    Command c{"steer", "generate with a steering vector added", OutKind::directory, {"model", "vector", "prompts", "out"}, {}, {}};
    c.declare = [](CLI::App& app) {
        model_option(app);
        option(app, "vector", "distillation vector JSON")->required()->check(CLI::ExistingFile);
        option(app, "lambda", "steering coefficient", "0");
        option(app, "prompt", "a single prompt");
        option(app, "prompts", "JSONL corpus of prompts")->check(CLI::ExistingFile);
        option(app, "layer", "steer at this layer instead of the vector's own");
        flag(app, "normalize", "rescale the vector to unit norm first");
        option(app, "n-tokens", "tokens to generate", "32");
        option(app, "temperature", "0 = greedy", "0");
        option(app, "seed", "sampling seed (prompt i uses seed + i)", "0");
        out_option(app, OutKind::directory);
    };
    c.execute = [](RunContext& ctx) {
        const Args& a = ctx.args;
        if (a.has("prompt") == a.has("prompts")) throw UsageError("give exactly one of --prompt and --prompts");
        const Model model = load_model(ctx);
        DistillationVector dv = load_vector(a.path("vector"));
        if (a.flag("normalize")) dv = normalized(dv);
        SteeringSpec spec = SteeringSpec::from(std::move(dv), a.real("lambda"));
        if (a.has("layer")) spec.layer = a.size("layer");

        const Corpus prompts = a.has("prompts") ? read_corpus_jsonl(a.path("prompts"))
                                                : Corpus{CorpusEntry{"prompt", a.str("prompt")}};
        const std::uint64_t seed = a.u64("seed");
        const std::size_t n_tokens = a.size("n-tokens");
        std::vector<std::string> outputs(prompts.size());
        parallel_for(prompts.size(), [&](std::size_t i) {
            outputs[i] = steered_generate(model, prompts[i].text, spec, n_tokens, sampling_for(a, seed + i));
        });
        std::string text = "id,lambda,prompt,continuation\n";
        for (std::size_t i = 0; i < prompts.size(); ++i) {
            text += csv::row({prompts[i].id, csv::number(spec.coefficient), prompts[i].text, outputs[i]});
            ctx.stdout_ << prompts[i].text << outputs[i] << "\n";
        }
        write_output(ctx, "report.csv", text);
        ctx.extra["model_fingerprint"] = model.fingerprint();
    };
    return c;
}

inline Command fv_eval_command()
{
    Command c{"fv-eval", "zero-shot accuracy with function vectors across layers", OutKind::directory,
              {"model", "tasks", "training", "out"}, {}, {}};
    c.declare = [](CLI::App& app) {
        model_option(app);
        option(app, "tasks", "task JSONL files, comma separated")->required()->check(existing_files());
        option(app, "layers", "layers to test (default: all)");
        option(app, "methods", "uncentred and/or mean_centred", "uncentred,mean_centred");
        option(app, "training", "training corpus for mu_training")->check(CLI::ExistingFile);
        option(app, "site", "hook site", "resid_pre")->check(site_names());
        option(app, "policy", "mu_training positions: all or final", "all");
        flag(app, "include-bos", "keep the BOS position in mu_training");
        option(app, "lambda", "function-vector coefficient", "1");
        option(app, "n-shots", "exemplars per ICL prompt", "5");
        option(app, "n-prompts", "ICL prompts averaged", "10");
        option(app, "n-queries", "zero-shot queries per task", "20");
        option(app, "max-new-tokens", "tokens generated per answer", "8");
        option(app, "match", "first_words or full_line", "first_words");
        option(app, "seed", "prompt and query seed", "0");
        out_option(app, OutKind::directory);
    };
    c.execute = [](RunContext& ctx) {
        Args& a = ctx.args;
        const Model model = load_model(ctx);
        if (!a.has("layers")) {
            std::vector<std::string> all;
            for (std::size_t l = 0; l < model.config().n_layers; ++l) all.push_back(std::to_string(l));
            a.set("layers", join(all));
        }
        std::vector<FvMethod> methods;
        for (const auto& m : a.list("methods")) {
            try {
                methods.push_back(parse_fv_method(m));
            } catch (const InvalidArgument& e) {
                throw UsageError(std::string("--methods: ") + e.what());
            }
        }
        std::vector<ICLTask> tasks;
        for (const auto& p : a.list("tasks")) tasks.push_back(load_task_jsonl(p));

        LayerSweepOptions opts;
        opts.site = a.site();
        opts.n_shots = a.size("n-shots");
        opts.n_prompts = a.size("n-prompts");
        opts.n_queries = a.size("n-queries");
        opts.zero_shot.max_new_tokens = a.size("max-new-tokens");
        const std::string match = a.str("match");
        if (match != "first_words" && match != "full_line") throw UsageError("--match: expected first_words or full_line");
        opts.zero_shot.match = match == "full_line" ? MatchPolicy::full_line : MatchPolicy::first_words;
        opts.training_capture = capture_options(a);
        if (std::find(methods.begin(), methods.end(), FvMethod::mean_centred) != methods.end()) {
            if (!a.has("training")) throw UsageError("--training is required for method mean_centred");
            opts.training = read_corpus_jsonl(a.path("training"));
        }

        const auto rows = layer_sweep(model, tasks, a.sizes("layers"), methods, a.real("lambda"), a.u64("seed"), opts);
        write_output(ctx, "report.csv", fv_csv(rows));

        csv::Table plot{{"series", "layer", "accuracy"}, {}};
        for (const auto& r : rows) {
            if (r.layer) plot.rows.push_back({r.task + " " + std::string(fv_method_name(r.method)), std::to_string(*r.layer), csv::number(r.accuracy)});
        }
        write_plot(ctx, plot, PlotKind::line, {"series", "layer", "accuracy"}, "function-vector accuracy");
        ctx.extra["model_fingerprint"] = model.fingerprint();
        for (const auto& r : rows) {
            ctx.stdout_ << r.task << " " << (r.layer ? "L" + std::to_string(*r.layer) : std::string("base")) << " "
                        << fv_method_name(r.method) << " " << csv::number(r.accuracy) << "\n";
        }
    };
    return c;
}

inline Command sweep_command()
{
    Command c{"sweep", "text metrics of steered generations over layers and coefficients", OutKind::directory,
              {"model", "target", "training", "prompts", "lexicon", "wordlist", "out"}, {}, {}};
    c.declare = [](CLI::App& app) {
        model_option(app);
        option(app, "target", "target corpus (JSONL)")->required()->check(CLI::ExistingFile);
        option(app, "training", "training corpus (JSONL)")->check(CLI::ExistingFile);
        option(app, "prompts", "JSONL corpus of prompts")->required()->check(CLI::ExistingFile);
        option(app, "layers", "layers to steer (default: all)");
        option(app, "grid", "steering coefficients", std::string(kDefaultGrid));
        option(app, "site", "hook site", "resid_pre")->check(site_names());
        option(app, "policy", "token positions for the means: all or final", "all");
        flag(app, "include-bos", "keep the BOS position under --policy all");
        option(app, "method", "mean_centred or no_centred", "mean_centred");
        flag(app, "normalize", "rescale vectors to unit norm");
        option(app, "lexicon", "genre stem lexicon JSON")->check(CLI::ExistingFile);
        option(app, "wordlist", "wordlist files, comma separated")->check(existing_files());
        option(app, "n-tokens", "tokens generated per prompt", "32");
        option(app, "temperature", "0 = greedy", "0");
        option(app, "seed", "sampling seed (prompt i uses seed + i)", "0");
        out_option(app, OutKind::directory);
    };
    c.execute = [](RunContext& ctx) {
        Args& a = ctx.args;
        if (!a.has("lexicon") && !a.has("wordlist")) throw UsageError("--lexicon or --wordlist is required");
        const std::string method = a.str("method");
        if (method != "mean_centred" && method != "no_centred") {
            throw UsageError("--method: expected mean_centred or no_centred, got '" + method + "'");
        }
        if (method == "mean_centred" && !a.has("training")) throw UsageError("--training is required for mean_centred");
        const Model model = load_model(ctx);
        if (!a.has("layers")) {
            std::vector<std::string> all;
            for (std::size_t l = 0; l < model.config().n_layers; ++l) all.push_back(std::to_string(l));
            a.set("layers", join(all));
        }
        const auto layers = a.sizes("layers");
        const auto grid = a.reals("grid");
        const Corpus target = read_corpus_jsonl(a.path("target"));
        const std::optional<Corpus> training =
            a.has("training") ? std::optional<Corpus>(read_corpus_jsonl(a.path("training"))) : std::nullopt;
        const Corpus prompts = read_corpus_jsonl(a.path("prompts"));
        if (prompts.empty()) throw InvalidArgument("prompt corpus is empty");

        std::vector<std::pair<std::string, std::function<double(const std::string&)>>> metrics;
        std::optional<StemLexicon> lexicon;
        if (a.has("lexicon")) {
            lexicon = lexicon_from_json(read_json_file(a.path("lexicon")));
            for (const auto& [genre, stems] : lexicon->genres) {
                metrics.emplace_back("freq:" + genre, [&lexicon, genre = genre](const std::string& text) {
                    const FrequencyReport r = genre_frequency(text, *lexicon);
                    for (const auto& row : r.rows) {
                        if (row.genre == genre) return row.frequency;
                    }
                    return 0.0;
                });
            }
        }
        std::vector<LexiconScorer> scorers;
        if (a.has("wordlist")) {
            for (const auto& p : a.list("wordlist")) scorers.emplace_back(stem_of(p), read_wordlist(p), Polarity::positive);
            for (const auto& s : scorers) {
                metrics.emplace_back("score:" + s.name(), [&s](const std::string& text) { return s.score(text); });
            }
        }

        const CaptureOptions opts = capture_options(a);
        const std::uint64_t seed = a.u64("seed");
        const std::size_t n_tokens = a.size("n-tokens");
        // values[metric][layer index][grid index][prompt]
        std::vector<std::vector<std::vector<std::vector<double>>>> values(
            metrics.size(), std::vector<std::vector<std::vector<double>>>(
                                layers.size(), std::vector<std::vector<double>>(grid.size(), std::vector<double>(prompts.size()))));
        for (std::size_t li = 0; li < layers.size(); ++li) {
            const std::size_t layer = layers[li];
            const MeanVector mu_target =
                mean_activation(collect_activations(model, target, layer, a.site(), opts, stem_of(a.str("target"))));
            DistillationVector dv =
                method == "mean_centred"
                    ? mean_centre(mu_target, mean_activation(collect_activations(model, *training, layer, a.site(), opts,
                                                                                 stem_of(a.str("training")))))
                    : no_centre(mu_target);
            if (a.flag("normalize")) dv = normalized(dv);
            for (std::size_t gi = 0; gi < grid.size(); ++gi) {
                const SteeringSpec spec = SteeringSpec::from(dv, grid[gi]);
                parallel_for(prompts.size(), [&](std::size_t p) {
                    const std::string text = steered_generate(model, prompts[p].text, spec, n_tokens, sampling_for(a, seed + p));
                    for (std::size_t m = 0; m < metrics.size(); ++m) values[m][li][gi][p] = metrics[m].second(text);
                });
            }
        }

        std::string report = "metric,layer,lambda,mean,ci_low,ci_high,n\n";
        std::string samples = "metric,layer,lambda,prompt_id,value\n";
        csv::Table plot{{"series", "lambda", "value"}, {}};
        for (std::size_t m = 0; m < metrics.size(); ++m) {
            for (std::size_t li = 0; li < layers.size(); ++li) {
                for (std::size_t gi = 0; gi < grid.size(); ++gi) {
                    const auto& v = values[m][li][gi];
                    const Interval iv = ci95(v);
                    const std::string layer = std::to_string(layers[li]);
                    const std::string lambda = csv::number(grid[gi]);
                    report += csv::row({metrics[m].first, layer, lambda, csv::number(iv.mean), csv::number(iv.low),
                                        csv::number(iv.high), std::to_string(iv.n)});
                    for (std::size_t p = 0; p < v.size(); ++p) {
                        samples += csv::row({metrics[m].first, layer, lambda, prompts[p].id, csv::number(v[p])});
                        plot.rows.push_back({metrics[m].first + " L" + layer, lambda, csv::number(v[p])});
                    }
                }
            }
        }
        write_output(ctx, "report.csv", report);
        write_output(ctx, "samples.csv", samples);
        write_plot(ctx, plot, PlotKind::line, {"series", "lambda", "value"}, "steering sweep");
        ctx.extra["model_fingerprint"] = model.fingerprint();
        ctx.stdout_ << report;
    };
    return c;
}

inline Command stems_command()
{
    Command c{"stems", "genre stem lexicon from corpora", OutKind::directory, {"corpora", "out"}, {}, {}};
    c.declare = [](CLI::App& app) {
        option(app, "corpora", "JSONL corpora, one per genre (genre = file stem)")->required()->check(existing_files());
        option(app, "min-count", "minimum occurrences within the genre", "2");
        out_option(app, OutKind::directory);
    };
    c.execute = [](RunContext& ctx) {
        const Args& a = ctx.args;
        std::map<std::string, Corpus> corpora;
        for (const auto& p : a.list("corpora")) {
            if (!corpora.emplace(stem_of(p), read_corpus_jsonl(p)).second) {
                throw UsageError("--corpora: two files share the genre name '" + stem_of(p) + "'");
            }
        }
        const StemLexicon lex = build_stem_lexicon(corpora, a.size("min-count"));
        write_output(ctx, "lexicon.json", lexicon_to_json(lex).dump(2) + "\n");
        std::string text = "genre,stem,count\n";
        for (const auto& [genre, stems] : lex.genres) {
            std::map<std::string, std::size_t> counts;
            for (const auto& entry : corpora.at(genre)) {
                for (const auto& s : stem_tokens(entry.text)) {
                    if (stems.contains(s)) ++counts[s];
                }
            }
            for (const auto& [s, n] : counts) text += csv::row({genre, s, std::to_string(n)});
            ctx.stdout_ << genre << ": " << stems.size() << " stems\n";
        }
        write_output(ctx, "report.csv", text);
    };
    return c;
}

inline Command score_command()
{
    Command c{"score", "genre frequencies or wordlist scores of texts", OutKind::directory,
              {"texts", "lexicon", "wordlist", "out"}, {}, {}};
    c.declare = [](CLI::App& app) {
        option(app, "texts", "JSONL corpus of texts")->required()->check(CLI::ExistingFile);
        option(app, "lexicon", "genre stem lexicon JSON")->check(CLI::ExistingFile);
        option(app, "wordlist", "wordlist file")->check(CLI::ExistingFile);
        option(app, "polarity", "what a high wordlist score means: positive or negative", "positive");
        out_option(app, OutKind::directory);
    };
    c.execute = [](RunContext& ctx) {
        const Args& a = ctx.args;
        if (a.has("lexicon") == a.has("wordlist")) throw UsageError("give exactly one of --lexicon and --wordlist");
        const std::string polarity = a.str("polarity");
        if (polarity != "positive" && polarity != "negative") throw UsageError("--polarity: expected positive or negative");
        const Corpus texts = read_corpus_jsonl(a.path("texts"));
        if (a.has("lexicon")) {
            const StemLexicon lex = lexicon_from_json(read_json_file(a.path("lexicon")));
            std::string text = "id,genre,hits,total_words,frequency\n";
            for (const auto& entry : texts) {
                const FrequencyReport r = genre_frequency(entry.text, lex);
                if (r.empty_input) ctx.stderr_ << "warning: text '" << entry.id << "' has no words\n";
                for (const auto& row : r.rows) {
                    text += csv::row({entry.id, row.genre, std::to_string(row.hits), std::to_string(row.total_words),
                                      csv::number(row.frequency)});
                }
            }
            write_output(ctx, "report.csv", text);
            write_plot(ctx, csv::parse(text), PlotKind::box, {"genre", "", "frequency"}, "genre frequency");
        } else {
            const LexiconScorer scorer(stem_of(a.str("wordlist")), read_wordlist(a.path("wordlist")),
                                       polarity == "negative" ? Polarity::negative : Polarity::positive);
            std::string text = "id,score\n";
            for (const auto& entry : texts) text += csv::row({entry.id, csv::number(scorer.score(entry.text))});
            write_output(ctx, "report.csv", text);
        }
    };
    return c;
}

inline std::vector<Command> commands()
{
    return {init_command(),  capture_command(), extract_command(), actadd_command(), lens_command(), anisotropy_command(),
            steer_command(), fv_eval_command(), sweep_command(),   stems_command(),  score_command()};
}

// Config values become "--key=value" arguments placed before the user's own,
// so that flags given on the command line win.
inline std::vector<std::string> config_arguments(const fs::path& path, const std::string& subcommand)
{
    nlohmann::json j;
    try {
        j = read_json_file(path);
    } catch (const Error& e) {
        throw UsageError(std::string("--config: ") + e.what());
    }
    if (!j.is_object()) throw UsageError("--config: expected a JSON object");
    if (j.contains("subcommand")) {
        if (!j["subcommand"].is_string() || j["subcommand"].get<std::string>() != subcommand) {
            throw UsageError("--config: manifest is for subcommand " + j["subcommand"].dump() + ", not '" + subcommand + "'");
        }
    }
    const nlohmann::json& cfg = j.contains("config") && j["config"].is_object() ? j["config"] : j;
    std::vector<std::string> args;
    for (const auto& [key, value] : cfg.items()) {
        if (key == "subcommand") continue;
        std::string name = key;
        std::replace(name.begin(), name.end(), '_', '-');
        std::string v;
        if (value.is_null()) continue;
        if (value.is_string()) {
            v = value.get<std::string>();
        } else if (value.is_array()) {
            std::vector<std::string> items;
            for (const auto& item : value) items.push_back(item.is_string() ? item.get<std::string>() : item.dump());
            v = join(items);
        } else if (value.is_primitive()) {
            v = value.dump();
        } else {
            throw UsageError("--config: value of '" + key + "' must be a scalar or a list");
        }
        args.push_back("--" + name + "=" + v);
    }
    return args;
}

inline std::string find_config(const std::vector<std::string>& args)
{
    std::string path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        if (args[i].starts_with("--config=")) path = args[i].substr(9);
    }
    return path;
}

}  // namespace detail

/// Entry point behind the steerlab executable. Returns 0 on success, 1 for
/// usage errors and 2 for data errors.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    using namespace detail;
    std::vector<std::string> args(argv, argv + argc);
    const std::vector<Command> cmds = commands();

    CLI::App app{"steerlab: activation steering experiments on small decoder-only transformers", "steerlab"};
    app.set_version_flag("--version", std::string(kVersion));
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.require_subcommand(1);
    std::map<std::string, CLI::App*> subs;
    for (const auto& c : cmds) {
        CLI::App* sub = app.add_subcommand(c.name, c.description);
        sub->add_option("--config", "JSON config or a previous run's manifest; flags override it")->check(CLI::ExistingFile);
        c.declare(*sub);
        subs[c.name] = sub;
    }

    try {
        if (args.size() >= 2 && !args[1].starts_with("-") && !subs.contains(args[1])) {
            throw UsageError("unknown subcommand '" + args[1] + "'");
        }
        if (args.size() >= 2 && subs.contains(args[1])) {
            const std::string config = find_config(args);
            if (!config.empty() && fs::is_regular_file(config)) {
                auto extra = config_arguments(config, args[1]);
                args.insert(args.begin() + 2, extra.begin(), extra.end());
            }
        }
        std::vector<const char*> raw;
        for (const auto& a : args) raw.push_back(a.c_str());
        app.parse(static_cast<int>(raw.size()), raw.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    } catch (const UsageError& e) {
        err << "steerlab: " << e.what() << "\n";
        return kExitUsage;
    }

    const Command* cmd = nullptr;
    for (const auto& c : cmds) {
        if (subs.at(c.name)->parsed()) cmd = &c;
    }
    CLI::App* sub = subs.at(cmd->name);

    Params params;
    for (const CLI::Option* o : sub->get_options()) {
        const std::string name = o->get_single_name();
        if (name == "config" || name == "help") continue;
        if (o->get_expected_min() == 0) {
            params[name] = (o->count() > 0 && o->as<bool>()) ? "true" : "false";
        } else if (o->count() > 0) {
            params[name] = o->as<std::string>();
        } else if (!o->get_default_str().empty()) {
            params[name] = o->get_default_str();
        }
    }
    for (const auto& key : cmd->paths) {
        auto it = params.find(key);
        if (it == params.end() || it->second.empty()) continue;
        std::vector<std::string> items;
        for (const auto& p : split_list(it->second)) items.push_back(fs::absolute(p).lexically_normal().string());
        it->second = join(items);
    }

    RunContext ctx{Args(params), fs::path(params.at("out")), out, err, nlohmann::json::object(), {}};
    try {
        if (cmd->out_kind == OutKind::directory) {
            fs::create_directories(ctx.out);
        } else if (ctx.out.has_parent_path()) {
            fs::create_directories(ctx.out.parent_path());
        }
        cmd->execute(ctx);

        nlohmann::json manifest = ctx.extra;
        manifest["subcommand"] = cmd->name;
        manifest["version"] = std::string(kVersion);
        nlohmann::json cfg = nlohmann::json::object();
        for (const auto& [k, v] : params) {
            if (v == "true" || v == "false") {
                const CLI::Option* o = sub->get_option_no_throw("--" + k);
                if (o && o->get_expected_min() == 0) {
                    cfg[k] = v == "true";
                    continue;
                }
            }
            cfg[k] = v;
        }
        manifest["config"] = cfg;
        if (cmd->out_kind == OutKind::directory) {
            manifest["outputs"] = ctx.outputs;
            write_json_file(ctx.out / "manifest.json", manifest);
        } else {
            manifest["outputs"] = std::vector<std::string>{ctx.out.filename().string()};
            write_json_file(ctx.out.string() + ".manifest.json", manifest);
        }
        return kExitOk;
    } catch (const UsageError& e) {
        err << "steerlab " << cmd->name << ": " << e.what() << "\n";
        return kExitUsage;
    } catch (const IoError& e) {
        err << "steerlab " << cmd->name << ": " << e.what() << "\n";
        return kExitUsage;
    } catch (const fs::filesystem_error& e) {
        err << "steerlab " << cmd->name << ": " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "steerlab " << cmd->name << ": error: " << e.what() << "\n";
        return kExitData;
    }
}

}  // namespace steerlab::cli
