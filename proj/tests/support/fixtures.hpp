#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "steerlab/model.hpp"
#include "steerlab/rng.hpp"

namespace steerlab::testing {

inline std::filesystem::path data_dir() { return STEERLAB_DATA_DIR; }

inline std::filesystem::path test_data_dir() { return STEERLAB_TEST_DATA_DIR; }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir()
    {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("steerlab-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// Small random config: d_model <= 64, at most 2 layers.
inline ModelConfig random_tiny_config(Rng& rng)
{
    static constexpr std::size_t heads[] = {1, 2, 4};
    ModelConfig cfg;
    cfg.n_heads = heads[rng.below(3)];
    cfg.d_model = cfg.n_heads * (2 + rng.below(64 / cfg.n_heads - 1));
    cfg.n_layers = 1 + rng.below(2);
    cfg.vocab_size = 257 + rng.below(8);
    cfg.max_seq_len = 16 + rng.below(16);
    return cfg;
}

inline TokenSequence random_tokens(Rng& rng, std::size_t n, std::size_t vocab)
{
    TokenSequence t(n);
    for (auto& id : t) id = static_cast<TokenId>(rng.below(vocab));
    return t;
}

/// One block whose attention and MLP contribute nothing, so the residual at
/// every position is the token embedding. `rows` assigns embeddings per token
/// (others zero unless `fill` is given); `cols` assigns unembedding columns.
inline Model pass_through_model(std::size_t d, const std::vector<std::pair<TokenId, std::vector<float>>>& rows,
                                const std::vector<std::pair<TokenId, std::vector<float>>>& cols,
                                const std::vector<float>& fill = {}, std::size_t n_layers = 1)
{
    ModelConfig cfg;
    cfg.d_model = d;
    cfg.n_layers = n_layers;
    cfg.n_heads = 1;
    cfg.vocab_size = 257;
    cfg.max_seq_len = 64;
    WeightStore store = init_random(cfg, 0);
    for (auto& [name, t] : store) {
        const bool gain = name.ends_with("ln1.weight") || name.ends_with("ln2.weight") || name == "ln_f.weight";
        std::fill(t.data.begin(), t.data.end(), gain ? 1.0f : 0.0f);
    }
    Tensor& wte = store.at("wte");
    if (!fill.empty()) {
        for (std::size_t r = 0; r < cfg.vocab_size; ++r) std::copy(fill.begin(), fill.end(), wte.data.begin() + r * d);
    }
    for (const auto& [tok, v] : rows) std::copy(v.begin(), v.end(), wte.data.begin() + tok * d);
    Tensor& un = store.at("unembed");
    for (const auto& [tok, v] : cols) {
        for (std::size_t i = 0; i < d; ++i) un.data[i * cfg.vocab_size + tok] = v[i];
    }
    return Model(cfg, std::move(store));
}

inline double squared_norm(const std::vector<float>& v)
{
    double s = 0.0;
    for (float x : v) s += static_cast<double>(x) * x;
    return s;
}

}  // namespace steerlab::testing
