#include <gtest/gtest.h>

#include <cmath>

#include "steerlab/model.hpp"
#include "support/fixtures.hpp"
#include "support/reference_model.hpp"

using namespace steerlab;
using steerlab::testing::random_tiny_config;
using steerlab::testing::random_tokens;
using steerlab::testing::reference_forward;

namespace {

double max_abs_diff(const Tensor& logits, const steerlab::testing::Matrix& ref)
{
    double worst = 0.0;
    for (std::size_t t = 0; t < ref.size(); ++t) {
        for (std::size_t v = 0; v < ref[t].size(); ++v) worst = std::max(worst, std::abs(logits.at(t, v) - ref[t][v]));
    }
    return worst;
}

Model toy_model(std::uint64_t seed = 0, std::size_t layers = 2)
{
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_layers = layers;
    cfg.n_heads = 2;
    cfg.max_seq_len = 32;
    return Model::random(cfg, seed);
}

// Larger weights than init_random so the network is far from linear.
Model scaled_model(const ModelConfig& cfg, std::uint64_t seed, float scale)
{
    WeightStore s = init_random(cfg, seed);
    for (auto& [name, t] : s) {
        if (name.find("ln") != std::string::npos) continue;
        for (float& v : t.data) v *= scale;
    }
    return Model(cfg, std::move(s));
}

}  // namespace

TEST(Forward, MatchesReferenceOnOneLayerToy)
{
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.max_seq_len = 8;
    const Model m = scaled_model(cfg, 4, 25.0f);
    const TokenSequence toks{256, 3, 200, 17};
    EXPECT_LE(max_abs_diff(forward(m, toks).logits, reference_forward(m, toks)), 1e-5);
}

TEST(Forward, MatchesReferenceOverRandomConfigs)
{
    Rng rng(2024);
    for (int trial = 0; trial < 20; ++trial) {
        const ModelConfig cfg = random_tiny_config(rng);
        const Model m = scaled_model(cfg, rng.next(), 10.0f);
        const TokenSequence toks = random_tokens(rng, 1 + rng.below(cfg.max_seq_len), cfg.vocab_size);
        const auto res = forward(m, toks);
        ASSERT_EQ(res.logits.shape, (std::vector<std::size_t>{toks.size(), cfg.vocab_size}));
        EXPECT_LE(max_abs_diff(res.logits, reference_forward(m, toks)), 1e-5) << "trial " << trial;
    }
}

TEST(Forward, SingleTokenGivesOneRow)
{
    const Model m = toy_model();
    const auto res = forward(m, TokenSequence{256});
    EXPECT_EQ(res.logits.shape, (std::vector<std::size_t>{1, 257}));
    EXPECT_LE(max_abs_diff(res.logits, reference_forward(m, TokenSequence{256})), 1e-5);
}

TEST(Forward, IsCausal)
{
    const Model m = scaled_model(toy_model().config(), 8, 10.0f);
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        TokenSequence a = random_tokens(rng, 12, 257);
        const std::size_t t = rng.below(11);
        TokenSequence b = a;
        for (std::size_t i = t + 1; i < b.size(); ++i) b[i] = static_cast<TokenId>(rng.below(257));
        const Tensor la = forward(m, a).logits, lb = forward(m, b).logits;
        for (std::size_t p = 0; p <= t; ++p) {
            for (std::size_t v = 0; v < 257; ++v) ASSERT_EQ(la.at(p, v), lb.at(p, v));
        }
    }
}

TEST(Forward, ZeroScaleAddHookIsBitIdentical)
{
    const Model m = toy_model(3);
    const TokenSequence toks = m.tokenizer().encode("steer me");
    Rng rng(1);
    std::vector<float> v(16);
    for (float& x : v) x = static_cast<float>(rng.normal());
    std::vector<HookSpec> probes;
    for (std::size_t l = 0; l < 2; ++l) {
        for (Site s : kAllSites) probes.push_back(HookSpec::capture(l, s));
    }
    const auto base = forward(m, toks, probes);
    for (std::size_t l = 0; l < 2; ++l) {
        for (Site s : kAllSites) {
            auto hooks = probes;
            hooks.push_back(HookSpec::add(l, s, v, 0.0f, PositionPolicy::all));
            const auto res = forward(m, toks, hooks);
            ASSERT_EQ(res.logits, base.logits);
            ASSERT_EQ(res.captured.size(), base.captured.size());
            for (std::size_t i = 0; i < res.captured.size(); ++i) ASSERT_EQ(res.captured[i].vector, base.captured[i].vector);
        }
    }
}

TEST(Forward, CaptureAllOnThreeTokensGivesThreeRecords)
{
    const Model m = toy_model();
    const HookSpec h = HookSpec::capture(0, Site::resid_pre, PositionPolicy::all);
    const auto res = forward(m, TokenSequence{256, 1, 2}, std::span<const HookSpec>(&h, 1));
    ASSERT_EQ(res.captured.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(res.captured[i].vector.size(), 16u);
        EXPECT_EQ(res.captured[i].position, i);
        EXPECT_EQ(res.captured[i].layer, 0u);
        EXPECT_EQ(res.captured[i].site, Site::resid_pre);
    }
}

TEST(Forward, ResidPreOfLayerZeroIsEmbeddingSum)
{
    const Model m = toy_model(6);
    const TokenSequence toks{256, 65, 66};
    const HookSpec h = HookSpec::capture(0, Site::resid_pre);
    const auto rec = forward(m, toks, std::span<const HookSpec>(&h, 1)).captured;
    for (std::size_t p = 0; p < toks.size(); ++p) {
        for (std::size_t i = 0; i < 16; ++i) {
            ASSERT_EQ(rec[p].vector[i], m.weight("wte").at(toks[p], i) + m.weight("wpe").at(p, i));
        }
    }
}

TEST(Forward, SitesComposeIntoTheResidualStream)
{
    const Model m = toy_model(7);
    const TokenSequence toks = m.tokenizer().encode("abc");
    std::vector<HookSpec> hooks;
    for (std::size_t l = 0; l < 2; ++l) {
        for (Site s : kAllSites) hooks.push_back(HookSpec::capture(l, s, PositionPolicy::final));
    }
    const auto rec = forward(m, toks, hooks).captured;
    // per layer: resid_pre, resid_post, attn_out, mlp_out
    for (std::size_t l = 0; l < 2; ++l) {
        const auto& pre = rec[4 * l].vector;
        const auto& post = rec[4 * l + 1].vector;
        const auto& attn = rec[4 * l + 2].vector;
        const auto& mlp = rec[4 * l + 3].vector;
        for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(pre[i] + attn[i] + mlp[i], post[i], 1e-6);
    }
    EXPECT_EQ(rec[1].vector, rec[4].vector);  // resid_post(0) == resid_pre(1)
}

TEST(Forward, AddHookShiftsOnlyItsPositions)
{
    const Model m = toy_model(2);
    const TokenSequence toks = m.tokenizer().encode("hello");
    std::vector<float> v(16, 0.5f);
    const std::vector<HookSpec> hooks{HookSpec::add(1, Site::resid_pre, v, 2.0f).at_positions({2}),
                                      HookSpec::capture(1, Site::resid_pre)};
    const auto base = forward(m, toks, std::span<const HookSpec>(&hooks[1], 1)).captured;
    const auto steered = forward(m, toks, hooks).captured;
    for (std::size_t p = 0; p < toks.size(); ++p) {
        for (std::size_t i = 0; i < 16; ++i) {
            if (p == 2) {
                EXPECT_FLOAT_EQ(steered[p].vector[i], base[p].vector[i] + 1.0f);
            } else {
                EXPECT_EQ(steered[p].vector[i], base[p].vector[i]);
            }
        }
    }
}

TEST(Forward, RejectsInvalidInputs)
{
    const Model m = toy_model();
    EXPECT_THROW(forward(m, TokenSequence{}), InvalidArgument);
    EXPECT_THROW(forward(m, TokenSequence(33, 1)), InvalidArgument);
    EXPECT_THROW(forward(m, TokenSequence{257}), InvalidArgument);
    const HookSpec bad_layer = HookSpec::capture(2, Site::resid_pre);
    EXPECT_THROW(forward(m, TokenSequence{256}, std::span<const HookSpec>(&bad_layer, 1)), InvalidArgument);
    const HookSpec bad_vec = HookSpec::add(0, Site::resid_pre, std::vector<float>(3), 1.0f);
    EXPECT_THROW(forward(m, TokenSequence{256}, std::span<const HookSpec>(&bad_vec, 1)), InvalidArgument);
    const HookSpec bad_pos = HookSpec::capture(0, Site::resid_pre).at_positions({4});
    EXPECT_THROW(forward(m, TokenSequence{256, 1}, std::span<const HookSpec>(&bad_pos, 1)), InvalidArgument);
}

TEST(Generate, ZeroTokensReturnsPrompt)
{
    const Model m = toy_model();
    const TokenSequence p = m.tokenizer().encode("Once");
    EXPECT_EQ(generate(m, p, 0, Sampling::greedy()), p);
}

TEST(Generate, GreedyIsDeterministic)
{
    const Model m = toy_model(9);
    const TokenSequence p = m.tokenizer().encode("Once upon");
    EXPECT_EQ(generate(m, p, 10, Sampling::greedy()), generate(m, p, 10, Sampling::greedy()));
}

TEST(Generate, TemperatureIsDeterministicPerSeed)
{
    const Model m = scaled_model(toy_model().config(), 1, 20.0f);
    const TokenSequence p = m.tokenizer().encode("x");
    const auto a = generate(m, p, 12, Sampling::with_temperature(1.0, 4));
    EXPECT_EQ(a, generate(m, p, 12, Sampling::with_temperature(1.0, 4)));
    bool differs = false;
    for (std::uint64_t s = 5; s < 10 && !differs; ++s) differs = a != generate(m, p, 12, Sampling::with_temperature(1.0, s));
    EXPECT_TRUE(differs);
    EXPECT_THROW(Sampling::with_temperature(0.0, 1), InvalidArgument);
}

TEST(Generate, GreedyReplaysStepwiseArgmax)
{
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.max_seq_len = 16;
    const Model m = scaled_model(cfg, 12, 30.0f);
    TokenSequence seq = m.tokenizer().encode("ab");
    const TokenSequence out = generate(m, seq, 6, Sampling::greedy());
    for (int step = 0; step < 6; ++step) {
        const auto ref = reference_forward(m, seq);
        const auto& last = ref.back();
        seq.push_back(static_cast<TokenId>(std::max_element(last.begin(), last.end()) - last.begin()));
    }
    EXPECT_EQ(out, seq);
}

TEST(Generate, RejectsOverflow)
{
    const Model m = toy_model();
    EXPECT_THROW(generate(m, TokenSequence(30, 1), 3, Sampling::greedy()), InvalidArgument);
    EXPECT_NO_THROW(generate(m, TokenSequence(30, 1), 2, Sampling::greedy()));
}

TEST(Generate, FinalHooksFollowTheGrowingSequence)
{
    // Steering pushes the last position towards one token; every new token
    // must be that token once the hook tracks the current final position.
    const std::vector<float> e{1, -1, 0, 0}, f{0, 0, 1, -1};
    const Model m = steerlab::testing::pass_through_model(4, {}, {{'x', e}, {'A', f}}, e);
    const HookSpec h = HookSpec::add(0, Site::resid_pre, f, 5.0f);
    const auto out = generate(m, m.tokenizer().encode("hi"), 5, Sampling::greedy(), std::span<const HookSpec>(&h, 1));
    EXPECT_EQ(m.tokenizer().decode(out), "hiAAAAA");
    EXPECT_EQ(m.tokenizer().decode(generate(m, m.tokenizer().encode("hi"), 5, Sampling::greedy())), "hixxxxx");
}

TEST(Argmax, TiesGoToLowestId)
{
    const std::vector<float> l{0.0f, 2.0f, 1.0f, 2.0f};
    EXPECT_EQ(argmax_token(l), 1u);
}

TEST(ModelTest, FingerprintAndFileLoading)
{
    steerlab::testing::TempDir dir;
    const Model m = toy_model(4);
    save_weights(dir / "m.stw1", m.config(), m.weights());
    const Model back = Model::from_file(dir / "m.stw1");
    EXPECT_EQ(back.fingerprint(), m.fingerprint());
    EXPECT_NE(toy_model(5).fingerprint(), m.fingerprint());
}
