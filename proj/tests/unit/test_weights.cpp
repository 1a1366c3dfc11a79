#include <gtest/gtest.h>

#include <cstring>
#include <string>

#include "steerlab/weights_io.hpp"
#include "support/fixtures.hpp"

using namespace steerlab;
using steerlab::testing::TempDir;

namespace {

ModelConfig small_config()
{
    ModelConfig c;
    c.d_model = 8;
    c.n_layers = 1;
    c.n_heads = 2;
    c.vocab_size = 16;
    c.max_seq_len = 8;
    return c;
}

std::string u64_le(std::uint64_t v)
{
    std::string s(8, '\0');
    for (int i = 0; i < 8; ++i) s[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    return s;
}

// Splits container bytes into (header json, data) and reassembles edits.
struct Container {
    nlohmann::json header;
    std::string data;

    explicit Container(const std::string& bytes)
    {
        std::uint64_t len = 0;
        for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[4 + i])) << (8 * i);
        header = nlohmann::json::parse(bytes.substr(12, len));
        data = bytes.substr(12 + len);
    }

    std::string bytes() const
    {
        const std::string h = header.dump();
        return "STW1" + u64_le(h.size()) + h + data;
    }
};

}  // namespace

TEST(InitRandom, DeterministicPerSeed)
{
    const ModelConfig cfg = small_config();
    EXPECT_EQ(init_random(cfg, 0), init_random(cfg, 0));
    EXPECT_NE(init_random(cfg, 0), init_random(cfg, 1));
}

TEST(InitRandom, LayerNormGainsAreOneAndBiasesZero)
{
    const WeightStore s = init_random(small_config(), 3);
    for (const char* name : {"blocks.0.ln1.weight", "blocks.0.ln2.weight", "ln_f.weight"}) {
        for (float v : s.at(name).data) ASSERT_EQ(v, 1.0f) << name;
    }
    for (const char* name : {"blocks.0.ln1.bias", "blocks.0.ln2.bias", "ln_f.bias"}) {
        for (float v : s.at(name).data) ASSERT_EQ(v, 0.0f) << name;
    }
}

TEST(InitRandom, ProjectionStdIsRoughlyPointZeroTwo)
{
    ModelConfig cfg = small_config();
    cfg.d_model = 64;
    const WeightStore store = init_random(cfg, 0);
    const Tensor& t = store.at("blocks.0.mlp.in.weight");
    double ss = 0.0;
    for (float v : t.data) ss += static_cast<double>(v) * v;
    EXPECT_NEAR(std::sqrt(ss / static_cast<double>(t.numel())), 0.02, 0.001);
}

TEST(ModelConfigTest, ValidationRejectsBadShapes)
{
    ModelConfig c = small_config();
    c.n_heads = 3;
    EXPECT_THROW(c.validate(), InvalidArgument);
    c = small_config();
    c.max_seq_len = 1;
    EXPECT_THROW(c.validate(), InvalidArgument);
    c = small_config();
    c.d_model = 0;
    EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(Stw1, RoundTripIsBitExact)
{
    TempDir dir;
    const ModelConfig cfg = small_config();
    const WeightStore store = init_random(cfg, 0);
    save_weights(dir / "m.stw1", cfg, store);
    const LoadedWeights back = load_weights(dir / "m.stw1");
    EXPECT_EQ(back.config, cfg);
    EXPECT_EQ(back.store, store);
    EXPECT_EQ(serialize_weights(back.config, back.store), serialize_weights(cfg, store));
}

TEST(Stw1, LayoutIsMagicLengthHeaderData)
{
    const ModelConfig cfg = small_config();
    const std::string bytes = serialize_weights(cfg, init_random(cfg, 0));
    ASSERT_EQ(bytes.substr(0, 4), "STW1");
    const Container c(bytes);
    EXPECT_EQ(c.header.at("config").at("d_model"), 8);
    const auto& wte = c.header.at("wte");
    EXPECT_EQ(wte.at("dtype"), "f32");
    EXPECT_EQ(wte.at("shape"), nlohmann::json({16, 8}));
    EXPECT_EQ(wte.at("length"), 16 * 8 * 4);
    const std::uint64_t off = wte.at("offset");
    float first = 0.0f;
    std::memcpy(&first, c.data.data() + off, 4);
    EXPECT_EQ(first, init_random(cfg, 0).at("wte").data[0]);
}

TEST(Stw1, FingerprintTracksContent)
{
    const ModelConfig cfg = small_config();
    const WeightStore a = init_random(cfg, 0);
    WeightStore b = a;
    EXPECT_EQ(weights_fingerprint(cfg, a), weights_fingerprint(cfg, b));
    b.at("ln_f.bias").data[0] = 1e-3f;
    EXPECT_NE(weights_fingerprint(cfg, a), weights_fingerprint(cfg, b));
    EXPECT_TRUE(weights_fingerprint(cfg, a).starts_with("fnv1a64:"));
}

TEST(Stw1, CorruptedMagicIsFormatError)
{
    const ModelConfig cfg = small_config();
    std::string bytes = serialize_weights(cfg, init_random(cfg, 0));
    bytes[0] = 'X';
    EXPECT_THROW(parse_weights(bytes), FormatError);
}

TEST(Stw1, TruncationIsTruncatedError)
{
    const ModelConfig cfg = small_config();
    const std::string bytes = serialize_weights(cfg, init_random(cfg, 0));
    EXPECT_THROW(parse_weights(bytes.substr(0, 2)), TruncatedError);
    EXPECT_THROW(parse_weights(bytes.substr(0, 9)), TruncatedError);
    EXPECT_THROW(parse_weights(bytes.substr(0, 40)), TruncatedError);
    EXPECT_THROW(parse_weights(bytes.substr(0, bytes.size() - 1)), TruncatedError);
}

TEST(Stw1, TensorBeyondFileIsTruncatedError)
{
    const ModelConfig cfg = small_config();
    Container c(serialize_weights(cfg, init_random(cfg, 0)));
    c.header["wte"]["offset"] = c.data.size();
    EXPECT_THROW(parse_weights(c.bytes()), TruncatedError);
}

TEST(Stw1, LengthShapeDisagreementIsShapeError)
{
    const ModelConfig cfg = small_config();
    Container c(serialize_weights(cfg, init_random(cfg, 0)));
    c.header["ln_f.bias"]["shape"] = {9};
    EXPECT_THROW(parse_weights(c.bytes()), ShapeError);

    Container d(serialize_weights(cfg, init_random(cfg, 0)));
    d.header["ln_f.bias"]["shape"] = {2, 4};  // same byte count, wrong shape for the config
    EXPECT_THROW(parse_weights(d.bytes()), ShapeError);
}

TEST(Stw1, MalformedHeaderIsFormatError)
{
    const ModelConfig cfg = small_config();
    Container c(serialize_weights(cfg, init_random(cfg, 0)));
    Container missing = c;
    missing.header.erase("unembed");
    EXPECT_THROW(parse_weights(missing.bytes()), FormatError);

    Container dtype = c;
    dtype.header["wte"]["dtype"] = "f16";
    EXPECT_THROW(parse_weights(dtype.bytes()), FormatError);

    Container noconfig = c;
    noconfig.header.erase("config");
    EXPECT_THROW(parse_weights(noconfig.bytes()), FormatError);

    const std::string garbage = "STW1" + u64_le(5) + "{{{{{";
    EXPECT_THROW(parse_weights(garbage), FormatError);
}

TEST(Stw1, ErrorKindsAreDistinct)
{
    EXPECT_FALSE((std::is_base_of_v<FormatError, TruncatedError>));
    EXPECT_FALSE((std::is_base_of_v<FormatError, ShapeError>));
    EXPECT_FALSE((std::is_base_of_v<ShapeError, TruncatedError>));
}

TEST(Stw1, MissingFileIsIoError)
{
    EXPECT_THROW(load_weights("/nonexistent/dir/m.stw1"), IoError);
}
