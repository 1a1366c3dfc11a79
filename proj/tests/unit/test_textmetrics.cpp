#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "steerlab/textmetrics.hpp"
#include "support/fixtures.hpp"

using namespace steerlab;
using steerlab::testing::data_dir;
using steerlab::testing::test_data_dir;

namespace {

Corpus single(std::string text) { return {{"s0", std::move(text)}}; }

std::map<std::string, Corpus> fixture_corpora()
{
    std::map<std::string, Corpus> out;
    for (const char* genre : {"fantasy", "scifi", "sports"}) {
        out[genre] = read_corpus_jsonl(data_dir() / "corpora" / (std::string(genre) + ".jsonl"));
    }
    return out;
}

void expect_lexicon_invariants(const std::map<std::string, Corpus>& corpora, const StemLexicon& lex,
                               std::size_t min_count)
{
    std::map<std::string, std::map<std::string, std::size_t>> counts;
    for (const auto& [g, c] : corpora) {
        for (const auto& e : c) {
            for (const auto& s : stem_tokens(e.text)) ++counts[g][s];
        }
    }
    for (const auto& [g, set] : lex.genres) {
        for (const auto& s : set) {
            EXPECT_GE(counts[g][s], min_count) << g << " " << s;
            for (const auto& [other, oset] : lex.genres) {
                if (other == g) continue;
                EXPECT_FALSE(oset.contains(s)) << s;
                EXPECT_FALSE(counts[other].contains(s)) << s;
            }
        }
    }
}

}  // namespace

TEST(Porter, ReferenceVectors)
{
    std::ifstream is(test_data_dir() / "porter_vectors.txt");
    ASSERT_TRUE(is);
    std::string word, expected;
    std::size_t n = 0;
    while (is >> word >> expected) {
        ASSERT_EQ(stem(word), expected) << word;
        ++n;
    }
    EXPECT_GT(n, 2000u);
}

TEST(Porter, Examples)
{
    EXPECT_EQ(stem("running"), "run");
    EXPECT_EQ(stem("cat"), "cat");
    EXPECT_EQ(stem("enchanted"), "enchant");
    EXPECT_EQ(stem("enchantment"), "enchant");
    EXPECT_EQ(stem("enchantments"), "enchant");
    EXPECT_EQ(stem("a"), "a");
    EXPECT_EQ(stem("42"), "42");
}

TEST(WordTokens, StripsPunctuationAndLowercases)
{
    EXPECT_EQ(word_tokens("Hello, World!  it's “fine” -- ok"),
              (std::vector<std::string>{"hello", "world", "its", "fine", "ok"}));
    EXPECT_TRUE(word_tokens(" \t\n").empty());
}

TEST(StemLexicon, HandExamples)
{
    const std::map<std::string, Corpus> corpora{{"A", single("dragon dragon sword")}, {"B", single("laser laser")}};
    const auto lex = build_stem_lexicon(corpora);
    EXPECT_EQ(lex.genres.at("A"), (std::set<std::string>{"dragon"}));
    EXPECT_EQ(lex.genres.at("B"), (std::set<std::string>{"laser"}));

    const auto shared = build_stem_lexicon({{"A", single("one two two")}, {"B", single("two one one")}});
    EXPECT_TRUE(shared.genres.at("A").empty());
    EXPECT_TRUE(shared.genres.at("B").empty());

    EXPECT_THROW(build_stem_lexicon({{"A", single("x")}}), InvalidArgument);
}

TEST(StemLexicon, FixtureCorporaPlaceEnchantInFantasyOnly)
{
    const auto corpora = fixture_corpora();
    const auto lex = build_stem_lexicon(corpora);
    EXPECT_TRUE(lex.genres.at("fantasy").contains("enchant"));
    EXPECT_FALSE(lex.genres.at("scifi").contains("enchant"));
    EXPECT_FALSE(lex.genres.at("sports").contains("enchant"));
    expect_lexicon_invariants(corpora, lex, 2);
}

TEST(StemLexicon, InvariantsOverRandomCorpora)
{
    Rng rng(8);
    const std::vector<std::string> vocab{"run", "running", "cat", "cats", "tree", "trees", "laser", "dragon",
                                         "sword", "ship", "goal", "ball", "magic", "orbit", "score"};
    for (int trial = 0; trial < 30; ++trial) {
        std::map<std::string, Corpus> corpora;
        const std::size_t genres = 2 + rng.below(3);
        for (std::size_t g = 0; g < genres; ++g) {
            Corpus c;
            for (std::size_t s = 0; s < 1 + rng.below(3); ++s) {
                std::string text;
                for (std::size_t w = 0; w < 1 + rng.below(8); ++w) text += vocab[rng.below(vocab.size())] + " ";
                c.push_back({"s" + std::to_string(s), text});
            }
            corpora["g" + std::to_string(g)] = c;
        }
        const std::size_t min_count = 1 + rng.below(3);
        expect_lexicon_invariants(corpora, build_stem_lexicon(corpora, min_count), min_count);
    }
}

TEST(StemLexicon, RelabelingGenresRelabelsOutput)
{
    const auto corpora = fixture_corpora();
    const auto lex = build_stem_lexicon(corpora);
    const std::map<std::string, std::string> rename{{"fantasy", "zz"}, {"scifi", "aa"}, {"sports", "mm"}};
    std::map<std::string, Corpus> relabeled;
    for (const auto& [g, c] : corpora) relabeled[rename.at(g)] = c;
    const auto lex2 = build_stem_lexicon(relabeled);
    for (const auto& [g, set] : lex.genres) EXPECT_EQ(lex2.genres.at(rename.at(g)), set);
}

TEST(GenreFrequency, HandCounts)
{
    const auto lex = build_stem_lexicon({{"A", single("dragon dragon sword")}, {"B", single("laser laser")}});
    const auto r = genre_frequency("dragon dragon laser", lex);
    ASSERT_EQ(r.rows.size(), 2u);
    EXPECT_EQ(r.rows[0].genre, "A");
    EXPECT_EQ(r.rows[0].hits, 2u);
    EXPECT_EQ(r.rows[0].frequency, 2.0 / 3.0);
    EXPECT_EQ(r.rows[1].hits, 1u);
    EXPECT_EQ(r.rows[1].frequency, 1.0 / 3.0);
    EXPECT_EQ(r.total_words, 3u);

    const auto miss = genre_frequency("nothing here matches", lex);
    for (const auto& row : miss.rows) EXPECT_EQ(row.frequency, 0.0);
    EXPECT_EQ(miss.total_words, 3u);

    const auto empty = genre_frequency("  ...  ", lex);
    EXPECT_TRUE(empty.empty_input);
    EXPECT_TRUE(empty.rows.empty());
    EXPECT_EQ(empty.total_words, 0u);

    EXPECT_THROW(genre_frequency("x", StemLexicon{}), InvalidArgument);
    EXPECT_EQ(frequency_csv(r), "genre,hits,total_words,frequency\nA,2,3,0.666666667\nB,1,3,0.333333333\n");
}

TEST(GenreFrequency, DuplicationAndCaseInvariance)
{
    const auto lex = build_stem_lexicon(fixture_corpora());
    const std::string text = "The enchanted forest glowed while the starship orbited; the striker scored a goal.";
    const auto base = genre_frequency(text, lex);
    const auto doubled = genre_frequency(text + " " + text, lex);
    std::string upper = text;
    for (char& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    const auto shouted = genre_frequency(upper, lex);
    ASSERT_EQ(base.rows.size(), doubled.rows.size());
    for (std::size_t i = 0; i < base.rows.size(); ++i) {
        EXPECT_EQ(doubled.rows[i].hits, 2 * base.rows[i].hits);
        EXPECT_EQ(doubled.rows[i].total_words, 2 * base.rows[i].total_words);
        EXPECT_DOUBLE_EQ(doubled.rows[i].frequency, base.rows[i].frequency);
        EXPECT_EQ(shouted.rows[i].hits, base.rows[i].hits);
    }
}

TEST(LexiconScore, HandCounts)
{
    const std::vector<std::string> words{"love", "kind"};
    EXPECT_EQ(lexicon_score("", words), 0.0);
    EXPECT_EQ(lexicon_score("Love loving kindness", std::vector<std::string>{"love", "kindness"}), 1.0);
    EXPECT_EQ(lexicon_score("love the kind dog", words), 0.5);
    EXPECT_THROW(lexicon_score("x", {}), InvalidArgument);

    const LexiconScorer scorer("toxicity", {"awful"}, Polarity::negative);
    EXPECT_EQ(scorer.name(), "toxicity");
    EXPECT_EQ(scorer.polarity(), Polarity::negative);
    EXPECT_EQ(scorer.score("awful awful day fine"), 0.5);
    EXPECT_THROW(LexiconScorer("x", {}, Polarity::positive), InvalidArgument);
}

TEST(Wordlists, ShippedListsLoad)
{
    const auto pos = read_wordlist(data_dir() / "wordlists" / "positive.txt");
    const auto tox = read_wordlist(data_dir() / "wordlists" / "toxic.txt");
    EXPECT_FALSE(pos.empty());
    EXPECT_FALSE(tox.empty());
    for (const auto& w : pos) EXPECT_FALSE(w.empty());
    EXPECT_THROW(read_wordlist("/nonexistent/list.txt"), IoError);
}

TEST(StemLexicon, JsonRoundTrip)
{
    const auto lex = build_stem_lexicon(fixture_corpora());
    const auto back = lexicon_from_json(nlohmann::json::parse(lexicon_to_json(lex).dump()));
    EXPECT_EQ(back.genres, lex.genres);
    EXPECT_THROW(lexicon_from_json(nlohmann::json::array()), FormatError);
    EXPECT_THROW(lexicon_from_json(nlohmann::json{{"a", 1}}), FormatError);
    EXPECT_THROW(lexicon_from_json(nlohmann::json{{"a", {1}}}), FormatError);
}
