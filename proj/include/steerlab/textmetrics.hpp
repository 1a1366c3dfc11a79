#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "steerlab/corpus.hpp"
#include "steerlab/csv.hpp"
#include "steerlab/error.hpp"
#include "steerlab/porter.hpp"

namespace steerlab {

namespace detail {

// Length of the UTF-8 punctuation sequence starting at s[i], or 0.
inline std::size_t punctuation_length(std::string_view s, std::size_t i)
{
    const auto c = static_cast<unsigned char>(s[i]);
    if (c < 0x80) {
        return ((c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
                (c >= 0x7B && c <= 0x7E))
                   ? 1
                   : 0;
    }
    if (c == 0xC2 && i + 1 < s.size()) {
        // inverted marks, guillemets, middle dot, pilcrow, section sign
        switch (static_cast<unsigned char>(s[i + 1])) {
            case 0xA1:
            case 0xA7:
            case 0xAB:
            case 0xB6:
            case 0xB7:
            case 0xBB:
            case 0xBF: return 2;
            default: return 0;
        }
    }
    if (c == 0xE2 && i + 2 < s.size()) {
        // General Punctuation block U+2010..U+205E
        const auto c1 = static_cast<unsigned char>(s[i + 1]);
        const auto c2 = static_cast<unsigned char>(s[i + 2]);
        const unsigned cp = ((c & 0x0Fu) << 12) | ((c1 & 0x3Fu) << 6) | (c2 & 0x3Fu);
        if (cp >= 0x2010 && cp <= 0x205E) return 3;
    }
    return 0;
}

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

}  // namespace detail

/// Whitespace split, punctuation removed, ASCII lowercased. Tokens left empty
/// by punctuation removal are dropped.
inline std::vector<std::string> word_tokens(std::string_view text)
{
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
    };
    for (std::size_t i = 0; i < text.size();) {
        if (detail::is_space(text[i])) {
            flush();
            ++i;
            continue;
        }
        if (const std::size_t p = detail::punctuation_length(text, i)) {
            i += p;
            continue;
        }
        char c = text[i++];
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        cur += c;
    }
    flush();
    return out;
}

/// Stems of word_tokens(text), in order.
inline std::vector<std::string> stem_tokens(std::string_view text)
{
    std::vector<std::string> out;
    for (const auto& w : word_tokens(text)) out.push_back(stem(w));
    return out;
}

/// Per-genre sets of stems that are frequent in one genre and absent elsewhere.
struct StemLexicon {
    std::map<std::string, std::set<std::string>> genres;
    std::map<std::string, std::vector<std::string>> sources;  // genre -> corpus sample ids
    std::string stemmer = "porter-1980";
};

/// Keeps stems occurring at least `min_count` times in their genre and never
/// in any other genre.
inline StemLexicon build_stem_lexicon(const std::map<std::string, Corpus>& corpora, std::size_t min_count = 2)
{
    if (corpora.size() < 2) throw InvalidArgument("build_stem_lexicon: need at least 2 genres");
    std::map<std::string, std::map<std::string, std::size_t>> counts;
    StemLexicon lex;
    for (const auto& [genre, corpus] : corpora) {
        auto& c = counts[genre];
        for (const auto& entry : corpus) {
            lex.sources[genre].push_back(entry.id);
            for (const auto& s : stem_tokens(entry.text)) ++c[s];
        }
    }
    for (const auto& [genre, c] : counts) {
        auto& kept = lex.genres[genre];
        for (const auto& [s, n] : c) {
            if (n < min_count) continue;
            const bool elsewhere = std::any_of(counts.begin(), counts.end(), [&](const auto& other) {
                return other.first != genre && other.second.contains(s);
            });
            if (!elsewhere) kept.insert(s);
        }
    }
    return lex;
}

struct FrequencyRow {
    std::string genre;
    std::size_t hits = 0;
    std::size_t total_words = 0;
    double frequency = 0.0;
};

struct FrequencyReport {
    std::vector<FrequencyRow> rows;
    std::size_t total_words = 0;
    bool empty_input = false;  // no words in the text; rows left empty
};

/// Share of the words in `text` whose stem belongs to each genre's set.
inline FrequencyReport genre_frequency(std::string_view text, const StemLexicon& lexicon)
{
    if (lexicon.genres.empty()) throw InvalidArgument("genre_frequency: empty lexicon");
    const auto stems = stem_tokens(text);
    FrequencyReport report;
    report.total_words = stems.size();
    if (stems.empty()) {
        report.empty_input = true;
        return report;
    }
    for (const auto& [genre, set] : lexicon.genres) {
        FrequencyRow row;
        row.genre = genre;
        row.total_words = stems.size();
        row.hits = static_cast<std::size_t>(
            std::count_if(stems.begin(), stems.end(), [&](const std::string& s) { return set.contains(s); }));
        row.frequency = static_cast<double>(row.hits) / static_cast<double>(row.total_words);
        report.rows.push_back(std::move(row));
    }
    return report;
}

inline std::string frequency_csv(const FrequencyReport& report)
{
    std::string out = "genre,hits,total_words,frequency\n";
    for (const auto& r : report.rows) {
        out += csv::row({r.genre, std::to_string(r.hits), std::to_string(r.total_words), csv::number(r.frequency)});
    }
    return out;
}

enum class Polarity { positive, negative };

/// Fraction of words whose stem appears in the (stemmed) wordlist.
/// `polarity` only labels what a high score means.
inline double lexicon_score(std::string_view text, const std::vector<std::string>& wordlist,
                            Polarity polarity = Polarity::positive)
{
    (void)polarity;
    if (wordlist.empty()) throw InvalidArgument("lexicon_score: empty wordlist");
    std::set<std::string> stems;
    for (const auto& w : wordlist) {
        for (const auto& s : stem_tokens(w)) stems.insert(s);
    }
    const auto tokens = stem_tokens(text);
    if (tokens.empty()) return 0.0;
    const auto hits = std::count_if(tokens.begin(), tokens.end(), [&](const std::string& s) { return stems.contains(s); });
    return std::clamp(static_cast<double>(hits) / static_cast<double>(tokens.size()), 0.0, 1.0);
}

/// Deterministic text -> [0, 1] scorer. The shipped implementation is a
/// wordlist match; a real classifier can be plugged in behind this.
class TextScorer {
public:
    virtual ~TextScorer() = default;
    virtual std::string name() const = 0;
    virtual double score(std::string_view text) const = 0;
};

/// Wordlist stand-in for a sentiment/toxicity classifier. Not equivalent to one.
class LexiconScorer final : public TextScorer {
public:
    LexiconScorer(std::string name, std::vector<std::string> wordlist, Polarity polarity)
        : name_(std::move(name)), wordlist_(std::move(wordlist)), polarity_(polarity)
    {
        if (wordlist_.empty()) throw InvalidArgument("LexiconScorer: empty wordlist");
    }

    std::string name() const override { return name_; }
    double score(std::string_view text) const override { return lexicon_score(text, wordlist_, polarity_); }
    Polarity polarity() const { return polarity_; }

private:
    std::string name_;
    std::vector<std::string> wordlist_;
    Polarity polarity_;
};

/// One word per line, UTF-8; blank lines ignored.
inline std::vector<std::string> read_wordlist(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw IoError("cannot open wordlist '" + path.string() + "'");
    std::vector<std::string> words;
    std::string line;
    while (std::getline(is, line)) {
        while (!line.empty() && detail::is_space(line.back())) line.pop_back();
        const auto start = line.find_first_not_of(" \t");
        if (start == std::string::npos) continue;
        words.push_back(line.substr(start));
    }
    return words;
}

inline nlohmann::json lexicon_to_json(const StemLexicon& lex)
{
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [genre, stems] : lex.genres) j[genre] = std::vector<std::string>(stems.begin(), stems.end());
    return j;
}

inline StemLexicon lexicon_from_json(const nlohmann::json& j)
{
    if (!j.is_object()) throw FormatError("lexicon: expected an object of genre -> [stems]");
    StemLexicon lex;
    for (const auto& [genre, stems] : j.items()) {
        if (!stems.is_array()) throw FormatError("lexicon: genre '" + genre + "' is not a list");
        auto& set = lex.genres[genre];
        for (const auto& s : stems) {
            if (!s.is_string()) throw FormatError("lexicon: non-string stem in '" + genre + "'");
            set.insert(s.get<std::string>());
        }
    }
    return lex;
}

}  // namespace steerlab
