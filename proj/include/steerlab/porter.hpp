#pragma once

// Porter stemmer, original 1980 rule set (not the later reference C
// implementation, which swaps ABLI->ABLE for BLI->BLE and adds LOGI->LOG).

#include <array>
#include <string>
#include <string_view>

namespace steerlab {

class PorterStemmer {
public:
    /// Stems a lowercase ASCII word. Anything containing a character outside
    /// a-z is returned unchanged.
    std::string operator()(std::string_view word) const
    {
        for (char c : word) {
            if (c < 'a' || c > 'z') return std::string(word);
        }
        std::string w(word);
        step1a(w);
        step1b(w);
        step1c(w);
        step2(w);
        step3(w);
        step4(w);
        step5(w);
        return w;
    }

private:
    struct Rule {
        std::string_view suffix;
        std::string_view replacement;
    };

    static bool consonant(const std::string& w, std::size_t i)
    {
        switch (w[i]) {
            case 'a':
            case 'e':
            case 'i':
            case 'o':
            case 'u': return false;
            case 'y': return i == 0 || !consonant(w, i - 1);
            default: return true;
        }
    }

    // m in [C](VC)^m[V], over the first `len` letters
    static int measure(const std::string& w, std::size_t len)
    {
        int m = 0;
        std::size_t i = 0;
        while (i < len && consonant(w, i)) ++i;
        while (i < len) {
            while (i < len && !consonant(w, i)) ++i;
            if (i >= len) break;
            while (i < len && consonant(w, i)) ++i;
            ++m;
        }
        return m;
    }

    static bool has_vowel(const std::string& w, std::size_t len)
    {
        for (std::size_t i = 0; i < len; ++i) {
            if (!consonant(w, i)) return true;
        }
        return false;
    }

    static bool double_consonant(const std::string& w, std::size_t len)
    {
        return len >= 2 && w[len - 1] == w[len - 2] && consonant(w, len - 1);
    }

    // *o: ends consonant-vowel-consonant, the last not w, x or y
    static bool cvc(const std::string& w, std::size_t len)
    {
        if (len < 3) return false;
        if (!consonant(w, len - 3) || consonant(w, len - 2) || !consonant(w, len - 1)) return false;
        const char c = w[len - 1];
        return c != 'w' && c != 'x' && c != 'y';
    }

    // Only the rule with the longest matching suffix is considered; if its
    // condition fails the step does nothing.
    template <std::size_t N, class Cond>
    static void apply_longest(std::string& w, const std::array<Rule, N>& rules, Cond cond)
    {
        const Rule* best = nullptr;
        for (const Rule& r : rules) {
            if (w.ends_with(r.suffix) && (!best || r.suffix.size() > best->suffix.size())) best = &r;
        }
        if (!best) return;
        const std::size_t stem = w.size() - best->suffix.size();
        if (cond(stem, *best)) w.replace(stem, std::string::npos, best->replacement);
    }

    static void step1a(std::string& w)
    {
        static constexpr std::array<Rule, 4> rules{{{"sses", "ss"}, {"ies", "i"}, {"ss", "ss"}, {"s", ""}}};
        apply_longest(w, rules, [](std::size_t, const Rule&) { return true; });
    }

    static void step1b(std::string& w)
    {
        if (w.ends_with("eed")) {
            if (measure(w, w.size() - 3) > 0) w.pop_back();
            return;
        }
        std::size_t cut = 0;
        if (w.ends_with("ed") && has_vowel(w, w.size() - 2)) {
            cut = 2;
        } else if (w.ends_with("ing") && has_vowel(w, w.size() - 3)) {
            cut = 3;
        }
        if (cut == 0) return;
        w.resize(w.size() - cut);
        if (w.ends_with("at") || w.ends_with("bl") || w.ends_with("iz")) {
            w += 'e';
        } else if (double_consonant(w, w.size())) {
            const char c = w.back();
            if (c != 'l' && c != 's' && c != 'z') w.pop_back();
        } else if (measure(w, w.size()) == 1 && cvc(w, w.size())) {
            w += 'e';
        }
    }

    static void step1c(std::string& w)
    {
        if (w.ends_with('y') && has_vowel(w, w.size() - 1)) w.back() = 'i';
    }

    static void step2(std::string& w)
    {
        static constexpr std::array<Rule, 20> rules{{
            {"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"},  {"anci", "ance"},   {"izer", "ize"},
            {"abli", "able"},   {"alli", "al"},     {"entli", "ent"},  {"eli", "e"},       {"ousli", "ous"},
            {"ization", "ize"}, {"ation", "ate"},   {"ator", "ate"},   {"alism", "al"},    {"iveness", "ive"},
            {"fulness", "ful"}, {"ousness", "ous"}, {"aliti", "al"},   {"iviti", "ive"},   {"biliti", "ble"},
        }};
        apply_longest(w, rules, [&](std::size_t stem, const Rule&) { return measure(w, stem) > 0; });
    }

    static void step3(std::string& w)
    {
        static constexpr std::array<Rule, 7> rules{{
            {"icate", "ic"}, {"ative", ""}, {"alize", "al"}, {"iciti", "ic"}, {"ical", "ic"}, {"ful", ""}, {"ness", ""},
        }};
        apply_longest(w, rules, [&](std::size_t stem, const Rule&) { return measure(w, stem) > 0; });
    }

    static void step4(std::string& w)
    {
        static constexpr std::array<Rule, 19> rules{{
            {"al", ""},  {"ance", ""}, {"ence", ""}, {"er", ""},  {"ic", ""},  {"able", ""}, {"ible", ""},
            {"ant", ""}, {"ement", ""}, {"ment", ""}, {"ent", ""}, {"ion", ""}, {"ou", ""},   {"ism", ""},
            {"ate", ""}, {"iti", ""},  {"ous", ""},  {"ive", ""}, {"ize", ""},
        }};
        apply_longest(w, rules, [&](std::size_t stem, const Rule& r) {
            if (measure(w, stem) <= 1) return false;
            if (r.suffix == "ion") return stem > 0 && (w[stem - 1] == 's' || w[stem - 1] == 't');
            return true;
        });
    }

    static void step5(std::string& w)
    {
        if (w.ends_with('e')) {
            const std::size_t stem = w.size() - 1;
            const int m = measure(w, stem);
            if (m > 1 || (m == 1 && !cvc(w, stem))) w.pop_back();
        }
        if (w.ends_with('l') && double_consonant(w, w.size()) && measure(w, w.size()) > 1) w.pop_back();
    }
};

/// Stems one lowercase word with the Porter rules.
inline std::string stem(std::string_view word) { return PorterStemmer{}(word); }

}  // namespace steerlab
