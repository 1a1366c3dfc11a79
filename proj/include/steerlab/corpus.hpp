#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "steerlab/error.hpp"

namespace steerlab {

struct CorpusEntry {
    std::string id;
    std::string text;
};

using Corpus = std::vector<CorpusEntry>;

/// Reads a JSONL corpus: one {"id": ..., "text": ...} object per line.
/// Blank lines are skipped.
inline Corpus read_corpus_jsonl(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw IoError("cannot open corpus '" + path.string() + "'");
    Corpus corpus;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            corpus.push_back({j.at("id").get<std::string>(), j.at("text").get<std::string>()});
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return corpus;
}

inline void write_corpus_jsonl(const std::filesystem::path& path, const Corpus& corpus)
{
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    for (const auto& e : corpus) os << nlohmann::json{{"id", e.id}, {"text", e.text}}.dump() << '\n';
}

}  // namespace steerlab
