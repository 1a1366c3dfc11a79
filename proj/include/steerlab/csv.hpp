#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "steerlab/error.hpp"

namespace steerlab::csv {

/// Quotes a field when it holds a separator, quote or line break.
inline std::string field(std::string_view s)
{
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

/// Nine significant digits, used for every number in a report.
inline std::string number(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline std::string row(std::initializer_list<std::string> fields)
{
    std::string out;
    bool first = true;
    for (const auto& f : fields) {
        if (!first) out += ',';
        out += field(f);
        first = false;
    }
    return out + "\n";
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Index of `name` in the header; throws FormatError when absent.
    std::size_t column(std::string_view name) const
    {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return i;
        }
        throw FormatError("CSV has no column '" + std::string(name) + "'");
    }
};

/// RFC 4180-style reader: quoted fields, doubled quotes, embedded newlines.
inline Table parse(std::string_view text)
{
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> current;
    std::string fieldbuf;
    bool in_quotes = false;
    bool any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        any = true;
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    fieldbuf += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                fieldbuf += c;
            }
            continue;
        }
        if (c == '"') {
            in_quotes = true;
        } else if (c == ',') {
            current.push_back(std::move(fieldbuf));
            fieldbuf.clear();
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            current.push_back(std::move(fieldbuf));
            fieldbuf.clear();
            records.push_back(std::move(current));
            current.clear();
            any = false;
        } else {
            fieldbuf += c;
        }
    }
    if (in_quotes) throw FormatError("CSV ends inside a quoted field");
    if (any) {
        current.push_back(std::move(fieldbuf));
        records.push_back(std::move(current));
    }
    Table t;
    if (records.empty()) throw FormatError("CSV is empty");
    t.header = std::move(records.front());
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != t.header.size()) {
            throw FormatError("CSV row " + std::to_string(r) + " has " + std::to_string(records[r].size()) +
                              " fields, header has " + std::to_string(t.header.size()));
        }
        t.rows.push_back(std::move(records[r]));
    }
    return t;
}

inline Table read(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    const std::string text{std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
    return parse(text);
}

inline void write_text(const std::filesystem::path& path, std::string_view text)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
}

}  // namespace steerlab::csv
