#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "steerlab/error.hpp"

namespace steerlab {

using TokenId = std::uint32_t;
using TokenSequence = std::vector<TokenId>;

/// Byte-level tokenizer: ids 0-255 are raw bytes, ids >= 256 are specials.
class ByteTokenizer {
public:
    static constexpr TokenId kBos = 256;
    static constexpr TokenId kSpace = 0x20;

    explicit ByteTokenizer(std::size_t vocab_size) : vocab_size_(vocab_size) {}

    std::size_t vocab_size() const { return vocab_size_; }

    /// Encodes `text` byte by byte, prefixed with BOS.
    TokenSequence encode(std::string_view text) const
    {
        TokenSequence ids;
        ids.reserve(text.size() + 1);
        ids.push_back(kBos);
        for (unsigned char c : text) ids.push_back(c);
        return ids;
    }

    /// Concatenates byte tokens; specials are dropped.
    std::string decode(std::span<const TokenId> ids) const
    {
        std::string out;
        out.reserve(ids.size());
        for (TokenId id : ids) {
            if (id >= vocab_size_) {
                throw InvalidArgument("token id " + std::to_string(id) + " outside vocabulary of size " +
                                      std::to_string(vocab_size_));
            }
            if (id < 256) out.push_back(static_cast<char>(id));
        }
        return out;
    }

    /// Printable label for reports: the character itself when printable ASCII.
    static std::string token_label(TokenId id)
    {
        if (id == kBos) return "<bos>";
        if (id >= 256) return "<special:" + std::to_string(id) + ">";
        if (id >= 0x21 && id < 0x7f) return std::string(1, static_cast<char>(id));
        char buf[8];
        std::snprintf(buf, sizeof buf, "<0x%02X>", static_cast<unsigned>(id));
        return buf;
    }

private:
    std::size_t vocab_size_;
};

}  // namespace steerlab
