#pragma once

#include <cctype>
#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace eit {

// Token counting interface. The metric built on top is comparative, so any
// consistent counter works; callers that care plug in their own.
using Tokenizer = std::function<std::size_t(std::string_view)>;

// Default counter: splits on whitespace and counts every ASCII punctuation
// character as its own token. UTF-8 continuation bytes ride along with the
// word they belong to. count("") == 0, and appending non-empty text never
// decreases the count.
inline std::vector<std::string> default_tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            tokens.push_back(current);
            current.clear();
        }
    };
    for (char c : text) {
        unsigned char u = static_cast<unsigned char>(c);
        if (std::isspace(u)) {
            flush();
        } else if (u < 0x80 && std::ispunct(u)) {
            flush();
            tokens.push_back(std::string(1, c));
        } else {
            current.push_back(c);
        }
    }
    flush();
    return tokens;
}

inline std::size_t default_token_count(std::string_view text) {
    std::size_t count = 0;
    bool in_word = false;
    for (char c : text) {
        unsigned char u = static_cast<unsigned char>(c);
        if (std::isspace(u)) {
            in_word = false;
        } else if (u < 0x80 && std::ispunct(u)) {
            ++count;
            in_word = false;
        } else {
            if (!in_word) ++count;
            in_word = true;
        }
    }
    return count;
}

inline Tokenizer default_tokenizer() {
    return [](std::string_view text) { return default_token_count(text); };
}

}  // namespace eit
