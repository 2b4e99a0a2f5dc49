#pragma once

#include <cctype>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "eit/arith.hpp"
#include "eit/errors.hpp"
#include "eit/rational.hpp"

namespace eit {

enum class SourceFormat { gsm8k, math };

inline const char* to_string(SourceFormat s) {
    return s == SourceFormat::gsm8k ? "gsm8k" : "math";
}

// Canonical comparable form of a final answer. `rational` is populated
// exactly when `canonical` is an integer, decimal, or a/b fraction literal.
struct NormalizedAnswer {
    std::string canonical;
    std::optional<Rational> rational;

    bool operator==(const NormalizedAnswer& o) const {
        return canonical == o.canonical;
    }
};

// One GSM8K `<<expr=result>>` calculator annotation.
struct CalcAnnotation {
    std::string raw;              // full span including the markers
    std::string expression;       // left of `=`
    std::string declared_result;  // right of `=`
    std::pair<std::size_t, std::size_t> byte_span;  // [begin, end) in host text
};

namespace answer_detail {

inline std::string_view trim_view(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

// Content of the brace group starting at s[open] == '{', or nullopt when the
// group never closes. Returns the content and the index one past '}'.
inline std::optional<std::pair<std::string, std::size_t>> balanced_group(
    std::string_view s, std::size_t open) {
    int depth = 0;
    for (std::size_t i = open; i < s.size(); ++i) {
        if (s[i] == '{') {
            ++depth;
        } else if (s[i] == '}') {
            --depth;
            if (depth == 0)
                return std::make_pair(std::string(s.substr(open + 1, i - open - 1)), i + 1);
        }
    }
    return std::nullopt;
}

}  // namespace answer_detail

// Raw final-answer text of a response. gsm8k: everything after the last
// `####`, trimmed. math: content of the last balanced `\boxed{...}` group,
// nested braces included.
inline std::string extract_final_answer(std::string_view text, SourceFormat format) {
    using namespace answer_detail;
    if (format == SourceFormat::gsm8k) {
        std::size_t pos = text.rfind("####");
        if (pos == std::string_view::npos)
            throw MissingAnswerMarker("no '####' marker in response");
        return std::string(trim_view(text.substr(pos + 4)));
    }
    constexpr std::string_view kBoxed = "\\boxed";
    std::size_t last = std::string_view::npos;
    for (std::size_t pos = text.find(kBoxed); pos != std::string_view::npos;
         pos = text.find(kBoxed, pos + 1)) {
        last = pos;
    }
    if (last == std::string_view::npos)
        throw MissingAnswerMarker("no '\\boxed{}' in response");
    std::size_t open = last + kBoxed.size();
    while (open < text.size() && std::isspace(static_cast<unsigned char>(text[open]))) ++open;
    if (open >= text.size() || text[open] != '{')
        throw MalformedBoxed("'\\boxed' without brace group");
    auto group = balanced_group(text, open);
    if (!group) throw MalformedBoxed("unbalanced braces after '\\boxed{'");
    return std::string(trim_view(group->first));
}

namespace answer_detail {

inline std::string unwrap_text_commands(std::string s) {
    constexpr std::string_view kText = "\\text";
    std::size_t pos = 0;
    while ((pos = s.find(kText, pos)) != std::string::npos) {
        std::size_t open = pos + kText.size();
        if (open >= s.size() || s[open] != '{') {
            pos = open;
            continue;
        }
        auto group = balanced_group(s, open);
        if (!group) break;  // ill-formed; leave as-is
        s = s.substr(0, pos) + group->first + s.substr(group->second);
        // rescan from pos: the unwrapped content may itself contain \text{}
    }
    return s;
}

inline void erase_all(std::string& s, std::string_view needle) {
    std::size_t pos = 0;
    while ((pos = s.find(needle, pos)) != std::string::npos) s.erase(pos, needle.size());
}

inline std::string strip_trailing_units(std::string s) {
    auto rtrim = [&] {
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    };
    rtrim();
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::string_view suffix : {"^{\\circ}", "^\\circ", "\\%", "%"}) {
            if (s.size() >= suffix.size() &&
                std::string_view(s).substr(s.size() - suffix.size()) == suffix) {
                s.erase(s.size() - suffix.size());
                rtrim();
                changed = true;
            }
        }
    }
    return s;
}

// \frac{a}{b}, \tfrac, \dfrac -> a/b, innermost-first.
inline std::string rewrite_fracs(std::string s) {
    constexpr std::string_view kCommands[] = {"\\tfrac", "\\dfrac", "\\frac"};
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::string_view cmd : kCommands) {
            std::size_t pos = s.find(cmd);
            if (pos == std::string::npos) continue;
            std::size_t open = pos + cmd.size();
            if (open >= s.size() || s[open] != '{') continue;
            auto first = balanced_group(s, open);
            if (!first) continue;
            if (first->second >= s.size() || s[first->second] != '{') continue;
            auto second = balanced_group(s, first->second);
            if (!second) continue;
            std::string a = rewrite_fracs(first->first);
            std::string b = rewrite_fracs(second->first);
            s = s.substr(0, pos) + a + "/" + b + s.substr(second->second);
            changed = true;
        }
    }
    return s;
}

inline std::string collapse_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool in_ws = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            in_ws = true;
            continue;
        }
        if (in_ws && !out.empty()) out.push_back(' ');
        in_ws = false;
        out.push_back(c);
    }
    return out;
}

inline bool is_pure_word(std::string_view s) {
    if (s.empty()) return false;
    bool has_alpha = false;
    for (char c : s) {
        if (std::isalpha(static_cast<unsigned char>(c))) {
            has_alpha = true;
        } else if (c != ' ') {
            return false;
        }
    }
    return has_alpha;
}

}  // namespace answer_detail

namespace answer_detail {

inline std::string normalize_pass(std::string s) {
    s = std::string(trim_view(s));
    while (s.size() >= 2 && s.front() == '$' && s.back() == '$') {
        s = std::string(trim_view(std::string_view(s).substr(1, s.size() - 2)));
    }
    s = unwrap_text_commands(std::move(s));
    erase_all(s, "\\!");
    erase_all(s, "\\,");
    s = detail::strip_thousands_commas(s);
    s = strip_trailing_units(std::move(s));
    s = rewrite_fracs(std::move(s));
    s = collapse_whitespace(s);
    if (is_pure_word(s)) {
        for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return s;
}

}  // namespace answer_detail

// Canonicalization pipeline, applied in a fixed order: trim; strip enclosing
// `$`; unwrap \text{}; drop \! \, and thousands commas; strip trailing degree
// and percent decorations; rewrite \frac{a}{b} to a/b; collapse whitespace;
// lowercase pure-word answers. One step can expose work for an earlier one
// (\text{$x$} unwraps to $x$), so the pass repeats until the string is
// stable; the canonical form is a fixed point of normalization. Never fails:
// worst case the canonical form is the trimmed input.
inline NormalizedAnswer normalize_answer(std::string_view raw) {
    using namespace answer_detail;
    std::string s(raw);
    for (;;) {
        std::string next = normalize_pass(s);
        if (next == s) break;
        s = std::move(next);
    }
    NormalizedAnswer out;
    out.canonical = std::move(s);
    out.rational = Rational::parse(out.canonical);
    return out;
}

// Exact equality on rationals when both sides have one, canonical string
// equality otherwise. No floating-point tolerance anywhere.
inline bool answers_equivalent(const NormalizedAnswer& a, const NormalizedAnswer& b) {
    if (a.rational && b.rational) return *a.rational == *b.rational;
    return a.canonical == b.canonical;
}

// All non-overlapping `<<expr=result>>` spans, in order of appearance.
inline std::vector<CalcAnnotation> parse_calc_annotations(std::string_view text) {
    using namespace answer_detail;
    std::vector<CalcAnnotation> out;
    std::size_t pos = 0;
    while ((pos = text.find("<<", pos)) != std::string_view::npos) {
        std::size_t close = text.find(">>", pos + 2);
        if (close == std::string_view::npos)
            throw MalformedAnnotation("'<<' without closing '>>'", pos);
        std::string_view inner = text.substr(pos + 2, close - pos - 2);
        std::size_t eq = inner.find('=');
        if (eq == std::string_view::npos)
            throw MalformedAnnotation("annotation without '='", pos);
        if (inner.find('=', eq + 1) != std::string_view::npos)
            throw MalformedAnnotation("annotation with more than one '='", pos);
        CalcAnnotation ann;
        ann.raw = std::string(text.substr(pos, close + 2 - pos));
        ann.expression = std::string(trim_view(inner.substr(0, eq)));
        ann.declared_result = std::string(trim_view(inner.substr(eq + 1)));
        ann.byte_span = {pos, close + 2};
        out.push_back(std::move(ann));
        pos = close + 2;
    }
    return out;
}

// True iff the annotation's expression evaluates exactly to its declared
// result. The declared result must parse as a rational.
inline bool verify_calc_annotation(const CalcAnnotation& ann) {
    auto declared = Rational::parse(ann.declared_result);
    if (!declared)
        throw VerifyError("declared result is not numeric: '" + ann.declared_result + "'");
    return eval_arith(ann.expression) == *declared;
}

}  // namespace eit
