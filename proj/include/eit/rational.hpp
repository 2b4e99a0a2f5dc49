#pragma once

#include <cctype>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "eit/errors.hpp"

namespace eit {

// Exact rational on 64-bit components, always in lowest terms with a positive
// denominator. Intermediate products go through __int128; anything that would
// not fit back into int64 raises ArithError rather than silently wrapping.
class Rational {
public:
    Rational() : num_(0), den_(1) {}
    Rational(std::int64_t numerator, std::int64_t denominator) {
        if (denominator == 0) throw ArithError("division by zero");
        __int128 n = numerator;
        __int128 d = denominator;
        if (d < 0) {
            n = -n;
            d = -d;
        }
        reduce_assign(n, d);
    }

    static Rational from_integer(std::int64_t v) { return Rational(v, 1); }

    std::int64_t numerator() const { return num_; }
    std::int64_t denominator() const { return den_; }

    bool is_integer() const { return den_ == 1; }

    Rational operator+(const Rational& o) const {
        return make(i128(num_) * o.den_ + i128(o.num_) * den_, i128(den_) * o.den_);
    }
    Rational operator-(const Rational& o) const {
        return make(i128(num_) * o.den_ - i128(o.num_) * den_, i128(den_) * o.den_);
    }
    Rational operator*(const Rational& o) const {
        return make(i128(num_) * o.num_, i128(den_) * o.den_);
    }
    Rational operator/(const Rational& o) const {
        if (o.num_ == 0) throw ArithError("division by zero");
        return make(i128(num_) * o.den_, i128(den_) * o.num_);
    }
    Rational operator-() const { return make(-i128(num_), i128(den_)); }

    bool operator==(const Rational& o) const { return num_ == o.num_ && den_ == o.den_; }
    bool operator!=(const Rational& o) const { return !(*this == o); }

    // "a/b" for non-integers, plain integer string otherwise.
    std::string str() const {
        if (den_ == 1) return std::to_string(num_);
        return std::to_string(num_) + "/" + std::to_string(den_);
    }

    // Parses integer, decimal, or a/b fraction literals. Thousands commas in
    // digit groups of three are accepted ("1,234"). Returns nullopt when the
    // text is not one of those forms or does not fit in 64 bits.
    static std::optional<Rational> parse(std::string_view text);

private:
    using i128 = __int128;

    static Rational make(i128 n, i128 d) {
        Rational r;
        if (d == 0) throw ArithError("division by zero");
        if (d < 0) {
            n = -n;
            d = -d;
        }
        r.reduce_assign(n, d);
        return r;
    }

    void reduce_assign(i128 n, i128 d) {
        i128 a = n < 0 ? -n : n;
        i128 b = d;
        while (b != 0) {
            i128 t = a % b;
            a = b;
            b = t;
        }
        if (a != 0) {
            n /= a;
            d /= a;
        } else {
            d = 1;  // 0/x -> 0/1
        }
        constexpr i128 kMax = INT64_MAX;
        constexpr i128 kMin = INT64_MIN;
        if (n > kMax || n < kMin || d > kMax) throw ArithError("rational overflow");
        num_ = static_cast<std::int64_t>(n);
        den_ = static_cast<std::int64_t>(d);
    }

    std::int64_t num_;
    std::int64_t den_;
};

namespace detail {

// Strips "1,234,567"-style separators; leaves any other comma in place.
inline std::string strip_thousands_commas(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == ',' && i > 0 && std::isdigit(static_cast<unsigned char>(s[i - 1]))) {
            bool group3 = true;
            for (std::size_t j = i + 1; j < i + 4; ++j) {
                if (j >= s.size() || !std::isdigit(static_cast<unsigned char>(s[j]))) {
                    group3 = false;
                    break;
                }
            }
            if (group3 && (i + 4 >= s.size() ||
                           !std::isdigit(static_cast<unsigned char>(s[i + 4])))) {
                continue;  // drop the separator
            }
        }
        out.push_back(s[i]);
    }
    return out;
}

}  // namespace detail

inline std::optional<Rational> Rational::parse(std::string_view text) {
    std::string s = detail::strip_thousands_commas(text);
    if (s.empty()) return std::nullopt;

    std::size_t pos = 0;
    bool negative = false;
    if (s[pos] == '+' || s[pos] == '-') {
        negative = s[pos] == '-';
        ++pos;
    }
    if (pos >= s.size()) return std::nullopt;

    auto digits_at = [&](std::size_t p) {
        std::size_t q = p;
        while (q < s.size() && std::isdigit(static_cast<unsigned char>(s[q]))) ++q;
        return q;
    };

    std::size_t int_end = digits_at(pos);
    if (int_end == pos && !(int_end < s.size() && s[int_end] == '.')) return std::nullopt;

    try {
        if (int_end < s.size() && s[int_end] == '.') {
            std::size_t frac_end = digits_at(int_end + 1);
            if (frac_end != s.size()) return std::nullopt;
            std::string_view ip(s.data() + pos, int_end - pos);
            std::string_view fp(s.data() + int_end + 1, frac_end - int_end - 1);
            if (ip.empty() && fp.empty()) return std::nullopt;
            if (fp.size() > 18) return std::nullopt;
            std::int64_t scale = 1;
            for (std::size_t i = 0; i < fp.size(); ++i) scale *= 10;
            __int128 whole = 0;
            for (char c : ip) {
                whole = whole * 10 + (c - '0');
                if (whole > INT64_MAX) return std::nullopt;
            }
            __int128 frac = 0;
            for (char c : fp) frac = frac * 10 + (c - '0');
            __int128 num = whole * scale + frac;
            if (num > INT64_MAX) return std::nullopt;
            auto v = Rational(static_cast<std::int64_t>(num), scale);
            return negative ? -v : v;
        }
        if (int_end < s.size() && s[int_end] == '/') {
            std::size_t den_start = int_end + 1;
            bool den_neg = false;
            if (den_start < s.size() && (s[den_start] == '-' || s[den_start] == '+')) {
                den_neg = s[den_start] == '-';
                ++den_start;
            }
            std::size_t den_end = digits_at(den_start);
            if (den_end != s.size() || den_end == den_start) return std::nullopt;
            __int128 num = 0, den = 0;
            for (std::size_t i = pos; i < int_end; ++i) {
                num = num * 10 + (s[i] - '0');
                if (num > INT64_MAX) return std::nullopt;
            }
            for (std::size_t i = den_start; i < den_end; ++i) {
                den = den * 10 + (s[i] - '0');
                if (den > INT64_MAX) return std::nullopt;
            }
            if (den == 0) return std::nullopt;
            auto v = Rational(static_cast<std::int64_t>(num), static_cast<std::int64_t>(den));
            if (negative != den_neg) v = -v;
            return v;
        }
        if (int_end != s.size()) return std::nullopt;
        __int128 num = 0;
        for (std::size_t i = pos; i < int_end; ++i) {
            num = num * 10 + (s[i] - '0');
            if (num > INT64_MAX) return std::nullopt;
        }
        auto v = Rational::from_integer(static_cast<std::int64_t>(num));
        return negative ? -v : v;
    } catch (const ArithError&) {
        return std::nullopt;
    }
}

}  // namespace eit
