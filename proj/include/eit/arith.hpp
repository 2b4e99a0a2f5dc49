#pragma once

#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "eit/errors.hpp"
#include "eit/rational.hpp"

namespace eit {

// Evaluator for the arithmetic subset that appears in GSM8K calculator
// annotations: integers and decimals, + - * /, parentheses, and the letter
// `x` as a multiplication alias ("2 x 16"). Values are exact rationals.
//
//   expr    := term (('+'|'-') term)*
//   term    := factor (('*'|'/'|'x') factor)*
//   factor  := ('+'|'-')* primary
//   primary := number | '(' expr ')'
Rational eval_arith(std::string_view expression);

namespace arith_detail {

enum class Tok { number, plus, minus, mul, div, lparen, rparen, end };

struct Token {
    Tok kind;
    Rational value;     // number tokens only
    std::size_t offset; // into the source expression
};

inline std::vector<Token> lex(std::string_view src) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < src.size()) {
        char c = src[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        std::size_t start = i;
        switch (c) {
            case '+': out.push_back({Tok::plus, {}, start}); ++i; continue;
            case '-': out.push_back({Tok::minus, {}, start}); ++i; continue;
            case '*': out.push_back({Tok::mul, {}, start}); ++i; continue;
            case 'x':
            case 'X': out.push_back({Tok::mul, {}, start}); ++i; continue;
            case '/': out.push_back({Tok::div, {}, start}); ++i; continue;
            case '(': out.push_back({Tok::lparen, {}, start}); ++i; continue;
            case ')': out.push_back({Tok::rparen, {}, start}); ++i; continue;
            default: break;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            std::size_t j = i;
            while (j < src.size()) {
                char d = src[j];
                if (std::isdigit(static_cast<unsigned char>(d)) || d == '.') {
                    ++j;
                    continue;
                }
                // comma is part of the number only as a thousands separator
                if (d == ',' && j + 1 < src.size() &&
                    std::isdigit(static_cast<unsigned char>(src[j + 1]))) {
                    ++j;
                    continue;
                }
                break;
            }
            auto parsed = Rational::parse(src.substr(i, j - i));
            if (!parsed) throw ParseError("invalid number literal", start);
            out.push_back({Tok::number, *parsed, start});
            i = j;
            continue;
        }
        throw ParseError(std::string("unexpected character '") + c + "'", start);
    }
    out.push_back({Tok::end, {}, src.size()});
    return out;
}

class Parser {
public:
    explicit Parser(std::vector<Token> tokens) : toks_(std::move(tokens)) {}

    Rational parse() {
        Rational v = expr();
        if (peek().kind != Tok::end) throw ParseError("trailing input", peek().offset);
        return v;
    }

private:
    const Token& peek() const { return toks_[pos_]; }
    const Token& take() { return toks_[pos_++]; }

    Rational expr() {
        Rational v = term();
        while (peek().kind == Tok::plus || peek().kind == Tok::minus) {
            Tok op = take().kind;
            Rational rhs = term();
            v = op == Tok::plus ? v + rhs : v - rhs;
        }
        return v;
    }

    Rational term() {
        Rational v = factor();
        while (peek().kind == Tok::mul || peek().kind == Tok::div) {
            Tok op = take().kind;
            Rational rhs = factor();
            v = op == Tok::mul ? v * rhs : v / rhs;
        }
        return v;
    }

    Rational factor() {
        bool negate = false;
        while (peek().kind == Tok::plus || peek().kind == Tok::minus) {
            if (take().kind == Tok::minus) negate = !negate;
        }
        Rational v = primary();
        return negate ? -v : v;
    }

    Rational primary() {
        const Token& t = take();
        if (t.kind == Tok::number) return t.value;
        if (t.kind == Tok::lparen) {
            Rational v = expr();
            if (peek().kind != Tok::rparen)
                throw ParseError("expected ')'", peek().offset);
            take();
            return v;
        }
        throw ParseError("expected number or '('", t.offset);
    }

    std::vector<Token> toks_;
    std::size_t pos_ = 0;
};

}  // namespace arith_detail

inline Rational eval_arith(std::string_view expression) {
    arith_detail::Parser parser(arith_detail::lex(expression));
    return parser.parse();
}

}  // namespace eit
