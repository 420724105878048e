#pragma once

// A tiny recursive-descent parser for inline field expressions in configs.
// Grammar (complex-valued, evaluated nodewise over the grid):
//
//   expr   := term (('+'|'-') term)*
//   term   := unary (('*'|'/') unary)*
//   unary  := ('+'|'-') unary | power
//   power  := atom ('^' unary)?            right-associative
//   atom   := number | name | name '(' expr ')' | '(' expr ')'
//
// Names: variables x, y, z, zbar; constants i, pi, e; functions exp, log,
// sin, cos, sinh, cosh, tanh, sqrt, conj, re, im, abs.

#include <cctype>
#include <cmath>
#include <complex>
#include <memory>
#include <string>

#include "cll/error.hpp"
#include "cll/grid.hpp"

namespace cll {

namespace expr_detail {

enum class Kind { constant, variable, unary_fn, binary_op };

struct Node {
    Kind kind;
    cd constant;       // Kind::constant
    int variable = 0;  // 0=x 1=y 2=z 3=zbar
    char op = 0;       // binary: + - * / ^
    std::string fn;    // unary function name
    std::unique_ptr<Node> lhs, rhs;
};

using NodePtr = std::unique_ptr<Node>;

inline cd eval(const Node& n, double x, double y) {
    switch (n.kind) {
    case Kind::constant:
        return n.constant;
    case Kind::variable:
        switch (n.variable) {
        case 0: return cd(x, 0.0);
        case 1: return cd(y, 0.0);
        case 2: return cd(x, y);
        default: return cd(x, -y);
        }
    case Kind::unary_fn: {
        cd v = eval(*n.lhs, x, y);
        if (n.fn == "exp") return std::exp(v);
        if (n.fn == "log") return std::log(v);
        if (n.fn == "sin") return std::sin(v);
        if (n.fn == "cos") return std::cos(v);
        if (n.fn == "sinh") return std::sinh(v);
        if (n.fn == "cosh") return std::cosh(v);
        if (n.fn == "tanh") return std::tanh(v);
        if (n.fn == "sqrt") return std::sqrt(v);
        if (n.fn == "conj") return std::conj(v);
        if (n.fn == "re") return cd(v.real(), 0.0);
        if (n.fn == "im") return cd(v.imag(), 0.0);
        return cd(std::abs(v), 0.0); // abs
    }
    case Kind::binary_op: {
        cd a = eval(*n.lhs, x, y);
        cd b = eval(*n.rhs, x, y);
        switch (n.op) {
        case '+': return a + b;
        case '-': return a - b;
        case '*': return a * b;
        case '/': return a / b;
        default: {
            // small integer exponents multiply out exactly
            double k = b.real();
            if (b.imag() == 0.0 && k == std::floor(k) && std::abs(k) <= 16.0) {
                cd r(1.0, 0.0);
                for (int t = 0; t < static_cast<int>(std::abs(k)); ++t) r *= a;
                return k < 0.0 ? 1.0 / r : r;
            }
            return std::pow(a, b);
        }
        }
    }
    }
    return cd(0.0, 0.0);
}

struct Parser {
    const std::string& src;
    std::size_t pos = 0;

    explicit Parser(const std::string& s) : src(s) {}

    void skip_ws() {
        while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
    }
    char peek() {
        skip_ws();
        return pos < src.size() ? src[pos] : '\0';
    }
    bool accept(char c) {
        if (peek() == c) {
            ++pos;
            return true;
        }
        return false;
    }
    [[noreturn]] void fail(const std::string& what) {
        throw ConfigError("expression `" + src + "`: " + what + " at offset " +
                          std::to_string(pos));
    }

    NodePtr make_const(cd v) {
        auto n = std::make_unique<Node>();
        n->kind = Kind::constant;
        n->constant = v;
        return n;
    }
    NodePtr make_binary(char op, NodePtr a, NodePtr b) {
        auto n = std::make_unique<Node>();
        n->kind = Kind::binary_op;
        n->op = op;
        n->lhs = std::move(a);
        n->rhs = std::move(b);
        return n;
    }

    NodePtr parse_expr() {
        NodePtr n = parse_term();
        for (;;) {
            char c = peek();
            if (c != '+' && c != '-') return n;
            ++pos;
            n = make_binary(c, std::move(n), parse_term());
        }
    }

    NodePtr parse_term() {
        NodePtr n = parse_unary();
        for (;;) {
            char c = peek();
            if (c != '*' && c != '/') return n;
            ++pos;
            n = make_binary(c, std::move(n), parse_unary());
        }
    }

    NodePtr parse_unary() {
        char c = peek();
        if (c == '-') {
            ++pos;
            return make_binary('-', make_const(cd(0.0, 0.0)), parse_unary());
        }
        if (c == '+') {
            ++pos;
            return parse_unary();
        }
        return parse_power();
    }

    NodePtr parse_power() {
        NodePtr base = parse_atom();
        if (accept('^'))
            return make_binary('^', std::move(base), parse_unary());
        return base;
    }

    NodePtr parse_atom() {
        char c = peek();
        if (c == '(') {
            ++pos;
            NodePtr n = parse_expr();
            if (!accept(')')) fail("missing `)`");
            return n;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            const char* begin = src.c_str() + pos;
            char* end = nullptr;
            double v = std::strtod(begin, &end);
            if (end == begin) fail("bad number");
            pos += static_cast<std::size_t>(end - begin);
            return make_const(cd(v, 0.0));
        }
        if (std::isalpha(static_cast<unsigned char>(c))) {
            std::size_t start = pos;
            while (pos < src.size() &&
                   (std::isalnum(static_cast<unsigned char>(src[pos])) || src[pos] == '_'))
                ++pos;
            std::string name = src.substr(start, pos - start);
            if (name == "x" || name == "y" || name == "z" || name == "zbar") {
                auto n = std::make_unique<Node>();
                n->kind = Kind::variable;
                n->variable = (name == "x") ? 0 : (name == "y") ? 1 : (name == "z") ? 2 : 3;
                return n;
            }
            if (name == "i") return make_const(cd(0.0, 1.0));
            if (name == "pi") return make_const(cd(3.14159265358979323846, 0.0));
            if (name == "e") return make_const(cd(2.71828182845904523536, 0.0));
            static const char* fns[] = {"exp", "log",  "sin",  "cos", "sinh", "cosh",
                                        "tanh", "sqrt", "conj", "re",  "im",   "abs"};
            for (const char* fn : fns) {
                if (name == fn) {
                    if (!accept('(')) fail("function `" + name + "` needs `(...)`");
                    auto n = std::make_unique<Node>();
                    n->kind = Kind::unary_fn;
                    n->fn = name;
                    n->lhs = parse_expr();
                    if (!accept(')')) fail("missing `)` after `" + name + "(`");
                    return n;
                }
            }
            fail("unknown name `" + name + "`");
        }
        fail("unexpected character");
    }
};

} // namespace expr_detail

class Expression {
public:
    Expression() = default;

    cd eval(double x, double y) const {
        if (!root_) throw ValidationError("Expression: evaluating empty expression");
        return expr_detail::eval(*root_, x, y);
    }

    ComplexField sample(const GridDomain& d) const {
        return sample_field(d, [this](double x, double y) { return eval(x, y); });
    }

    const std::string& source() const { return source_; }
    bool empty() const { return root_ == nullptr; }

    friend Expression parse_expression(const std::string& text);

private:
    std::shared_ptr<const expr_detail::Node> root_;
    std::string source_;
};

inline Expression parse_expression(const std::string& text) {
    expr_detail::Parser p(text);
    expr_detail::NodePtr root = p.parse_expr();
    p.skip_ws();
    if (p.pos != text.size())
        throw ConfigError("expression `" + text + "`: trailing input at offset " +
                          std::to_string(p.pos));
    Expression e;
    e.root_ = std::shared_ptr<const expr_detail::Node>(root.release());
    e.source_ = text;
    return e;
}

} // namespace cll
