#pragma once

// Code-complexity metrics for Python candidate scripts, computed from a
// token stream: Halstead counts, cyclomatic complexity, logical lines and
// the maintainability index.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace echomimic {

/// Operator/operand classification table. Halstead counts depend on this
/// convention, so it carries a version that is written next to every metric record.
struct TokenTable {
    std::string_view version;
    std::vector<std::string_view> symbol_operators;
    std::vector<std::string_view> keyword_operators;
    std::vector<std::string_view> keyword_operands;
    std::vector<std::string_view> ignored;  // delimiters, neither operator nor operand
    std::vector<std::string_view> decision_keywords;
};

inline const TokenTable& tokens_v1() {
    static const TokenTable t{
        "tokens-v1",
        {"**=", "//=", ">>=", "<<=", "->", ":=", "**", "//", "<<", ">>", "<=", ">=", "==", "!=", "+=", "-=", "*=",
         "/=", "%=", "&=", "|=", "^=", "@=", "+", "-", "*", "/", "%", "@", "&", "|", "^", "~", "<", ">", "="},
        {"and", "or", "not", "in", "is", "if", "elif", "else", "for", "while", "return", "yield", "def", "class",
         "lambda", "import", "from", "as", "try", "except", "finally", "raise", "with", "assert", "del", "global",
         "nonlocal", "pass", "break", "continue", "await", "async", "match", "case"},
        {"True", "False", "None", "..."},
        {"(", ")", "[", "]", "{", "}", ",", ":", ";", "."},
        {"if", "elif", "for", "while", "except", "and", "or", "case", "assert"},
    };
    return t;
}

struct ComplexityMetrics {
    int lloc = 0;
    int sloc = 0;
    int comment_lines = 0;
    int cyclomatic = 0;
    int halstead_n1 = 0;
    int halstead_n2 = 0;
    int halstead_N1 = 0;
    int halstead_N2 = 0;
    double difficulty = 0.0;
    double volume = 0.0;
    double maintainability_index = 0.0;
    bool parsed = true;
    std::string parse_error;
    std::string table_version{tokens_v1().version};

    friend bool operator==(const ComplexityMetrics&, const ComplexityMetrics&) = default;
};

enum class PyTokenKind { name, number, string, op, newline, indent, dedent };

struct PyToken {
    PyTokenKind kind;
    std::string text;
    int line = 0;
};

struct PyTokenStream {
    std::vector<PyToken> tokens;
    int sloc = 0;
    int comment_lines = 0;
    std::string error;  // empty when the text tokenized cleanly
};

namespace detail {

inline bool is_ident_start(unsigned char c) { return std::isalpha(c) || c == '_' || c >= 0x80; }
inline bool is_ident_char(unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; }

inline bool string_prefix(std::string_view p) {
    std::string lower;
    for (char c : p) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    static const std::set<std::string> ok{"r", "u", "b", "f", "br", "rb", "fr", "rf"};
    return ok.contains(lower);
}

}  // namespace detail

/// Python tokenizer sufficient for metric computation: strings, comments,
/// continuation lines, bracket nesting and indentation are handled; anything
/// malformed sets `error`.
inline PyTokenStream tokenize_python(std::string_view src) {
    PyTokenStream out;
    static const std::array<std::string_view, 49> ops{
        "**=", "//=", ">>=", "<<=", "...", "->", ":=", "**", "//", "<<", ">>", "<=", ">=", "==", "!=", "+=", "-=",
        "*=", "/=", "%=", "&=", "|=", "^=", "@=", "+", "-", "*", "/", "%", "@", "&", "|", "^", "~", "<", ">", "=",
        ".", ",", ":", ";", "(", ")", "[", "]", "{", "}", "!", "\\"};
    std::vector<int> indents{0};
    std::vector<char> brackets;
    std::set<int> code_lines, comment_only;
    std::size_t i = 0;
    int line = 1;
    bool at_line_start = true;
    bool continuation = false;
    auto fail = [&](const std::string& msg) {
        if (out.error.empty()) out.error = "line " + std::to_string(line) + ": " + msg;
    };
    auto emit = [&](PyTokenKind k, std::string text) {
        out.tokens.push_back({k, std::move(text), line});
        code_lines.insert(line);
    };

    while (i < src.size() && out.error.empty()) {
        if (at_line_start && brackets.empty() && !continuation) {
            int col = 0;
            std::size_t j = i;
            while (j < src.size() && (src[j] == ' ' || src[j] == '\t' || src[j] == '\f')) {
                col = src[j] == '\t' ? (col / 8 + 1) * 8 : col + 1;
                ++j;
            }
            if (j >= src.size()) {
                i = j;
                break;
            }
            if (src[j] == '\n' || src[j] == '\r' || src[j] == '#') {
                if (src[j] == '#') {
                    comment_only.insert(line);
                    while (j < src.size() && src[j] != '\n') ++j;
                }
                if (j < src.size() && src[j] == '\r') ++j;
                if (j < src.size() && src[j] == '\n') ++j;
                ++line;
                i = j;
                continue;
            }
            i = j;
            if (col > indents.back()) {
                indents.push_back(col);
                out.tokens.push_back({PyTokenKind::indent, "", line});
            } else {
                while (col < indents.back()) {
                    indents.pop_back();
                    out.tokens.push_back({PyTokenKind::dedent, "", line});
                }
                if (col != indents.back()) fail("unindent does not match any outer indentation level");
            }
            at_line_start = false;
        }
        continuation = false;
        const char c = src[i];
        if (c == ' ' || c == '\t' || c == '\f') {
            ++i;
            continue;
        }
        if (c == '#') {
            while (i < src.size() && src[i] != '\n') ++i;
            continue;
        }
        if (c == '\r' || c == '\n') {
            if (c == '\r' && i + 1 < src.size() && src[i + 1] == '\n') ++i;
            ++i;
            if (brackets.empty()) {
                out.tokens.push_back({PyTokenKind::newline, "", line});
                at_line_start = true;
            }
            ++line;
            continue;
        }
        if (c == '\\') {
            std::size_t j = i + 1;
            if (j < src.size() && src[j] == '\r') ++j;
            if (j < src.size() && src[j] == '\n') {
                i = j + 1;
                ++line;
                continuation = true;
                continue;
            }
            fail("unexpected character after line continuation");
            break;
        }
        // Names and prefixed strings.
        if (detail::is_ident_start(static_cast<unsigned char>(c))) {
            std::size_t j = i;
            while (j < src.size() && detail::is_ident_char(static_cast<unsigned char>(src[j]))) ++j;
            const std::string_view word = src.substr(i, j - i);
            if (j < src.size() && (src[j] == '\'' || src[j] == '"') && detail::string_prefix(word)) {
                // fall through to string scanning with the prefix included
            } else {
                emit(PyTokenKind::name, std::string(word));
                i = j;
                continue;
            }
        }
        // Strings.
        {
            std::size_t j = i;
            while (j < src.size() && detail::is_ident_char(static_cast<unsigned char>(src[j])) && j - i < 2) ++j;
            if (j < src.size() && (src[j] == '\'' || src[j] == '"') && (j == i || detail::string_prefix(src.substr(i, j - i)))) {
                const char q = src[j];
                const bool triple = j + 2 < src.size() && src[j + 1] == q && src[j + 2] == q;
                const int start_line = line;
                std::size_t k = j + (triple ? 3 : 1);
                bool closed = false;
                while (k < src.size()) {
                    if (src[k] == '\\') {
                        if (k + 1 < src.size() && src[k + 1] == '\n') ++line;
                        k += 2;
                        continue;
                    }
                    if (src[k] == '\n') {
                        if (!triple) break;
                        ++line;
                    }
                    if (src[k] == q) {
                        if (!triple) {
                            ++k;
                            closed = true;
                            break;
                        }
                        if (k + 2 < src.size() && src[k + 1] == q && src[k + 2] == q) {
                            k += 3;
                            closed = true;
                            break;
                        }
                    }
                    ++k;
                }
                if (!closed) {
                    line = start_line;
                    fail("unterminated string literal");
                    break;
                }
                for (int l = start_line; l <= line; ++l) code_lines.insert(l);
                out.tokens.push_back({PyTokenKind::string, std::string(src.substr(i, k - i)), start_line});
                i = k;
                continue;
            }
        }
        // Numbers.
        if (std::isdigit(static_cast<unsigned char>(c)) ||
            (c == '.' && i + 1 < src.size() && std::isdigit(static_cast<unsigned char>(src[i + 1])))) {
            std::size_t j = i;
            while (j < src.size()) {
                const char d = src[j];
                if (std::isalnum(static_cast<unsigned char>(d)) || d == '_' || d == '.') {
                    ++j;
                } else if ((d == '+' || d == '-') && j > i && (src[j - 1] == 'e' || src[j - 1] == 'E') &&
                           !(src.substr(i, 2) == "0x" || src.substr(i, 2) == "0X")) {
                    ++j;
                } else {
                    break;
                }
            }
            emit(PyTokenKind::number, std::string(src.substr(i, j - i)));
            i = j;
            continue;
        }
        // Operators and delimiters.
        bool matched = false;
        for (auto op : ops) {
            if (src.substr(i, op.size()) != op) continue;
            if (op == "!" || op == "\\") break;
            matched = true;
            if (op == "(" || op == "[" || op == "{") brackets.push_back(op[0]);
            if (op == ")" || op == "]" || op == "}") {
                const char open = op == ")" ? '(' : op == "]" ? '[' : '{';
                if (brackets.empty() || brackets.back() != open) {
                    fail("unmatched '" + std::string(op) + "'");
                    break;
                }
                brackets.pop_back();
            }
            emit(PyTokenKind::op, std::string(op));
            i += op.size();
            break;
        }
        if (!matched && out.error.empty()) fail(std::string("invalid character '") + c + "'");
    }
    if (out.error.empty() && !brackets.empty()) fail("unclosed '" + std::string(1, brackets.back()) + "'");
    if (out.error.empty() && continuation) fail("unexpected end of file after line continuation");
    if (!out.tokens.empty() && out.tokens.back().kind != PyTokenKind::newline &&
        out.tokens.back().kind != PyTokenKind::dedent)
        out.tokens.push_back({PyTokenKind::newline, "", line});
    while (indents.size() > 1) {
        indents.pop_back();
        out.tokens.push_back({PyTokenKind::dedent, "", line});
    }
    for (int l : comment_only)
        if (!code_lines.contains(l)) ++out.comment_lines;
    out.sloc = static_cast<int>(code_lines.size());
    return out;
}

namespace detail {

inline bool contains(const std::vector<std::string_view>& v, std::string_view s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

inline bool is_compound_keyword(std::string_view s) {
    static const std::set<std::string_view> kw{"if",   "elif", "else",  "for",   "while", "try",  "except",
                                               "finally", "with", "def", "class", "async", "match", "case"};
    return kw.contains(s);
}

struct LogicalLine {
    std::vector<const PyToken*> toks;  // name/number/string/op tokens only
    bool indented_after = false;       // an INDENT follows the NEWLINE
};

inline std::vector<LogicalLine> logical_lines(const PyTokenStream& ts) {
    std::vector<LogicalLine> lines;
    LogicalLine cur;
    for (std::size_t i = 0; i < ts.tokens.size(); ++i) {
        const auto& t = ts.tokens[i];
        if (t.kind == PyTokenKind::newline) {
            if (!cur.toks.empty()) {
                cur.indented_after = i + 1 < ts.tokens.size() && ts.tokens[i + 1].kind == PyTokenKind::indent;
                lines.push_back(std::move(cur));
            }
            cur = {};
        } else if (t.kind != PyTokenKind::indent && t.kind != PyTokenKind::dedent) {
            cur.toks.push_back(&t);
        }
    }
    return lines;
}

/// `match`/`case` are keywords only as the head of a block header.
inline bool soft_keyword_header(const LogicalLine& l) {
    if (l.toks.empty()) return false;
    const auto& head = l.toks.front()->text;
    if (head != "match" && head != "case") return false;
    if (l.toks.size() < 2) return false;
    const auto& next = l.toks[1]->text;
    if (next == "=" || next == "." || next == ":" || next == ")" || next == ",") return false;
    return l.toks.back()->text == ":";
}

}  // namespace detail

/// Pure function of the script text.
inline ComplexityMetrics compute_complexity(std::string_view body, const TokenTable& table = tokens_v1()) {
    ComplexityMetrics m;
    m.table_version = std::string(table.version);
    const auto ts = tokenize_python(body);
    if (!ts.error.empty()) {
        m.parsed = false;
        m.parse_error = ts.error;
        return m;
    }
    const auto lines = detail::logical_lines(ts);
    if (lines.empty()) {
        m.comment_lines = ts.comment_lines;
        return m;
    }

    std::map<std::string, int> operators, operands;
    int decisions = 0;
    for (std::size_t li = 0; li < lines.size(); ++li) {
        const auto& l = lines[li];
        const bool soft = detail::soft_keyword_header(l);
        const bool compound =
            l.toks.front()->kind == PyTokenKind::name && (detail::is_compound_keyword(l.toks.front()->text) &&
                                                          (soft || (l.toks.front()->text != "match" &&
                                                                    l.toks.front()->text != "case")));
        int statements = 1;
        int depth = 0;
        int lambdas = 0;
        bool header_closed = !compound;
        for (std::size_t k = 0; k < l.toks.size(); ++k) {
            const auto& t = *l.toks[k];
            if (t.kind == PyTokenKind::op) {
                if (t.text == "(" || t.text == "[" || t.text == "{") ++depth;
                if (t.text == ")" || t.text == "]" || t.text == "}") --depth;
                if (depth == 0 && t.text == ";" && k + 1 < l.toks.size()) ++statements;
                if (depth == 0 && t.text == ":") {
                    if (lambdas > 0) {
                        --lambdas;
                    } else if (!header_closed) {
                        header_closed = true;
                        if (k + 1 < l.toks.size()) ++statements;
                    }
                }
                if (detail::contains(table.ignored, t.text)) continue;
                if (t.text == "...") {
                    ++operands[t.text];
                    continue;
                }
                ++operators[t.text];
                continue;
            }
            if (t.kind == PyTokenKind::name) {
                const bool soft_kw = (t.text == "match" || t.text == "case");
                const bool is_kw = soft_kw ? (soft && k == 0) : detail::contains(table.keyword_operators, t.text);
                if (t.text == "lambda") ++lambdas;
                if (is_kw) {
                    ++operators[t.text];
                    if (detail::contains(table.decision_keywords, t.text)) ++decisions;
                    continue;
                }
            }
            ++operands[t.text];
        }
        std::string problem;
        if (compound && !header_closed) problem = "expected ':'";
        else if (compound && l.toks.back()->text == ":" && !l.indented_after) problem = "expected an indented block";
        if (!problem.empty())
            return ComplexityMetrics{.parsed = false,
                                     .parse_error = "line " + std::to_string(l.toks.front()->line) + ": " + problem,
                                     .table_version = m.table_version};
        m.lloc += statements;
    }

    m.sloc = ts.sloc;
    m.comment_lines = ts.comment_lines;
    m.cyclomatic = 1 + decisions;
    m.halstead_n1 = static_cast<int>(operators.size());
    m.halstead_n2 = static_cast<int>(operands.size());
    for (const auto& [_, c] : operators) m.halstead_N1 += c;
    for (const auto& [_, c] : operands) m.halstead_N2 += c;
    const int n = m.halstead_n1 + m.halstead_n2;
    const int N = m.halstead_N1 + m.halstead_N2;
    m.volume = n > 0 ? N * std::log2(static_cast<double>(n)) : 0.0;
    m.difficulty = m.halstead_n2 > 0 ? (m.halstead_n1 / 2.0) * (static_cast<double>(m.halstead_N2) / m.halstead_n2) : 0.0;

    // 171 - 5.2 ln V - 0.23 G - 16.2 ln L + 50 sin(sqrt(2.46 C)), C = comment
    // percentage in radians, rescaled to 0..100.
    if (m.volume <= 0.0 || m.lloc <= 0) {
        m.maintainability_index = 100.0;
    } else {
        const double comment_pct = m.sloc > 0 ? 100.0 * m.comment_lines / (m.sloc + m.comment_lines) : 0.0;
        const double raw = 171.0 - 5.2 * std::log(m.volume) - 0.23 * m.cyclomatic - 16.2 * std::log(m.lloc) +
                           50.0 * std::sin(std::sqrt(2.46 * comment_pct * std::numbers::pi / 180.0));
        m.maintainability_index = std::clamp(raw * 100.0 / 171.0, 0.0, 100.0);
    }
    return m;
}

}  // namespace echomimic
