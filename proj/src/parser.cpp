#include "pcx/parser.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <optional>
#include <set>

#include <fmt/format.h>

namespace pcx {

std::string_view parse_error_kind_name(ParseErrorKind kind)
{
    switch (kind) {
        case ParseErrorKind::BadVarnode: return "BadVarnode";
        case ParseErrorKind::UnknownOpcode: return "UnknownOpcode";
        case ParseErrorKind::ArityMismatch: return "ArityMismatch";
        case ParseErrorKind::BadAddress: return "BadAddress";
        case ParseErrorKind::RejectedHighLevelOp: return "RejectedHighLevelOp";
    }
    return "?";
}

ParseError::ParseError(ParseErrorKind kind, std::size_t line, std::string message, std::string unit)
    : std::runtime_error(fmt::format("{}:{}: {}: {}", unit.empty() ? "<input>" : unit, line,
                                     parse_error_kind_name(kind), message)),
      kind_(kind),
      line_(line),
      message_(std::move(message)),
      unit_(std::move(unit))
{
}

namespace {

bool is_space(char c)
{
    return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f';
}

std::string_view trim(std::string_view s)
{
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

std::string_view strip_comment(std::string_view line)
{
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') quoted = !quoted;
        if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
}

std::optional<std::uint64_t> parse_hex(std::string_view s)
{
    if (s.size() < 3 || s[0] != '0' || (s[1] != 'x' && s[1] != 'X')) return std::nullopt;
    s.remove_prefix(2);
    std::uint64_t value = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value, 16);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return value;
}

std::optional<std::uint64_t> parse_dec(std::string_view s)
{
    if (s.empty()) return std::nullopt;
    std::uint64_t value = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value, 10);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return value;
}

enum class TokenKind { Varnode, Name, Quoted, Equals, Comma };

struct Token {
    TokenKind kind;
    std::string_view text;
};

std::vector<Token> tokenize(std::string_view line, std::size_t line_no)
{
    std::vector<Token> tokens;
    std::size_t i = 0;
    while (i < line.size()) {
        const char c = line[i];
        if (is_space(c)) {
            ++i;
        } else if (c == '(') {
            auto close = line.find(')', i);
            if (close == std::string_view::npos)
                throw ParseError(ParseErrorKind::BadVarnode, line_no, "unterminated varnode");
            tokens.push_back({TokenKind::Varnode, line.substr(i, close - i + 1)});
            i = close + 1;
        } else if (c == '"') {
            auto close = line.find('"', i + 1);
            if (close == std::string_view::npos)
                throw ParseError(ParseErrorKind::BadVarnode, line_no, "unterminated pseudo-op name");
            tokens.push_back({TokenKind::Quoted, line.substr(i + 1, close - i - 1)});
            i = close + 1;
        } else if (c == '=') {
            tokens.push_back({TokenKind::Equals, line.substr(i, 1)});
            ++i;
        } else if (c == ',') {
            tokens.push_back({TokenKind::Comma, line.substr(i, 1)});
            ++i;
        } else {
            auto start = i;
            while (i < line.size() && !is_space(line[i]) && line[i] != '(' && line[i] != ')' &&
                   line[i] != ',' && line[i] != '=' && line[i] != '"')
                ++i;
            if (i == start) {
                // stray ')'
                throw ParseError(ParseErrorKind::BadVarnode, line_no,
                                 fmt::format("unexpected character '{}'", c));
            }
            tokens.push_back({TokenKind::Name, line.substr(start, i - start)});
        }
    }
    return tokens;
}

Varnode varnode_at(std::string_view token, std::size_t line_no)
{
    try {
        return parse_varnode(token);
    } catch (const ParseError& e) {
        throw ParseError(ParseErrorKind::BadVarnode, line_no, e.message());
    }
}

struct OpLineResult {
    std::optional<PcodeOp> op;
    std::optional<std::string> skipped;  // lenient mode: reason the op was dropped
};

OpLineResult parse_op_line(std::string_view line, std::size_t line_no, bool lenient)
{
    auto tokens = tokenize(line, line_no);
    std::size_t pos = 0;
    PcodeOp op;

    if (tokens.size() >= 2 && tokens[1].kind == TokenKind::Equals) {
        if (tokens[0].kind != TokenKind::Varnode)
            throw ParseError(ParseErrorKind::BadVarnode, line_no, "output must be a varnode");
        op.output = varnode_at(tokens[0].text, line_no);
        pos = 2;
    }
    if (pos >= tokens.size() || tokens[pos].kind != TokenKind::Name)
        throw ParseError(ParseErrorKind::UnknownOpcode, line_no, "missing opcode");

    const auto name = tokens[pos].text;
    ++pos;
    if (is_high_level_opcode_name(name))
        throw ParseError(ParseErrorKind::RejectedHighLevelOp, line_no,
                         fmt::format("high-level opcode {} is not accepted", name));
    auto opcode = opcode_from_name(name);
    if (!opcode) {
        auto what = is_float_opcode_name(name)
                        ? fmt::format("floating-point opcode {} is not supported", name)
                        : fmt::format("unknown opcode {}", name);
        if (lenient) return {std::nullopt, what};
        throw ParseError(ParseErrorKind::UnknownOpcode, line_no, what);
    }
    op.opcode = *opcode;

    bool expect_operand = true;
    while (pos < tokens.size()) {
        const auto& tok = tokens[pos];
        if (expect_operand) {
            if (tok.kind != TokenKind::Varnode)
                throw ParseError(ParseErrorKind::BadVarnode, line_no,
                                 fmt::format("expected varnode, got '{}'", tok.text));
            op.inputs.push_back(varnode_at(tok.text, line_no));
            ++pos;
            if (op.opcode == Opcode::CALLOTHER && op.inputs.size() == 1) {
                if (pos >= tokens.size() || tokens[pos].kind != TokenKind::Quoted)
                    throw ParseError(ParseErrorKind::ArityMismatch, line_no,
                                     "CALLOTHER requires a quoted pseudo-op name");
                op.callother_name = std::string(tokens[pos].text);
                ++pos;
            }
            expect_operand = false;
        } else {
            if (tok.kind != TokenKind::Comma)
                throw ParseError(ParseErrorKind::BadVarnode, line_no,
                                 fmt::format("expected ',', got '{}'", tok.text));
            ++pos;
            expect_operand = true;
        }
    }
    if (expect_operand && !op.inputs.empty())
        throw ParseError(ParseErrorKind::BadVarnode, line_no, "trailing ','");
    if (op.inputs.size() > 3)
        throw ParseError(ParseErrorKind::ArityMismatch, line_no,
                         fmt::format("{} has {} inputs (max 3)", name, op.inputs.size()));
    if (auto err = check_op(op)) throw ParseError(ParseErrorKind::ArityMismatch, line_no, *err);
    return {std::move(op), std::nullopt};
}

struct Header {
    std::uint64_t address;
    std::uint32_t length;
};

Header parse_header(std::string_view line, std::size_t line_no)
{
    std::size_t i = 0;
    std::vector<std::string_view> words;
    while (i < line.size()) {
        while (i < line.size() && is_space(line[i])) ++i;
        auto start = i;
        while (i < line.size() && !is_space(line[i])) ++i;
        if (i > start) words.push_back(line.substr(start, i - start));
    }
    auto addr = words.empty() ? std::nullopt : parse_hex(words[0]);
    if (!addr)
        throw ParseError(ParseErrorKind::BadAddress, line_no,
                         fmt::format("malformed instruction address '{}'",
                                     words.empty() ? std::string_view{} : words[0]));
    std::uint32_t length = 0;
    if (words.size() > 2)
        throw ParseError(ParseErrorKind::BadAddress, line_no, "unexpected text after instruction header");
    if (words.size() == 2) {
        auto w = words[1];
        std::optional<std::uint64_t> n;
        if (w.starts_with("len=")) n = parse_dec(w.substr(4));
        if (!n || *n > 0xffff)
            throw ParseError(ParseErrorKind::BadAddress, line_no,
                             fmt::format("malformed length '{}'", w));
        length = static_cast<std::uint32_t>(*n);
    }
    return {*addr, length};
}

void parse_unit(const ListingSource& src, const ParseOptions& options, ProgramImage& image,
                std::vector<ParseWarning>* warnings)
{
    std::optional<Instruction> current;
    std::size_t current_line = 0;
    std::set<std::uint64_t> seen;

    auto finish = [&]() {
        if (!current) return;
        if (current->ops.empty() && !options.lenient)
            throw ParseError(ParseErrorKind::ArityMismatch, current_line,
                             fmt::format("instruction {:#x} has no operations", current->address));
        image.add(std::move(*current), src.name);
        current.reset();
    };

    std::string_view text = src.text;
    std::size_t line_no = 0;
    while (!text.empty() || line_no == 0) {
        ++line_no;
        auto nl = text.find('\n');
        auto raw = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);

        auto line = trim(strip_comment(raw));
        if (line.empty()) {
            if (text.empty()) break;
            continue;
        }
        if (std::isdigit(static_cast<unsigned char>(line[0]))) {
            finish();
            auto header = parse_header(line, line_no);
            if (header.address > UINT64_MAX - src.base)
                throw ParseError(ParseErrorKind::BadAddress, line_no, "address overflows with base offset");
            const auto addr = header.address + src.base;
            if (!seen.insert(addr).second)
                throw ParseError(ParseErrorKind::BadAddress, line_no,
                                 fmt::format("address {:#x} appears twice", addr));
            current = Instruction{addr, header.length, {}};
            current_line = line_no;
        } else {
            if (!current)
                throw ParseError(ParseErrorKind::BadAddress, line_no, "operation outside of an instruction");
            auto result = parse_op_line(line, line_no, options.lenient);
            if (result.op) {
                current->ops.push_back(std::move(*result.op));
            } else if (warnings) {
                warnings->push_back({src.name, line_no, *result.skipped});
            }
        }
        if (text.empty()) break;
    }
    finish();
    image.add_unit({src.name, src.base});
}

}  // namespace

Varnode parse_varnode(std::string_view token)
{
    auto bad = [&](std::string_view why) {
        return ParseError(ParseErrorKind::BadVarnode, 1,
                          fmt::format("bad varnode '{}': {}", token, why));
    };
    if (token.size() < 2 || token.front() != '(' || token.back() != ')') throw bad("missing parentheses");
    auto body = token.substr(1, token.size() - 2);
    auto c1 = body.find(',');
    auto c2 = c1 == std::string_view::npos ? c1 : body.find(',', c1 + 1);
    if (c2 == std::string_view::npos || body.find(',', c2 + 1) != std::string_view::npos)
        throw bad("expected three fields");
    for (char c : body) {
        if (is_space(c)) throw bad("interior whitespace");
    }
    auto space = space_from_name(body.substr(0, c1));
    if (!space) throw bad("unknown address space");
    auto offset = parse_hex(body.substr(c1 + 1, c2 - c1 - 1));
    if (!offset) throw bad("offset must be 0x-prefixed hex");
    auto size = parse_dec(body.substr(c2 + 1));
    if (!size || *size < 1 || *size > 16) throw bad("size must be 1..16");
    return Varnode{*space, *offset, static_cast<std::uint32_t>(*size)};
}

ProgramImage parse_program(std::span<const ListingSource> sources, const ParseOptions& options,
                           std::vector<ParseWarning>* warnings)
{
    ProgramImage image;
    for (const auto& src : sources) {
        try {
            parse_unit(src, options, image, warnings);
        } catch (const ParseError& e) {
            if (!e.unit().empty()) throw;
            throw ParseError(e.kind(), e.line_number(), e.message(), src.name);
        }
    }
    return image;
}

ProgramImage parse_listing(std::string_view text, std::string name, std::uint64_t base)
{
    ListingSource src{std::move(name), base, std::string(text)};
    return parse_program(std::span<const ListingSource>(&src, 1));
}

std::string print_listing(const ProgramImage& image)
{
    std::string out;
    for (const auto& [addr, instr] : image.instructions()) {
        out += fmt::format("{:#010x}", addr);
        if (instr.length > 0) out += fmt::format(" len={}", instr.length);
        out += '\n';
        for (const auto& op : instr.ops) {
            out += "  ";
            out += to_string(op);
            out += '\n';
        }
    }
    return out;
}

std::string normalize_listing(std::string_view text)
{
    std::string out;
    while (!text.empty()) {
        auto nl = text.find('\n');
        auto line = trim(strip_comment(text.substr(0, nl)));
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (line.empty()) continue;

        std::string collapsed;
        bool pending_space = false;
        for (char c : line) {
            if (is_space(c)) {
                pending_space = true;
                continue;
            }
            if (c == ',') {
                pending_space = false;
                collapsed += c;
                continue;
            }
            if (pending_space && !collapsed.empty() && collapsed.back() != ',') collapsed += ' ';
            pending_space = false;
            collapsed += c;
        }
        // lowercase 0x-prefixed hex literals
        for (std::size_t i = 0; i + 1 < collapsed.size(); ++i) {
            if (collapsed[i] == '0' && (collapsed[i + 1] == 'x' || collapsed[i + 1] == 'X')) {
                collapsed[i + 1] = 'x';
                for (std::size_t j = i + 2; j < collapsed.size() &&
                                            std::isxdigit(static_cast<unsigned char>(collapsed[j]));
                     ++j)
                    collapsed[j] = static_cast<char>(std::tolower(static_cast<unsigned char>(collapsed[j])));
            }
        }
        out += collapsed;
        out += '\n';
    }
    return out;
}

}  // namespace pcx
