#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pcx/pcode.hpp"

namespace pcx {

enum class ParseErrorKind { BadVarnode, UnknownOpcode, ArityMismatch, BadAddress, RejectedHighLevelOp };

std::string_view parse_error_kind_name(ParseErrorKind kind);

class ParseError : public std::runtime_error {
public:
    ParseError(ParseErrorKind kind, std::size_t line, std::string message, std::string unit = {});

    ParseErrorKind kind() const { return kind_; }
    std::size_t line_number() const { return line_; }
    const std::string& unit() const { return unit_; }
    const std::string& message() const { return message_; }

private:
    ParseErrorKind kind_;
    std::size_t line_;
    std::string message_;
    std::string unit_;
};

/// `(space,0xOFFSET,SIZE)`, no interior whitespace. Throws ParseError(BadVarnode).
Varnode parse_varnode(std::string_view token);

struct ListingSource {
    std::string name;
    std::uint64_t base = 0;
    std::string text;
};

struct ParseOptions {
    bool lenient = false;  // skip unknown opcodes with a warning instead of failing
};

struct ParseWarning {
    std::string unit;
    std::size_t line = 0;
    std::string message;
};

/// Parses one or more listing units into a single image. The base of each unit
/// is added to its instruction addresses. Throws ParseError on the first error
/// in a unit, DuplicateAddress when two units collide.
ProgramImage parse_program(std::span<const ListingSource> sources, const ParseOptions& options = {},
                           std::vector<ParseWarning>* warnings = nullptr);

ProgramImage parse_listing(std::string_view text, std::string name = "listing", std::uint64_t base = 0);

/// Prints an image back in listing form.
std::string print_listing(const ProgramImage& image);

/// Canonical form for listing comparison: comments and blank lines dropped,
/// whitespace collapsed, no spaces around commas, hex digits lowercased.
std::string normalize_listing(std::string_view text);

}  // namespace pcx
