#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pcx {

/// Address spaces of low-level P-Code. Stack and overlay spaces are folded into
/// Ram by the listing generator.
enum class SpaceKind : std::uint8_t { Constant, Register, Unique, Ram };

std::string_view space_name(SpaceKind space);
std::optional<SpaceKind> space_from_name(std::string_view name);

struct Varnode {
    SpaceKind space = SpaceKind::Constant;
    std::uint64_t offset = 0;  // literal value when space == Constant
    std::uint32_t size = 0;    // bytes, 1..16

    bool is_constant() const { return space == SpaceKind::Constant; }
    friend bool operator==(const Varnode&, const Varnode&) = default;
};

/// Renders `(space,0xoffset,size)`.
std::string to_string(const Varnode& vn);

#define PCX_OPCODE_LIST(X)                                                     \
    X(COPY) X(LOAD) X(STORE) X(BRANCH) X(CBRANCH) X(BRANCHIND) X(CALL)         \
    X(CALLIND) X(CALLOTHER) X(RETURN) X(PIECE) X(SUBPIECE) X(POPCOUNT)         \
    X(INT_EQUAL) X(INT_NOTEQUAL) X(INT_LESS) X(INT_SLESS) X(INT_LESSEQUAL)     \
    X(INT_SLESSEQUAL) X(INT_ZEXT) X(INT_SEXT) X(INT_ADD) X(INT_SUB)            \
    X(INT_CARRY) X(INT_SCARRY) X(INT_SBORROW) X(INT_2COMP) X(INT_NEGATE)       \
    X(INT_XOR) X(INT_AND) X(INT_OR) X(INT_LEFT) X(INT_RIGHT) X(INT_SRIGHT)     \
    X(INT_MULT) X(INT_DIV) X(INT_SDIV) X(INT_REM) X(INT_SREM) X(BOOL_NEGATE)   \
    X(BOOL_XOR) X(BOOL_AND) X(BOOL_OR)

enum class Opcode : std::uint8_t {
#define PCX_OPCODE_ENUM(name) name,
    PCX_OPCODE_LIST(PCX_OPCODE_ENUM)
#undef PCX_OPCODE_ENUM
};

inline constexpr Opcode all_opcodes[] = {
#define PCX_OPCODE_VALUE(name) Opcode::name,
    PCX_OPCODE_LIST(PCX_OPCODE_VALUE)
#undef PCX_OPCODE_VALUE
};

std::string_view opcode_name(Opcode op);
std::optional<Opcode> opcode_from_name(std::string_view name);

/// Decompiler-level opcodes (MULTIEQUAL, INDIRECT, CAST, ...). These never
/// appear in raw P-Code and are rejected outright.
bool is_high_level_opcode_name(std::string_view name);

/// FLOAT_*, INT2FLOAT, TRUNC, ... Not modeled.
bool is_float_opcode_name(std::string_view name);

bool is_comparison(Opcode op);
bool is_branch(Opcode op);

struct PcodeOp {
    Opcode opcode = Opcode::COPY;
    std::optional<Varnode> output;
    std::vector<Varnode> inputs;
    std::string callother_name;  // pseudo-op name, CALLOTHER only

    friend bool operator==(const PcodeOp&, const PcodeOp&) = default;
};

class InvalidOp : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Returns a description of the first arity/size violation, if any.
std::optional<std::string> check_op(const PcodeOp& op);

/// Throws InvalidOp when check_op reports a violation.
void validate(const PcodeOp& op);

/// Listing-format rendering: `OUT = OPCODE IN0 , IN1` or `OPCODE IN0 , IN1`.
std::string to_string(const PcodeOp& op);

struct Instruction {
    std::uint64_t address = 0;
    std::uint32_t length = 0;  // 0 when the listing omits it
    std::vector<PcodeOp> ops;
};

struct LoadUnit {
    std::string name;
    std::uint64_t base = 0;
};

class AddressUnknown : public std::runtime_error {
public:
    explicit AddressUnknown(std::uint64_t address);
    std::uint64_t address() const { return address_; }

private:
    std::uint64_t address_;
};

class DuplicateAddress : public std::runtime_error {
public:
    DuplicateAddress(std::uint64_t address, std::string unit);
    std::uint64_t address() const { return address_; }
    const std::string& unit() const { return unit_; }

private:
    std::uint64_t address_;
    std::string unit_;
};

/// A loaded program: instructions from one or more listing units, keyed by
/// address. Immutable once loading is done.
class ProgramImage {
public:
    using InstructionMap = std::map<std::uint64_t, Instruction>;

    /// Throws DuplicateAddress if the address is already present.
    void add(Instruction instr, std::string_view unit = {});
    void add_unit(LoadUnit unit) { units_.push_back(std::move(unit)); }

    bool contains(std::uint64_t address) const { return instructions_.count(address) != 0; }
    const Instruction* find(std::uint64_t address) const;
    const Instruction& at(std::uint64_t address) const;

    /// Smallest instruction address strictly greater than `address`.
    /// Throws AddressUnknown if `address` is not an instruction.
    std::optional<std::uint64_t> next_instruction_address(std::uint64_t address) const;

    /// Fall-through successor: address + length when the length is known,
    /// listing order otherwise.
    std::optional<std::uint64_t> fall_through(const Instruction& instr) const;

    const InstructionMap& instructions() const { return instructions_; }
    const std::vector<LoadUnit>& load_units() const { return units_; }
    std::size_t size() const { return instructions_.size(); }
    bool empty() const { return instructions_.empty(); }

private:
    InstructionMap instructions_;
    std::vector<LoadUnit> units_;
};

}  // namespace pcx
