#include "pcx/pcode.hpp"

#include <algorithm>
#include <array>

#include <fmt/format.h>

namespace pcx {

std::string_view space_name(SpaceKind space)
{
    switch (space) {
        case SpaceKind::Constant: return "const";
        case SpaceKind::Register: return "register";
        case SpaceKind::Unique: return "unique";
        case SpaceKind::Ram: return "ram";
    }
    return "?";
}

std::optional<SpaceKind> space_from_name(std::string_view name)
{
    if (name == "const") return SpaceKind::Constant;
    if (name == "register") return SpaceKind::Register;
    if (name == "unique") return SpaceKind::Unique;
    if (name == "ram") return SpaceKind::Ram;
    return std::nullopt;
}

std::string to_string(const Varnode& vn)
{
    return fmt::format("({},{:#x},{})", space_name(vn.space), vn.offset, vn.size);
}

namespace {

constexpr std::string_view opcode_names[] = {
#define PCX_OPCODE_STRING(name) #name,
    PCX_OPCODE_LIST(PCX_OPCODE_STRING)
#undef PCX_OPCODE_STRING
};

constexpr std::array<std::string_view, 10> high_level_names = {
    "MULTIEQUAL", "INDIRECT", "CAST", "PTRADD", "PTRSUB",
    "SEGMENTOP",  "CPOOLREF", "NEW",  "INSERT", "EXTRACT"};

constexpr std::array<std::string_view, 6> float_names_exact = {
    "INT2FLOAT", "TRUNC", "CEIL", "FLOOR", "ROUND", "NAN"};

bool is_valid_storage_size(std::uint32_t size)
{
    return size == 1 || size == 2 || size == 4 || size == 8 || size == 16;
}

}  // namespace

std::string_view opcode_name(Opcode op)
{
    return opcode_names[static_cast<std::size_t>(op)];
}

std::optional<Opcode> opcode_from_name(std::string_view name)
{
    for (std::size_t i = 0; i < std::size(opcode_names); ++i) {
        if (opcode_names[i] == name) return static_cast<Opcode>(i);
    }
    return std::nullopt;
}

bool is_high_level_opcode_name(std::string_view name)
{
    return std::find(high_level_names.begin(), high_level_names.end(), name) !=
           high_level_names.end();
}

bool is_float_opcode_name(std::string_view name)
{
    if (name.starts_with("FLOAT_")) return true;
    return std::find(float_names_exact.begin(), float_names_exact.end(), name) !=
           float_names_exact.end();
}

bool is_comparison(Opcode op)
{
    switch (op) {
        case Opcode::INT_EQUAL:
        case Opcode::INT_NOTEQUAL:
        case Opcode::INT_LESS:
        case Opcode::INT_SLESS:
        case Opcode::INT_LESSEQUAL:
        case Opcode::INT_SLESSEQUAL:
            return true;
        default:
            return false;
    }
}

bool is_branch(Opcode op)
{
    switch (op) {
        case Opcode::BRANCH:
        case Opcode::CBRANCH:
        case Opcode::BRANCHIND:
        case Opcode::CALL:
        case Opcode::CALLIND:
        case Opcode::RETURN:
            return true;
        default:
            return false;
    }
}

std::optional<std::string> check_op(const PcodeOp& op)
{
    const auto name = opcode_name(op.opcode);
    const auto n_in = op.inputs.size();
    const bool has_out = op.output.has_value();

    for (const auto& vn : op.inputs) {
        if (vn.size < 1 || vn.size > 16)
            return fmt::format("{}: input size {} outside 1..16", name, vn.size);
    }
    if (has_out) {
        if (op.output->is_constant()) return fmt::format("{}: output is a constant", name);
        if (!is_valid_storage_size(op.output->size))
            return fmt::format("{}: output size {} not in {{1,2,4,8,16}}", name,
                               op.output->size);
    }

    auto expect = [&](bool out, std::size_t lo, std::size_t hi) -> std::optional<std::string> {
        if (out && !has_out) return fmt::format("{} requires an output", name);
        if (!out && has_out) return fmt::format("{} takes no output", name);
        if (n_in < lo || n_in > hi) {
            if (lo == hi) return fmt::format("{} takes {} input(s), got {}", name, lo, n_in);
            return fmt::format("{} takes {}..{} inputs, got {}", name, lo, hi, n_in);
        }
        return std::nullopt;
    };
    auto same_size = [&]() -> std::optional<std::string> {
        if (op.inputs[0].size != op.inputs[1].size)
            return fmt::format("{}: operand sizes differ ({} vs {})", name,
                               op.inputs[0].size, op.inputs[1].size);
        return std::nullopt;
    };

    switch (op.opcode) {
        case Opcode::COPY:
            if (auto e = expect(true, 1, 1)) return e;
            if (op.output->size != op.inputs[0].size)
                return fmt::format("COPY: size mismatch ({} -> {})", op.inputs[0].size,
                                   op.output->size);
            return std::nullopt;
        case Opcode::LOAD:
            return expect(true, 2, 2);
        case Opcode::STORE:
            return expect(false, 3, 3);
        case Opcode::BRANCH:
        case Opcode::BRANCHIND:
            return expect(false, 1, 1);
        case Opcode::CBRANCH:
            return expect(false, 2, 2);
        case Opcode::CALL:
        case Opcode::CALLIND:
            return expect(false, 1, 3);
        case Opcode::RETURN:
            return expect(false, 1, 2);
        case Opcode::CALLOTHER:
            if (n_in < 1 || n_in > 3)
                return fmt::format("CALLOTHER takes 1..3 inputs, got {}", n_in);
            if (!op.inputs[0].is_constant()) return "CALLOTHER: first input must be a constant";
            if (op.callother_name.empty()) return "CALLOTHER: missing pseudo-op name";
            return std::nullopt;
        case Opcode::PIECE:
            if (auto e = expect(true, 2, 2)) return e;
            if (op.output->size != op.inputs[0].size + op.inputs[1].size)
                return fmt::format("PIECE: output size {} != {} + {}", op.output->size,
                                   op.inputs[0].size, op.inputs[1].size);
            return std::nullopt;
        case Opcode::SUBPIECE:
            if (auto e = expect(true, 2, 2)) return e;
            if (!op.inputs[1].is_constant()) return "SUBPIECE: byte offset must be a constant";
            return std::nullopt;
        case Opcode::POPCOUNT:
            return expect(true, 1, 1);
        case Opcode::INT_EQUAL:
        case Opcode::INT_NOTEQUAL:
        case Opcode::INT_LESS:
        case Opcode::INT_SLESS:
        case Opcode::INT_LESSEQUAL:
        case Opcode::INT_SLESSEQUAL:
        case Opcode::INT_CARRY:
        case Opcode::INT_SCARRY:
        case Opcode::INT_SBORROW:
            if (auto e = expect(true, 2, 2)) return e;
            if (auto e = same_size()) return e;
            if (op.output->size != 1) return fmt::format("{}: output must be 1 byte", name);
            return std::nullopt;
        case Opcode::INT_ZEXT:
        case Opcode::INT_SEXT:
            if (auto e = expect(true, 1, 1)) return e;
            if (op.output->size < op.inputs[0].size)
                return fmt::format("{}: output narrower than input", name);
            return std::nullopt;
        case Opcode::INT_ADD:
        case Opcode::INT_SUB:
        case Opcode::INT_XOR:
        case Opcode::INT_AND:
        case Opcode::INT_OR:
        case Opcode::INT_MULT:
        case Opcode::INT_DIV:
        case Opcode::INT_SDIV:
        case Opcode::INT_REM:
        case Opcode::INT_SREM:
            if (auto e = expect(true, 2, 2)) return e;
            if (auto e = same_size()) return e;
            if (op.output->size != op.inputs[0].size)
                return fmt::format("{}: output size differs from operands", name);
            return std::nullopt;
        case Opcode::INT_2COMP:
        case Opcode::INT_NEGATE:
            if (auto e = expect(true, 1, 1)) return e;
            if (op.output->size != op.inputs[0].size)
                return fmt::format("{}: output size differs from operand", name);
            return std::nullopt;
        case Opcode::INT_LEFT:
        case Opcode::INT_RIGHT:
        case Opcode::INT_SRIGHT:
            if (auto e = expect(true, 2, 2)) return e;
            if (op.output->size != op.inputs[0].size)
                return fmt::format("{}: output size differs from shifted operand", name);
            return std::nullopt;
        case Opcode::BOOL_NEGATE:
            if (auto e = expect(true, 1, 1)) return e;
            if (op.output->size != 1) return "BOOL_NEGATE: output must be 1 byte";
            return std::nullopt;
        case Opcode::BOOL_XOR:
        case Opcode::BOOL_AND:
        case Opcode::BOOL_OR:
            if (auto e = expect(true, 2, 2)) return e;
            if (op.output->size != 1) return fmt::format("{}: output must be 1 byte", name);
            return std::nullopt;
    }
    return fmt::format("unknown opcode {}", static_cast<int>(op.opcode));
}

void validate(const PcodeOp& op)
{
    if (auto err = check_op(op)) throw InvalidOp(*err);
}

std::string to_string(const PcodeOp& op)
{
    std::string out;
    if (op.output) {
        out += to_string(*op.output);
        out += " = ";
    }
    out += opcode_name(op.opcode);
    for (std::size_t i = 0; i < op.inputs.size(); ++i) {
        out += i == 0 ? " " : " , ";
        out += to_string(op.inputs[i]);
        if (i == 0 && op.opcode == Opcode::CALLOTHER) {
            out += " \"";
            out += op.callother_name;
            out += '"';
        }
    }
    return out;
}

AddressUnknown::AddressUnknown(std::uint64_t address)
    : std::runtime_error(fmt::format("no instruction at {:#x}", address)), address_(address)
{
}

DuplicateAddress::DuplicateAddress(std::uint64_t address, std::string unit)
    : std::runtime_error(fmt::format("duplicate instruction address {:#x}{}", address,
                                     unit.empty() ? "" : " in " + unit)),
      address_(address),
      unit_(std::move(unit))
{
}

void ProgramImage::add(Instruction instr, std::string_view unit)
{
    const auto addr = instr.address;
    auto [it, inserted] = instructions_.emplace(addr, std::move(instr));
    if (!inserted) throw DuplicateAddress(addr, std::string(unit));
}

const Instruction* ProgramImage::find(std::uint64_t address) const
{
    auto it = instructions_.find(address);
    return it == instructions_.end() ? nullptr : &it->second;
}

const Instruction& ProgramImage::at(std::uint64_t address) const
{
    if (auto* instr = find(address)) return *instr;
    throw AddressUnknown(address);
}

std::optional<std::uint64_t> ProgramImage::next_instruction_address(std::uint64_t address) const
{
    auto it = instructions_.find(address);
    if (it == instructions_.end()) throw AddressUnknown(address);
    ++it;
    if (it == instructions_.end()) return std::nullopt;
    return it->first;
}

std::optional<std::uint64_t> ProgramImage::fall_through(const Instruction& instr) const
{
    if (instr.length > 0) return instr.address + instr.length;
    return next_instruction_address(instr.address);
}

}  // namespace pcx
