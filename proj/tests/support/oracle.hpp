#pragma once

// Exhaustive width-8 agreement between execute_op and the expression evaluator.

#include <map>
#include <string>

#include "pcx/emulator.hpp"
#include "pcx/expr.hpp"

namespace pcx::testing {

struct SweepResult {
    std::map<std::string, std::size_t> mismatches;  // opcode -> count
    std::size_t cases = 0;
    std::size_t total_mismatches() const
    {
        std::size_t n = 0;
        for (const auto& [k, v] : mismatches) n += v;
        return n;
    }
};

inline ExprPtr reference_binary(Opcode op, ExprPtr a, ExprPtr b)
{
    auto nz = [](ExprPtr e) { return binary(BinaryOp::Ne, e, literal(0, e->width())); };
    switch (op) {
        case Opcode::INT_ADD: return binary(BinaryOp::Add, a, b);
        case Opcode::INT_SUB: return binary(BinaryOp::Sub, a, b);
        case Opcode::INT_MULT: return binary(BinaryOp::Mul, a, b);
        case Opcode::INT_DIV: return binary(BinaryOp::UDiv, a, b);
        case Opcode::INT_SDIV: return binary(BinaryOp::SDiv, a, b);
        case Opcode::INT_REM: return binary(BinaryOp::URem, a, b);
        case Opcode::INT_SREM: return binary(BinaryOp::SRem, a, b);
        case Opcode::INT_AND: return binary(BinaryOp::And, a, b);
        case Opcode::INT_OR: return binary(BinaryOp::Or, a, b);
        case Opcode::INT_XOR: return binary(BinaryOp::Xor, a, b);
        case Opcode::INT_LEFT: return binary(BinaryOp::Shl, a, b);
        case Opcode::INT_RIGHT: return binary(BinaryOp::LShr, a, b);
        case Opcode::INT_SRIGHT: return binary(BinaryOp::AShr, a, b);
        case Opcode::INT_EQUAL: return binary(BinaryOp::Eq, a, b);
        case Opcode::INT_NOTEQUAL: return binary(BinaryOp::Ne, a, b);
        case Opcode::INT_LESS: return binary(BinaryOp::Ult, a, b);
        case Opcode::INT_LESSEQUAL: return binary(BinaryOp::Ule, a, b);
        case Opcode::INT_SLESS: return binary(BinaryOp::Slt, a, b);
        case Opcode::INT_SLESSEQUAL: return binary(BinaryOp::Sle, a, b);
        case Opcode::INT_CARRY: return binary(BinaryOp::Carry, a, b);
        case Opcode::INT_SCARRY: return binary(BinaryOp::SCarry, a, b);
        case Opcode::INT_SBORROW: return binary(BinaryOp::SBorrow, a, b);
        case Opcode::BOOL_AND: return binary(BinaryOp::And, nz(a), nz(b));
        case Opcode::BOOL_OR: return binary(BinaryOp::Or, nz(a), nz(b));
        case Opcode::BOOL_XOR: return binary(BinaryOp::Xor, nz(a), nz(b));
        case Opcode::PIECE: return concat(a, b);
        default: return nullptr;
    }
}

inline ExprPtr reference_unary(Opcode op, ExprPtr a)
{
    switch (op) {
        case Opcode::COPY: return a;
        case Opcode::INT_2COMP: return unary(UnaryOp::Neg, a);
        case Opcode::INT_NEGATE: return unary(UnaryOp::Not, a);
        case Opcode::BOOL_NEGATE: return binary(BinaryOp::Eq, a, literal(0, a->width()));
        case Opcode::POPCOUNT: return unary(UnaryOp::Popcount, a);
        case Opcode::INT_ZEXT: return zero_extend(a, 16);
        case Opcode::INT_SEXT: return sign_extend(a, 16);
        default: return nullptr;
    }
}

inline std::uint32_t output_size(Opcode op)
{
    return (op == Opcode::INT_ZEXT || op == Opcode::INT_SEXT || op == Opcode::PIECE) ? 2 : 1;
}

inline bool is_division(Opcode op)
{
    return op == Opcode::INT_DIV || op == Opcode::INT_SDIV || op == Opcode::INT_REM || op == Opcode::INT_SREM;
}

/// Runs every integer/bool opcode over all 8-bit operands. Division by zero
/// must fault in the emulator (counted as a mismatch otherwise).
inline SweepResult sweep_width8()
{
    SweepResult result;
    MachineState state;
    EmulatorContext ctx;
    Instruction instr{0x1000, 0, {}};
    const Varnode out1{SpaceKind::Unique, 0x100, 1};
    const Varnode out2{SpaceKind::Unique, 0x100, 2};

    for (auto op : all_opcodes) {
        const auto name = std::string(opcode_name(op));
        const Varnode out = output_size(op) == 2 ? out2 : out1;
        if (reference_binary(op, literal(0, 8), literal(1, 8))) {
            std::size_t bad = 0;
            PcodeOp p{op, out, {{SpaceKind::Constant, 0, 1}, {SpaceKind::Constant, 0, 1}}, {}};
            for (unsigned a = 0; a < 256; ++a) {
                p.inputs[0].offset = a;
                for (unsigned b = 0; b < 256; ++b) {
                    p.inputs[1].offset = b;
                    ++result.cases;
                    auto r = execute_op(state, p, 0, instr, ctx);
                    if (is_division(op) && b == 0) {
                        auto* f = std::get_if<OpFault>(&r);
                        if (!f || f->fault.kind != FaultKind::DivisionByZero) ++bad;
                        continue;
                    }
                    const auto got = read_varnode(state, out).concrete;
                    const auto want = evaluate(reference_binary(op, literal(a, 8), literal(b, 8)), {});
                    if (!std::holds_alternative<NoTransfer>(r) || got != want) ++bad;
                }
            }
            result.mismatches[name] = bad;
        } else if (reference_unary(op, literal(0, 8))) {
            std::size_t bad = 0;
            PcodeOp p{op, out, {{SpaceKind::Constant, 0, 1}}, {}};
            for (unsigned a = 0; a < 256; ++a) {
                p.inputs[0].offset = a;
                ++result.cases;
                auto r = execute_op(state, p, 0, instr, ctx);
                const auto got = read_varnode(state, out).concrete;
                const auto want = evaluate(reference_unary(op, literal(a, 8)), {});
                if (!std::holds_alternative<NoTransfer>(r) || got != want) ++bad;
            }
            result.mismatches[name] = bad;
        }
    }
    return result;
}

}  // namespace pcx::testing
