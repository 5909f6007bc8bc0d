#include "pcx/emulator.hpp"

#include <algorithm>
#include <bit>

#include <fmt/format.h>

namespace pcx {

std::string_view fault_kind_name(FaultKind kind)
{
    switch (kind) {
        case FaultKind::DivisionByZero: return "DivisionByZero";
        case FaultKind::UnmappedBranchTarget: return "UnmappedBranchTarget";
        case FaultKind::UnsupportedOp: return "UnsupportedOp";
        case FaultKind::UnknownCallother: return "UnknownCallother";
        case FaultKind::UnknownSyscall: return "UnknownSyscall";
    }
    return "?";
}

IndexOutOfTable::IndexOutOfTable(std::uint64_t address, std::int64_t index, std::size_t size)
    : std::runtime_error(fmt::format("jump table at {:#x}: index {} outside {} entries", address, index, size)),
      address_(address),
      index_(index)
{
}

namespace {

using i128 = __int128;

u128 mask_of(unsigned bits)
{
    return bits >= 128 ? ~u128(0) : (u128(1) << bits) - 1;
}

// Two's-complement reading of the low `bits` bits.
i128 to_signed(u128 v, unsigned bits)
{
    if (bits >= 128) return static_cast<i128>(v);
    const u128 bias = u128(1) << (bits - 1);
    return static_cast<i128>(v & mask_of(bits)) - static_cast<i128>(bias) * 2 * static_cast<i128>((v >> (bits - 1)) & 1);
}

i128 signed_max(unsigned bits) { return static_cast<i128>(mask_of(bits - 1)); }
i128 signed_min(unsigned bits) { return -signed_max(bits) - 1; }

std::int64_t sign_extend64(std::uint64_t v, std::uint32_t size)
{
    if (size >= 8) return static_cast<std::int64_t>(v);
    const unsigned shift = 64 - size * 8;
    return static_cast<std::int64_t>(v << shift) >> shift;
}

ExprPtr fit(ExprPtr e, unsigned width)
{
    if (e->width() == width) return e;
    if (e->width() < width) {
        if (e->width() == 1) return zero_extend(zero_extend(std::move(e), 8), width);
        return zero_extend(std::move(e), width);
    }
    return extract(std::move(e), 0, width);
}

bool any_symbolic(std::span<const ConcolicValue> v)
{
    return std::any_of(v.begin(), v.end(), [](const auto& x) { return x.is_symbolic(); });
}

bool wide_allowed(Opcode op)
{
    switch (op) {
        case Opcode::COPY:
        case Opcode::LOAD:
        case Opcode::STORE:
        case Opcode::PIECE:
        case Opcode::SUBPIECE:
        case Opcode::INT_ZEXT:
        case Opcode::INT_AND:
        case Opcode::INT_OR:
        case Opcode::INT_XOR:
        case Opcode::INT_NEGATE:
        case Opcode::INT_EQUAL:
        case Opcode::INT_NOTEQUAL:
        case Opcode::CALLOTHER:
            return true;
        default:
            return false;
    }
}

std::optional<BinaryOp> binary_of(Opcode op)
{
    switch (op) {
        case Opcode::INT_ADD: return BinaryOp::Add;
        case Opcode::INT_SUB: return BinaryOp::Sub;
        case Opcode::INT_MULT: return BinaryOp::Mul;
        case Opcode::INT_DIV: return BinaryOp::UDiv;
        case Opcode::INT_SDIV: return BinaryOp::SDiv;
        case Opcode::INT_REM: return BinaryOp::URem;
        case Opcode::INT_SREM: return BinaryOp::SRem;
        case Opcode::INT_AND: return BinaryOp::And;
        case Opcode::INT_OR: return BinaryOp::Or;
        case Opcode::INT_XOR: return BinaryOp::Xor;
        case Opcode::INT_LEFT: return BinaryOp::Shl;
        case Opcode::INT_RIGHT: return BinaryOp::LShr;
        case Opcode::INT_SRIGHT: return BinaryOp::AShr;
        case Opcode::INT_EQUAL: return BinaryOp::Eq;
        case Opcode::INT_NOTEQUAL: return BinaryOp::Ne;
        case Opcode::INT_LESS: return BinaryOp::Ult;
        case Opcode::INT_LESSEQUAL: return BinaryOp::Ule;
        case Opcode::INT_SLESS: return BinaryOp::Slt;
        case Opcode::INT_SLESSEQUAL: return BinaryOp::Sle;
        case Opcode::INT_CARRY: return BinaryOp::Carry;
        case Opcode::INT_SCARRY: return BinaryOp::SCarry;
        case Opcode::INT_SBORROW: return BinaryOp::SBorrow;
        default: return std::nullopt;
    }
}

// Concrete semantics of the two-operand integer ops.
u128 concrete_binary(Opcode op, u128 a, u128 b, unsigned bits)
{
    const u128 m = mask_of(bits);
    const i128 sa = to_signed(a, bits);
    const i128 sb = to_signed(b, bits);
    switch (op) {
        case Opcode::INT_ADD: return (a + b) & m;
        case Opcode::INT_SUB: return (a + (~b + 1)) & m;
        case Opcode::INT_MULT: return (a * b) & m;
        case Opcode::INT_DIV: return a / b;
        case Opcode::INT_REM: return a % b;
        case Opcode::INT_SDIV: return static_cast<u128>(sa / sb) & m;
        case Opcode::INT_SREM: return static_cast<u128>(sa % sb) & m;
        case Opcode::INT_AND: return a & b;
        case Opcode::INT_OR: return a | b;
        case Opcode::INT_XOR: return a ^ b;
        case Opcode::INT_EQUAL: return a == b ? 1 : 0;
        case Opcode::INT_NOTEQUAL: return a != b ? 1 : 0;
        case Opcode::INT_LESS: return a < b ? 1 : 0;
        case Opcode::INT_LESSEQUAL: return a <= b ? 1 : 0;
        case Opcode::INT_SLESS: return sa < sb ? 1 : 0;
        case Opcode::INT_SLESSEQUAL: return sa <= sb ? 1 : 0;
        case Opcode::INT_CARRY: return a + b > m ? 1 : 0;
        case Opcode::INT_SCARRY: {
            const i128 s = sa + sb;
            return (s > signed_max(bits) || s < signed_min(bits)) ? 1 : 0;
        }
        case Opcode::INT_SBORROW: {
            const i128 s = sa - sb;
            return (s > signed_max(bits) || s < signed_min(bits)) ? 1 : 0;
        }
        default: return 0;
    }
}

u128 concrete_shift(Opcode op, u128 a, u128 amount, unsigned bits)
{
    const u128 m = mask_of(bits);
    const bool negative = ((a >> (bits - 1)) & 1) != 0;
    if (amount >= bits) {
        if (op == Opcode::INT_SRIGHT && negative) return m;
        return 0;
    }
    const auto n = static_cast<unsigned>(amount);
    switch (op) {
        case Opcode::INT_LEFT: return (a << n) & m;
        case Opcode::INT_RIGHT: return a >> n;
        case Opcode::INT_SRIGHT: return static_cast<u128>(to_signed(a, bits) >> n) & m;
        default: return 0;
    }
}

std::uint64_t reg64(const MachineState& s, std::string_view name)
{
    return s.read_register(name).low64();
}

constexpr const char* arg_registers[] = {"rdi", "rsi", "rdx", "rcx", "r8", "r9"};

OpResult fault(FaultKind kind, const Instruction& instr, std::size_t op_index, std::string detail)
{
    return OpFault{ExecFault{kind, instr.address, op_index, std::move(detail)}};
}

Finding emulator_finding(const EmulatorContext& ctx, std::string kind, std::uint64_t address, std::string message)
{
    Finding f;
    f.strategy = ctx.label;
    f.kind = std::move(kind);
    f.address = address;
    f.message = std::move(message);
    return f;
}

}  // namespace

std::vector<BranchTarget> resolve_branchind(const MachineState& state, std::uint64_t instr_addr,
                                            const ConcolicValue& dest, const JumpTableMap* tables, bool explore)
{
    const JumpTable* table = nullptr;
    if (tables) {
        auto it = tables->find(instr_addr);
        if (it != tables->end()) table = &it->second;
    }
    if (!table) return {BranchTarget{dest.low64(), nullptr}};

    const auto reg = state.read_register(table->index_source);
    const auto bits = reg.size * 8;
    const std::int64_t index =
        sign_extend64(reg.low64(), reg.size) - table->index_base;
    const auto n = static_cast<std::int64_t>(table->targets.size());
    if (index < 0 || index >= n) throw IndexOutOfTable(instr_addr, index, table->targets.size());

    std::vector<BranchTarget> out;
    if (!reg.is_symbolic()) {
        out.push_back({table->targets[static_cast<std::size_t>(index)], nullptr});
        return out;
    }
    auto arm = [&](std::int64_t k) {
        return binary(BinaryOp::Eq, reg.symbolic, literal(static_cast<u128>(k + table->index_base), bits));
    };
    out.push_back({table->targets[static_cast<std::size_t>(index)], arm(index)});
    if (explore) {
        for (std::int64_t k = 0; k < n; ++k)
            if (k != index) out.push_back({table->targets[static_cast<std::size_t>(k)], arm(k)});
    }
    return out;
}

StepOutcome do_syscall(MachineState& state, EmulatorContext& ctx, std::uint64_t address, std::size_t op_index)
{
    const auto number = reg64(state, "rax");
    const std::uint64_t args[6] = {reg64(state, "rdi"), reg64(state, "rsi"), reg64(state, "rdx"),
                                   reg64(state, "r10"), reg64(state, "r8"),  reg64(state, "r9")};
    if (ctx.observer) ctx.observer->on_syscall(state.step_index ? state.step_index - 1 : 0, number, args);

    auto ret = [&](std::uint64_t v) { state.write_register("rax", v); };
    switch (number) {
        case 0: {  // read
            const int fd = static_cast<int>(args[0]);
            if (state.vfs.role(fd) != StreamRole::Stdin) {
                ret(static_cast<std::uint64_t>(-9));
                break;
            }
            if (state.vfs.stdin_symbolic()) {
                auto [first, n] = state.vfs.take_symbolic_stdin(args[2]);
                for (std::size_t k = 0; k < n; ++k)
                    state.memory.write(args[1] + k, state.make_symbol(fmt::format("stdin{}", first + k), 8));
                ret(n);
            } else {
                auto bytes = state.vfs.take_stdin(args[2]);
                state.memory.write_bytes(args[1], bytes);
                ret(bytes.size());
            }
            break;
        }
        case 1: {  // write
            const int fd = static_cast<int>(args[0]);
            const auto role = state.vfs.role(fd);
            if (role != StreamRole::Stdout && role != StreamRole::Stderr) {
                ret(static_cast<std::uint64_t>(-9));
                break;
            }
            const auto count = std::min<std::uint64_t>(args[2], 1 << 20);
            std::vector<std::uint8_t> bytes(count);
            for (std::uint64_t k = 0; k < count; ++k) bytes[k] = state.memory.concrete_byte(args[1] + k);
            state.vfs.append(fd, bytes);
            ret(count);
            break;
        }
        case 60:
        case 231:
            return Exited{static_cast<std::int32_t>(args[0])};
        case 12: {  // brk
            if (args[0] > state.heap_break) {
                state.memory.mark_initialized(state.heap_break, args[0] - state.heap_break);
                state.heap_break = args[0];
            }
            ret(state.heap_break);
            break;
        }
        case 9:  // mmap
            if (args[3] & 0x20) {
                const auto len = (args[1] + ByteStore::page_size - 1) & ~(ByteStore::page_size - 1);
                const auto base = state.mmap_next;
                state.mmap_next += len;
                state.memory.mark_initialized(base, len);
                state.regions.push_back({base, len, "rw", "mmap"});
                ret(base);
                break;
            }
            [[fallthrough]];
        default:
            if (ctx.strict)
                return Faulted{ExecFault{FaultKind::UnknownSyscall, address, op_index, fmt::format("syscall {}", number)}};
            ret(0);
    }
    return Continue{state.pc};
}

OpResult execute_op(MachineState& state, const PcodeOp& op, std::size_t op_index, const Instruction& instr,
                    EmulatorContext& ctx)
{
    const auto& in = op.inputs;
    std::vector<ConcolicValue> vals;
    vals.reserve(in.size());
    for (const auto& vn : in) vals.push_back(read_varnode(state, vn));

    const bool wide = std::any_of(in.begin(), in.end(), [](const Varnode& v) { return v.size > 8; }) ||
                      (op.output && op.output->size > 8);
    if (wide && !wide_allowed(op.opcode))
        return fault(FaultKind::UnsupportedOp, instr, op_index,
                     fmt::format("{} on 16-byte operands", opcode_name(op.opcode)));

    const std::uint64_t step_no = state.step_index++;
    std::optional<ConcolicValue> out;
    OpResult result = NoTransfer{};
    const bool sym = any_symbolic(vals);
    const unsigned out_bits = op.output ? op.output->size * 8 : 0;

    auto make_out = [&](u128 concrete, auto&& build) {
        ConcolicValue v{concrete & mask_of(out_bits), op.output->size, nullptr};
        if (sym) v.symbolic = fit(build(), out_bits);
        out = v;
    };

    switch (op.opcode) {
        case Opcode::COPY:
            out = vals[0];
            break;
        case Opcode::LOAD: {
            const auto& addr = vals[1];
            if (ctx.hooks) {
                if (auto f = ctx.hooks->on_memory_access(state, instr, op_index,
                                                         {MemoryEvent::Load, addr, op.output->size}))
                {
                    if (ctx.halt_on_finding) return FindingRaised{std::move(*f), false};
                    result = FindingRaised{std::move(*f), true};
                }
            }
            out = state.memory.read(addr.low64(), op.output->size);
            break;
        }
        case Opcode::STORE: {
            const auto& addr = vals[1];
            if (ctx.hooks) {
                if (auto f = ctx.hooks->on_memory_access(state, instr, op_index,
                                                         {MemoryEvent::Store, addr, in[2].size}))
                {
                    if (ctx.halt_on_finding) return FindingRaised{std::move(*f), false};
                    result = FindingRaised{std::move(*f), true};
                }
            }
            state.memory.write(addr.low64(), vals[2]);
            break;
        }
        case Opcode::BRANCH:
        case Opcode::CALL:
            if (in[0].is_constant()) result = RelativeJump{sign_extend64(in[0].offset, in[0].size)};
            else result = AbsoluteTransfer{in[0].offset};
            break;
        case Opcode::CBRANCH: {
            const bool taken = vals[1].concrete != 0;
            if (vals[1].is_symbolic()) {
                auto cond = binary(BinaryOp::Ne, vals[1].symbolic, literal(0, in[1].size * 8));
                state.constraints.push_back({cond, {instr.address, op_index}, taken});
            }
            if (taken) {
                if (in[0].is_constant()) result = RelativeJump{sign_extend64(in[0].offset, in[0].size)};
                else result = AbsoluteTransfer{in[0].offset};
            }
            break;
        }
        case Opcode::BRANCHIND:
        case Opcode::CALLIND: {
            try {
                auto targets = resolve_branchind(state, instr.address, vals[0], ctx.jump_tables, ctx.explore);
                if (targets.front().constraint) {
                    const auto idx = state.constraints.size();
                    state.constraints.push_back({targets.front().constraint, {instr.address, op_index}, true});
                    std::vector<ExprPtr> alts;
                    for (std::size_t k = 1; k < targets.size(); ++k) alts.push_back(targets[k].constraint);
                    if (!alts.empty()) state.alternatives[idx] = std::move(alts);
                }
                result = AbsoluteTransfer{targets.front().target};
            } catch (const IndexOutOfTable& e) {
                return FindingRaised{emulator_finding(ctx, "table_index_overflow", instr.address, e.what()), false};
            }
            break;
        }
        case Opcode::RETURN:
            result = AbsoluteTransfer{vals[0].low64()};
            break;
        case Opcode::CALLOTHER: {
            const auto& name = op.callother_name;
            if (name == "syscall") {
                auto outcome = do_syscall(state, ctx, instr.address, op_index);
                if (auto* ex = std::get_if<Exited>(&outcome)) result = ExitRequest{ex->code};
                else if (auto* fl = std::get_if<Faulted>(&outcome)) result = OpFault{fl->fault};
            } else if (name == "LOCK" || name == "UNLOCK") {
            } else if (ctx.strict) {
                return fault(FaultKind::UnknownCallother, instr, op_index, "pseudo-op " + name);
            }
            if (op.output) out = ConcolicValue::of(0, op.output->size);
            break;
        }
        case Opcode::PIECE: {
            const unsigned lo_bits = in[1].size * 8;
            make_out((vals[0].concrete << lo_bits) | vals[1].concrete,
                     [&] { return concat(vals[0].as_expr(), vals[1].as_expr()); });
            break;
        }
        case Opcode::SUBPIECE: {
            const auto shift = in[1].offset;
            const u128 c = shift >= in[0].size ? 0 : vals[0].concrete >> (8 * shift);
            make_out(c, [&]() -> ExprPtr {
                const unsigned in_bits = in[0].size * 8;
                if (shift >= in[0].size) return literal(0, out_bits);
                const auto low = static_cast<unsigned>(shift);
                const unsigned avail = in_bits - low * 8;
                if (avail >= out_bits) return extract(vals[0].as_expr(), low, out_bits);
                return zero_extend(extract(vals[0].as_expr(), low, avail), out_bits);
            });
            break;
        }
        case Opcode::POPCOUNT: {
            auto v = vals[0].concrete;
            unsigned count = 0;
            for (unsigned b = 0; b < in[0].size * 8; ++b) count += static_cast<unsigned>((v >> b) & 1);
            make_out(count, [&] { return unary(UnaryOp::Popcount, vals[0].as_expr()); });
            break;
        }
        case Opcode::INT_ZEXT:
            make_out(vals[0].concrete, [&] { return zero_extend(vals[0].as_expr(), out_bits); });
            break;
        case Opcode::INT_SEXT: {
            const unsigned bits = in[0].size * 8;
            make_out(static_cast<u128>(to_signed(vals[0].concrete, bits)),
                     [&] { return sign_extend(vals[0].as_expr(), out_bits); });
            break;
        }
        case Opcode::INT_2COMP:
            make_out(~vals[0].concrete + 1, [&] { return unary(UnaryOp::Neg, vals[0].as_expr()); });
            break;
        case Opcode::INT_NEGATE:
            make_out(~vals[0].concrete, [&] { return unary(UnaryOp::Not, vals[0].as_expr()); });
            break;
        case Opcode::INT_LEFT:
        case Opcode::INT_RIGHT:
        case Opcode::INT_SRIGHT: {
            const unsigned bits = in[0].size * 8;
            make_out(concrete_shift(op.opcode, vals[0].concrete, vals[1].concrete, bits),
                     [&] { return binary(*binary_of(op.opcode), vals[0].as_expr(), vals[1].as_expr()); });
            break;
        }
        case Opcode::INT_DIV:
        case Opcode::INT_SDIV:
        case Opcode::INT_REM:
        case Opcode::INT_SREM:
            if (vals[1].concrete == 0) {
                if (!ctx.division_findings)
                    return fault(FaultKind::DivisionByZero, instr, op_index, std::string(opcode_name(op.opcode)));
                auto f = emulator_finding(ctx, "division_by_zero", instr.address,
                                          fmt::format("{} by zero", opcode_name(op.opcode)));
                f.strategy = Strategy::CProfile;
                if (ctx.halt_on_finding) return FindingRaised{std::move(f), false};
                result = FindingRaised{std::move(f), true};
                make_out(0, [&] { return literal(0, out_bits); });
                break;
            }
            [[fallthrough]];
        case Opcode::INT_ADD:
        case Opcode::INT_SUB:
        case Opcode::INT_MULT:
        case Opcode::INT_AND:
        case Opcode::INT_OR:
        case Opcode::INT_XOR:
        case Opcode::INT_EQUAL:
        case Opcode::INT_NOTEQUAL:
        case Opcode::INT_LESS:
        case Opcode::INT_LESSEQUAL:
        case Opcode::INT_SLESS:
        case Opcode::INT_SLESSEQUAL:
        case Opcode::INT_CARRY:
        case Opcode::INT_SCARRY:
        case Opcode::INT_SBORROW: {
            const unsigned bits = in[0].size * 8;
            make_out(concrete_binary(op.opcode, vals[0].concrete, vals[1].concrete, bits),
                     [&] { return binary(*binary_of(op.opcode), vals[0].as_expr(), vals[1].as_expr()); });
            break;
        }
        case Opcode::BOOL_NEGATE:
            make_out(vals[0].concrete == 0 ? 1 : 0,
                     [&] { return binary(BinaryOp::Eq, vals[0].as_expr(), literal(0, in[0].size * 8)); });
            break;
        case Opcode::BOOL_XOR:
        case Opcode::BOOL_AND:
        case Opcode::BOOL_OR: {
            const bool a = vals[0].concrete != 0;
            const bool b = vals[1].concrete != 0;
            const bool r = op.opcode == Opcode::BOOL_AND ? (a && b) : op.opcode == Opcode::BOOL_OR ? (a || b) : (a != b);
            make_out(r ? 1 : 0, [&] {
                auto ta = binary(BinaryOp::Ne, vals[0].as_expr(), literal(0, in[0].size * 8));
                auto tb = binary(BinaryOp::Ne, vals[1].as_expr(), literal(0, in[1].size * 8));
                const auto bop = op.opcode == Opcode::BOOL_AND ? BinaryOp::And
                                 : op.opcode == Opcode::BOOL_OR ? BinaryOp::Or
                                                                : BinaryOp::Xor;
                return binary(bop, ta, tb);
            });
            break;
        }
    }

    if (out && op.output) {
        if (out->size != op.output->size) {
            out->concrete &= mask_of(out_bits);
            if (out->symbolic) out->symbolic = fit(out->symbolic, out_bits);
            out->size = op.output->size;
        }
        write_varnode(state, *op.output, *out);
    }
    if (ctx.observer) ctx.observer->on_op(step_no, instr.address, op_index, op, vals, out);
    return result;
}

namespace {

// Registers a finding; returns true when execution must halt.
bool report(MachineState& state, EmulatorContext& ctx, Finding f, std::optional<Finding>& halting)
{
    if (!ctx.reported.insert({f.kind, f.address}).second) return false;
    f.trace_ref = state.step_index++;
    if (ctx.observer) ctx.observer->on_finding(f.trace_ref, f);
    ctx.findings.push_back(f);
    if (ctx.halt_on_finding) {
        halting = std::move(f);
        return true;
    }
    return false;
}

// Pops the return address pushed by the lifted call sequence.
std::uint64_t simulated_return(MachineState& state)
{
    const auto rsp = reg64(state, "rsp");
    const auto target = state.memory.read(rsp, 8).low64();
    state.write_register("rsp", rsp + 8);
    return target;
}

}  // namespace

StepOutcome step(MachineState& state, const ProgramImage& img, EmulatorContext& ctx)
{
    const Instruction* instr = img.find(state.pc);
    if (!instr)
        return Faulted{ExecFault{FaultKind::UnmappedBranchTarget, state.pc, 0,
                                 fmt::format("no instruction at {:#x}", state.pc)}};
    state.unique.clear();

    std::optional<Finding> halting;
    if (ctx.hooks) {
        if (auto f = ctx.hooks->before_instruction(state, *instr))
            if (report(state, ctx, std::move(*f), halting)) return InvariantHit{std::move(*halting)};
    }

    std::optional<std::uint64_t> transfer;
    std::size_t i = 0;
    const auto& ops = instr->ops;
    while (i < ops.size()) {
        const auto& op = ops[i];
        auto r = execute_op(state, op, i, *instr, ctx);
        if (std::holds_alternative<NoTransfer>(r)) {
            ++i;
        } else if (auto* rel = std::get_if<RelativeJump>(&r)) {
            const auto target = static_cast<std::int64_t>(i) + rel->delta;
            if (target == static_cast<std::int64_t>(ops.size())) break;
            if (target < 0 || target > static_cast<std::int64_t>(ops.size()))
                return Faulted{ExecFault{FaultKind::UnmappedBranchTarget, instr->address, i,
                                         fmt::format("relative branch to op {}", target)}};
            i = static_cast<std::size_t>(target);
        } else if (auto* abs = std::get_if<AbsoluteTransfer>(&r)) {
            transfer = abs->target;
            if (ctx.observer) {
                if (op.opcode == Opcode::CALL || op.opcode == Opcode::CALLIND) {
                    std::vector<std::uint64_t> args;
                    for (auto name : arg_registers) args.push_back(reg64(state, name));
                    ctx.observer->on_call(state.step_index - 1, abs->target, args);
                } else if (op.opcode == Opcode::RETURN) {
                    ctx.observer->on_return(state.step_index - 1, abs->target);
                }
            }
            break;
        } else if (auto* ex = std::get_if<ExitRequest>(&r)) {
            return Exited{ex->code};
        } else if (auto* fr = std::get_if<FindingRaised>(&r)) {
            if (report(state, ctx, std::move(fr->finding), halting)) return InvariantHit{std::move(*halting)};
            if (!fr->completed)
                return Faulted{ExecFault{FaultKind::UnmappedBranchTarget, instr->address, i,
                                         "cannot continue past " + fr->finding.kind}};
            ++i;
        } else if (auto* fl = std::get_if<OpFault>(&r)) {
            return Faulted{fl->fault};
        }
    }

    std::optional<std::uint64_t> next;
    if (transfer) {
        auto target = *transfer;
        for (int hops = 0; hops < 8; ++hops) {
            if (ctx.exit_sentinel && target == *ctx.exit_sentinel) return Exited{0};
            if (ctx.syscall_stub && target == *ctx.syscall_stub) {
                auto outcome = do_syscall(state, ctx, instr->address, ops.size());
                if (!std::holds_alternative<Continue>(outcome)) return outcome;
                target = simulated_return(state);
                continue;
            }
            if (auto stub = ctx.stubs.find(target); stub != ctx.stubs.end() && !img.contains(target)) {
                state.write_register("rax", stub->second);
                target = simulated_return(state);
                continue;
            }
            break;
        }
        next = target;
    } else {
        next = img.fall_through(*instr);
    }
    if (!next || !img.contains(*next))
        return Faulted{ExecFault{FaultKind::UnmappedBranchTarget, instr->address, ops.empty() ? 0 : ops.size() - 1,
                                 next ? fmt::format("transfer to unmapped {:#x}", *next) : "fell off the image"}};
    state.pc = *next;
    if (ctx.check_consistency) {
        const auto b = state.bindings();
        if (!state.registers.consistent_with(b) || !state.memory.consistent_with(b))
            throw std::logic_error(fmt::format("concolic state diverged at {:#x}", instr->address));
    }
    return Continue{*next};
}

RunResult run(MachineState& state, const ProgramImage& img, EmulatorContext& ctx, std::uint64_t max_steps)
{
    RunResult result;
    const auto start = state.step_index;
    while (state.step_index - start < max_steps) {
        auto outcome = step(state, img, ctx);
        if (std::holds_alternative<Continue>(outcome)) continue;
        if (auto* ex = std::get_if<Exited>(&outcome)) {
            result.end = RunEnd::Exited;
            result.exit_code = ex->code;
        } else if (auto* fl = std::get_if<Faulted>(&outcome)) {
            result.end = RunEnd::Fault;
            result.fault = fl->fault;
        } else {
            result.end = RunEnd::Finding;
        }
        result.findings = ctx.findings;
        result.steps = state.step_index - start;
        return result;
    }
    result.end = RunEnd::BudgetExhausted;
    result.findings = ctx.findings;
    result.steps = state.step_index - start;
    return result;
}

}  // namespace pcx
