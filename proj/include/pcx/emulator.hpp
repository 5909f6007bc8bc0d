#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "pcx/finding.hpp"
#include "pcx/machine_state.hpp"
#include "pcx/pcode.hpp"

namespace pcx {

struct JumpTable {
    std::vector<std::uint64_t> targets;
    std::string index_source;
    std::int64_t index_base = 0;
};

/// Indirect-branch instruction address -> table.
using JumpTableMap = std::map<std::uint64_t, JumpTable>;

enum class FaultKind { DivisionByZero, UnmappedBranchTarget, UnsupportedOp, UnknownCallother, UnknownSyscall };

std::string_view fault_kind_name(FaultKind kind);

struct ExecFault {
    FaultKind kind = FaultKind::UnsupportedOp;
    std::uint64_t address = 0;
    std::size_t op_index = 0;
    std::string detail;
};

struct Continue {
    std::uint64_t next_pc = 0;
};
struct Exited {
    std::int64_t code = 0;
};
struct Faulted {
    ExecFault fault;
};
struct InvariantHit {
    Finding finding;
};

using StepOutcome = std::variant<Continue, Exited, Faulted, InvariantHit>;

struct MemoryEvent {
    enum Kind { Load, Store } kind = Load;
    ConcolicValue address;
    std::uint32_t size = 0;
};

/// Detection callbacks. Returning a Finding reports it.
class ExecutionHooks {
public:
    virtual ~ExecutionHooks() = default;
    virtual std::optional<Finding> before_instruction(const MachineState&, const Instruction&) { return std::nullopt; }
    virtual std::optional<Finding> on_memory_access(const MachineState&, const Instruction&, std::size_t,
                                                    const MemoryEvent&)
    {
        return std::nullopt;
    }
};

/// Log/trace sink.
class ExecutionObserver {
public:
    virtual ~ExecutionObserver() = default;
    virtual void on_op(std::uint64_t, std::uint64_t, std::size_t, const PcodeOp&, std::span<const ConcolicValue>,
                       const std::optional<ConcolicValue>&)
    {
    }
    virtual void on_call(std::uint64_t, std::uint64_t, std::span<const std::uint64_t>) {}
    virtual void on_return(std::uint64_t, std::uint64_t) {}
    virtual void on_syscall(std::uint64_t, std::uint64_t, std::span<const std::uint64_t>) {}
    virtual void on_finding(std::uint64_t, const Finding&) {}
};

struct EmulatorContext {
    const JumpTableMap* jump_tables = nullptr;
    ExecutionHooks* hooks = nullptr;
    ExecutionObserver* observer = nullptr;
    bool strict = false;
    bool explore = false;          // record the other jump-table arms for forking
    bool halt_on_finding = true;
    bool division_findings = false;  // report division by zero instead of faulting
    bool check_consistency = false;
    std::optional<std::uint64_t> syscall_stub;
    std::map<std::uint64_t, std::uint64_t> stubs;  // address -> return value
    std::optional<std::uint64_t> exit_sentinel;
    Strategy label = Strategy::S1;  // strategy recorded on findings raised by the emulator itself

    std::vector<Finding> findings;
    std::set<std::pair<std::string, std::uint64_t>> reported;
};

struct NoTransfer {};
struct RelativeJump {
    std::int64_t delta = 0;
};
struct AbsoluteTransfer {
    std::uint64_t target = 0;
};
struct ExitRequest {
    std::int64_t code = 0;
};
struct FindingRaised {
    Finding finding;
    bool completed = false;  // the op still took effect
};
struct OpFault {
    ExecFault fault;
};

using OpResult = std::variant<NoTransfer, RelativeJump, AbsoluteTransfer, ExitRequest, FindingRaised, OpFault>;

OpResult execute_op(MachineState& state, const PcodeOp& op, std::size_t op_index, const Instruction& instr,
                    EmulatorContext& ctx);

StepOutcome step(MachineState& state, const ProgramImage& img, EmulatorContext& ctx);

StepOutcome do_syscall(MachineState& state, EmulatorContext& ctx, std::uint64_t address = 0,
                       std::size_t op_index = 0);

class IndexOutOfTable : public std::runtime_error {
public:
    IndexOutOfTable(std::uint64_t address, std::int64_t index, std::size_t size);
    std::uint64_t address() const { return address_; }
    std::int64_t index() const { return index_; }

private:
    std::uint64_t address_;
    std::int64_t index_;
};

struct BranchTarget {
    std::uint64_t target = 0;
    ExprPtr constraint;  // width 1, set when the index is symbolic
};

/// First entry is the concrete target. With exploration on and a symbolic
/// index, every other in-range arm follows.
std::vector<BranchTarget> resolve_branchind(const MachineState& state, std::uint64_t instr_addr,
                                            const ConcolicValue& dest, const JumpTableMap* tables, bool explore);

enum class RunEnd { Exited, Finding, Fault, BudgetExhausted };

struct RunResult {
    RunEnd end = RunEnd::BudgetExhausted;
    std::int64_t exit_code = 0;
    std::optional<ExecFault> fault;
    std::vector<Finding> findings;
    std::uint64_t steps = 0;
};

/// Steps until exit, fault, halting finding, or `max_steps` executed ops.
RunResult run(MachineState& state, const ProgramImage& img, EmulatorContext& ctx, std::uint64_t max_steps);

}  // namespace pcx
