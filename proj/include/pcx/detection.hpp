#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pcx/emulator.hpp"
#include "pcx/finding.hpp"
#include "pcx/solver.hpp"

namespace pcx {

struct PanicXref {
    std::string kind;
    std::string message;
};

struct PanicXrefSet {
    std::map<std::uint64_t, PanicXref> entries;
    std::string source;

    const PanicXref* find(std::uint64_t address) const
    {
        auto it = entries.find(address);
        return it == entries.end() ? nullptr : &it->second;
    }
    std::size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }
};

enum class Comparator { Eq, Ne, Ult, Ule, Ugt, Uge, Slt, Sle, Sgt, Sge };

std::optional<Comparator> comparator_from_name(std::string_view name);
std::string_view comparator_name(Comparator c);

/// Reports when `register cmp constant` holds as the pc reaches `address`.
struct PredicateHook {
    std::uint64_t address = 0;
    std::string register_name;
    Comparator comparator = Comparator::Eq;
    std::uint64_t constant = 0;
    std::string label = "custom_invariant";
};

struct InvariantProfile {
    bool panic_xrefs = true;
    bool null_deref = false;
    bool misaligned = false;
    bool uninitialized_read = false;
    std::vector<PredicateHook> predicates;

    bool c_profile() const { return null_deref || misaligned || uninitialized_read; }
    void enable_c_profile() { null_deref = misaligned = uninitialized_read = true; }
};

std::optional<Finding> s1_check(const MachineState& state, const PanicXrefSet& xrefs);

/// NullDeref, MisalignedAccess (loads), UninitializedRead (loads), in that order.
/// `solver` may be null; then a symbolic address is only checked concretely.
std::optional<Finding> c_invariant_check(const MachineState& state, std::uint64_t address, const MemoryEvent& event,
                                         const InvariantProfile& profile, Solver* solver);

std::optional<Finding> predicate_check(const MachineState& state, const PredicateHook& hook, Solver* solver);

/// ExecutionHooks that run the S1 check, predicate hooks and C-profile checks.
class DetectionHooks : public ExecutionHooks {
public:
    DetectionHooks(const PanicXrefSet& xrefs, const InvariantProfile& profile, Solver* solver);

    std::optional<Finding> before_instruction(const MachineState& state, const Instruction& instr) override;
    std::optional<Finding> on_memory_access(const MachineState& state, const Instruction& instr, std::size_t op_index,
                                            const MemoryEvent& event) override;

private:
    const PanicXrefSet& xrefs_;
    const InvariantProfile& profile_;
    Solver* solver_;
};

struct ExplorationConfig {
    std::uint64_t max_steps = 100000;  // per path
    std::size_t max_forks = 64;
    std::size_t max_depth = 16;
    unsigned workers = 1;
    bool halt_on_finding = true;
    bool strict = false;
    SolverConfig solver;
    const JumpTableMap* jump_tables = nullptr;
    std::optional<std::uint64_t> syscall_stub;
    std::map<std::uint64_t, std::uint64_t> stubs;
    std::optional<std::uint64_t> exit_sentinel;
    Strategy label = Strategy::S2;  // strategy credited for alternate paths
    // path id -> observer (may return null); path 0 is the concrete seed path
    std::function<std::unique_ptr<ExecutionObserver>(std::size_t)> observer_factory;
};

struct PathSummary {
    std::size_t id = 0;
    std::size_t generation = 0;
    RunEnd end = RunEnd::BudgetExhausted;
    std::optional<ExecFault> fault;
    std::uint64_t steps = 0;
};

struct ExplorationStats {
    std::size_t paths = 0;
    std::size_t forks = 0;
    std::uint64_t steps = 0;
    SolverStats solver;
    bool budget_exhausted = false;
};

struct ExplorationResult {
    std::vector<Finding> findings;
    ExplorationStats stats;
    std::vector<PathSummary> paths;
};

/// Concolic exploration: runs the seed path, then re-runs the program on
/// solver models that flip each symbolic branch not yet explored.
ExplorationResult s2_explore(const MachineState& initial, const ProgramImage& img, const PanicXrefSet& xrefs,
                             const InvariantProfile& profile, const ExplorationConfig& config);

inline constexpr std::uint64_t stack_top = 0x7fffffff0000;
inline constexpr std::uint64_t default_exit_sentinel = 0xfffffffffffff000;

/// Synthetic stack with the exit sentinel as return address at [rsp].
void prepare_entry_stack(MachineState& state, std::uint64_t sentinel);

/// Fresh state for function-level runs: stack plus `arg_count` 64-bit symbols
/// in rdi, rsi, rdx, rcx, r8, r9. Throws AddressUnknown.
MachineState prepare_function_state(MachineState base, std::uint64_t func_addr, unsigned arg_count,
                                    const ProgramImage& img, std::uint64_t sentinel);

ExplorationResult s3_run(std::uint64_t func_addr, unsigned arg_count, const ProgramImage& img,
                         const PanicXrefSet& xrefs, const InvariantProfile& profile, ExplorationConfig config,
                         MachineState base);

/// Concrete re-run with the witness installed and forking disabled.
RunResult replay_witness(const MachineState& initial, const Bindings& witness, const ProgramImage& img,
                         const PanicXrefSet& xrefs, const InvariantProfile& profile, const ExplorationConfig& config);

}  // namespace pcx
