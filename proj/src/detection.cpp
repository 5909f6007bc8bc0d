#include "pcx/detection.hpp"

#include <algorithm>
#include <deque>
#include <set>
#include <thread>

#include <fmt/format.h>

namespace pcx {

std::string_view strategy_name(Strategy s)
{
    switch (s) {
        case Strategy::S1: return "S1";
        case Strategy::S2: return "S2";
        case Strategy::S3: return "S3";
        case Strategy::CProfile: return "CProfile";
    }
    return "?";
}

std::string bug_class_name(std::string_view kind)
{
    static const std::map<std::string, std::string, std::less<>> names = {
        {"nil_pointer_dereference", "Nil Pointer Dereference"},
        {"index_out_of_range", "Index Out Of Range"},
        {"nil_map_assignment", "Nil Map Assignment"},
        {"too_large_channel_creation", "Too Large Channel Creation"},
        {"negative_shift", "Negative Shift"},
        {"null_deref", "NullDeref"},
        {"misaligned_access", "MisalignedAccess"},
        {"uninitialized_read", "UninitializedRead"},
        {"table_index_overflow", "Table Index Overflow"},
        {"division_by_zero", "Division By Zero"},
    };
    if (auto it = names.find(kind); it != names.end()) return it->second;
    std::string out;
    bool start = true;
    for (char c : kind) {
        if (c == '_') {
            out += ' ';
            start = true;
        } else {
            out += start ? static_cast<char>(std::toupper(static_cast<unsigned char>(c))) : c;
            start = false;
        }
    }
    return out;
}

std::optional<Comparator> comparator_from_name(std::string_view name)
{
    static const std::pair<std::string_view, Comparator> table[] = {
        {"eq", Comparator::Eq},   {"==", Comparator::Eq},   {"ne", Comparator::Ne},   {"!=", Comparator::Ne},
        {"ult", Comparator::Ult}, {"<", Comparator::Ult},   {"ule", Comparator::Ule}, {"<=", Comparator::Ule},
        {"ugt", Comparator::Ugt}, {">", Comparator::Ugt},   {"uge", Comparator::Uge}, {">=", Comparator::Uge},
        {"slt", Comparator::Slt}, {"sle", Comparator::Sle}, {"sgt", Comparator::Sgt}, {"sge", Comparator::Sge},
    };
    for (auto [n, c] : table)
        if (n == name) return c;
    return std::nullopt;
}

std::string_view comparator_name(Comparator c)
{
    switch (c) {
        case Comparator::Eq: return "eq";
        case Comparator::Ne: return "ne";
        case Comparator::Ult: return "ult";
        case Comparator::Ule: return "ule";
        case Comparator::Ugt: return "ugt";
        case Comparator::Uge: return "uge";
        case Comparator::Slt: return "slt";
        case Comparator::Sle: return "sle";
        case Comparator::Sgt: return "sgt";
        case Comparator::Sge: return "sge";
    }
    return "?";
}

namespace {

std::map<std::uint32_t, std::string> symbol_names(const MachineState& state)
{
    std::map<std::uint32_t, std::string> out;
    for (const auto& s : state.symbols) out[s.id] = s.name;
    return out;
}

ExprPtr compare(Comparator c, ExprPtr a, ExprPtr b)
{
    switch (c) {
        case Comparator::Eq: return binary(BinaryOp::Eq, a, b);
        case Comparator::Ne: return binary(BinaryOp::Ne, a, b);
        case Comparator::Ult: return binary(BinaryOp::Ult, a, b);
        case Comparator::Ule: return binary(BinaryOp::Ule, a, b);
        case Comparator::Ugt: return binary(BinaryOp::Ult, b, a);
        case Comparator::Uge: return binary(BinaryOp::Ule, b, a);
        case Comparator::Slt: return binary(BinaryOp::Slt, a, b);
        case Comparator::Sle: return binary(BinaryOp::Sle, a, b);
        case Comparator::Sgt: return binary(BinaryOp::Slt, b, a);
        case Comparator::Sge: return binary(BinaryOp::Sle, b, a);
    }
    return nullptr;
}

}  // namespace

std::optional<Finding> s1_check(const MachineState& state, const PanicXrefSet& xrefs)
{
    const auto* x = xrefs.find(state.pc);
    if (!x) return std::nullopt;
    Finding f;
    f.strategy = Strategy::S1;
    f.kind = x->kind;
    f.address = state.pc;
    f.message = x->message;
    return f;
}

std::optional<Finding> c_invariant_check(const MachineState& state, std::uint64_t address, const MemoryEvent& event,
                                         const InvariantProfile& profile, Solver* solver)
{
    const auto ptr = event.address.low64();
    const char* access = event.kind == MemoryEvent::Load ? "load" : "store";
    auto finding = [&](std::string kind, std::string message) {
        Finding f;
        f.strategy = Strategy::CProfile;
        f.kind = std::move(kind);
        f.address = address;
        f.message = std::move(message);
        return f;
    };

    if (profile.null_deref) {
        if (ptr == 0) return finding("null_deref", fmt::format("{} of {} bytes through a null pointer", access, event.size));
        if (event.address.is_symbolic() && solver) {
            auto is_null = binary(BinaryOp::Eq, event.address.symbolic, literal(0, event.address.size * 8));
            auto v = solver->check(state.constraints, is_null, state.bindings());
            if (auto* sat = std::get_if<Sat>(&v)) {
                auto f = finding("null_deref", fmt::format("{} address can be null", access));
                f.witness = sat->model;
                f.symbol_names = symbol_names(state);
                return f;
            }
        }
    }
    if (event.kind != MemoryEvent::Load) return std::nullopt;
    if (profile.misaligned && event.size > 1 && ptr % event.size != 0)
        return finding("misaligned_access",
                       fmt::format("load of {} bytes at {:#x} is not {}-byte aligned", event.size, ptr, event.size));
    if (profile.uninitialized_read && !state.memory.is_initialized(ptr, event.size))
        return finding("uninitialized_read", fmt::format("load of {} bytes at {:#x} reads uninitialized memory",
                                                         event.size, ptr));
    return std::nullopt;
}

std::optional<Finding> predicate_check(const MachineState& state, const PredicateHook& hook, Solver* solver)
{
    if (state.pc != hook.address) return std::nullopt;
    const auto value = state.read_register(hook.register_name);
    const unsigned bits = value.size * 8;
    auto pred = compare(hook.comparator, value.as_expr(), literal(hook.constant, bits));
    Finding f;
    f.strategy = Strategy::CProfile;
    f.kind = hook.label;
    f.address = hook.address;
    f.message = fmt::format("{} {} {:#x}", hook.register_name, comparator_name(hook.comparator), hook.constant);

    if (evaluate(pred, state.bindings()) == 1) return f;
    if (value.is_symbolic() && solver) {
        auto v = solver->check(state.constraints, pred, state.bindings());
        if (auto* sat = std::get_if<Sat>(&v)) {
            f.witness = sat->model;
            f.symbol_names = symbol_names(state);
            return f;
        }
    }
    return std::nullopt;
}

DetectionHooks::DetectionHooks(const PanicXrefSet& xrefs, const InvariantProfile& profile, Solver* solver)
    : xrefs_(xrefs), profile_(profile), solver_(solver)
{
}

std::optional<Finding> DetectionHooks::before_instruction(const MachineState& state, const Instruction&)
{
    if (profile_.panic_xrefs)
        if (auto f = s1_check(state, xrefs_)) return f;
    for (const auto& hook : profile_.predicates)
        if (auto f = predicate_check(state, hook, solver_)) return f;
    return std::nullopt;
}

std::optional<Finding> DetectionHooks::on_memory_access(const MachineState& state, const Instruction& instr,
                                                        std::size_t, const MemoryEvent& event)
{
    if (!profile_.c_profile()) return std::nullopt;
    return c_invariant_check(state, instr.address, event, profile_, solver_);
}

namespace {

struct WorkItem {
    MachineState state;  // initial state reseeded for this path
    std::size_t bound = 0;
    std::size_t generation = 0;
    std::size_t id = 0;
};

struct Candidate {
    Bindings model;
    std::size_t bound = 0;
};

struct PathOutcome {
    RunResult run;
    std::vector<Candidate> candidates;
    SolverStats solver;
    bool depth_capped = false;
    std::vector<std::string> keys;  // prefix keys queried
};

std::string prefix_key(const std::vector<PathConstraint>& cs, std::size_t i, std::size_t alt)
{
    std::string key;
    for (std::size_t k = 0; k < i; ++k)
        key += fmt::format("{:x}/{}{};", cs[k].origin.address, cs[k].origin.op_index, cs[k].taken ? 't' : 'f');
    key += fmt::format("{:x}/{}#{}", cs[i].origin.address, cs[i].origin.op_index, alt);
    return key;
}

EmulatorContext make_context(const ExplorationConfig& config, ExecutionHooks* hooks, ExecutionObserver* observer,
                             bool explore)
{
    EmulatorContext ctx;
    ctx.jump_tables = config.jump_tables;
    ctx.hooks = hooks;
    ctx.observer = observer;
    ctx.strict = config.strict;
    ctx.explore = explore;
    ctx.halt_on_finding = config.halt_on_finding;
    ctx.syscall_stub = config.syscall_stub;
    ctx.stubs = config.stubs;
    ctx.exit_sentinel = config.exit_sentinel;
    return ctx;
}

PathOutcome run_path(const WorkItem& item, const ProgramImage& img, const PanicXrefSet& xrefs,
                     const InvariantProfile& profile, const ExplorationConfig& config, std::size_t fork_budget,
                     const std::set<std::string>& visited)
{
    PathOutcome out;
    auto solver = make_solver(config.solver);
    DetectionHooks hooks(xrefs, profile, solver.get());
    std::unique_ptr<ExecutionObserver> observer;
    if (config.observer_factory) observer = config.observer_factory(item.id);

    MachineState state = item.state;
    auto ctx = make_context(config, &hooks, observer.get(), fork_budget > 0);
    ctx.division_findings = profile.c_profile();
    ctx.label = item.id == 0 ? Strategy::S1 : config.label;
    out.run = run(state, img, ctx, config.max_steps);

    const auto names = symbol_names(state);
    const auto seed = state.bindings();
    for (auto& f : out.run.findings) {
        if (f.strategy == Strategy::S1 && item.id != 0) f.strategy = config.label;
        if (f.strategy == Strategy::S1 && config.label == Strategy::S3) f.strategy = Strategy::S3;
        if (!f.witness && !state.symbols.empty()) {
            f.witness = seed;
            f.symbol_names = names;
        }
    }

    if (fork_budget == 0) {
        out.solver = solver->stats();
        return out;
    }
    if (item.generation >= config.max_depth) {
        out.depth_capped = !state.constraints.empty();
        out.solver = solver->stats();
        return out;
    }

    const auto& cs = state.constraints;
    std::vector<ExprPtr> prefix;
    for (std::size_t k = 0; k < item.bound && k < cs.size(); ++k) prefix.push_back(cs[k].asserted());
    for (std::size_t i = item.bound; i < cs.size() && out.candidates.size() < fork_budget; ++i) {
        std::vector<ExprPtr> flips;
        if (auto alt = state.alternatives.find(i); alt != state.alternatives.end()) flips = alt->second;
        else flips.push_back(logical_not(cs[i].asserted()));
        for (std::size_t a = 0; a < flips.size() && out.candidates.size() < fork_budget; ++a) {
            auto key = prefix_key(cs, i, a);
            if (visited.count(key)) continue;
            out.keys.push_back(key);
            auto query = prefix;
            query.push_back(flips[a]);
            auto v = solver->check_assertions(query, seed);
            if (auto* sat = std::get_if<Sat>(&v)) out.candidates.push_back({sat->model, i + 1});
        }
        prefix.push_back(cs[i].asserted());
    }
    out.solver = solver->stats();
    return out;
}

}  // namespace

ExplorationResult s2_explore(const MachineState& initial, const ProgramImage& img, const PanicXrefSet& xrefs,
                             const InvariantProfile& profile, const ExplorationConfig& config)
{
    ExplorationResult result;
    std::deque<WorkItem> queue;
    queue.push_back({initial, 0, 0, 0});
    std::set<std::string> visited;
    std::set<std::pair<std::string, std::uint64_t>> seen_findings;
    std::size_t next_id = 1;
    const unsigned workers = std::max(1u, config.workers);

    while (!queue.empty()) {
        std::vector<WorkItem> batch;
        while (!queue.empty() && batch.size() < workers) {
            batch.push_back(std::move(queue.front()));
            queue.pop_front();
        }
        const std::size_t budget = config.max_forks - std::min(config.max_forks, result.stats.forks);
        std::vector<PathOutcome> outcomes(batch.size());
        if (batch.size() == 1) {
            outcomes[0] = run_path(batch[0], img, xrefs, profile, config, budget, visited);
        } else {
            std::vector<std::thread> threads;
            for (std::size_t b = 0; b < batch.size(); ++b)
                threads.emplace_back([&, b] {
                    outcomes[b] = run_path(batch[b], img, xrefs, profile, config, budget, visited);
                });
            for (auto& t : threads) t.join();
        }

        for (std::size_t b = 0; b < batch.size(); ++b) {
            auto& item = batch[b];
            auto& o = outcomes[b];
            ++result.stats.paths;
            result.stats.steps += o.run.steps;
            result.stats.solver += o.solver;
            if (o.run.end == RunEnd::BudgetExhausted || o.depth_capped) result.stats.budget_exhausted = true;
            result.paths.push_back({item.id, item.generation, o.run.end, o.run.fault, o.run.steps});
            for (auto& f : o.run.findings)
                if (seen_findings.insert({f.kind, f.address}).second) result.findings.push_back(std::move(f));
            for (auto& k : o.keys) visited.insert(k);
            for (auto& c : o.candidates) {
                if (result.stats.forks >= config.max_forks) {
                    result.stats.budget_exhausted = true;
                    break;
                }
                MachineState child;
                try {
                    child = item.state.fork(config.max_depth);
                } catch (const ForkLimitExceeded&) {
                    result.stats.budget_exhausted = true;
                    break;
                }
                child.reseed(c.model);
                ++result.stats.forks;
                queue.push_back({std::move(child), c.bound, item.generation + 1, next_id++});
            }
        }
    }
    return result;
}

void prepare_entry_stack(MachineState& state, std::uint64_t sentinel)
{
    const std::uint64_t size = 0x100000;
    state.regions.push_back({stack_top - size, size, "rw", "stack"});
    const auto rsp = stack_top - 8;
    state.write_register("rsp", rsp);
    state.memory.write(rsp, ConcolicValue::of(sentinel, 8));
}

MachineState prepare_function_state(MachineState base, std::uint64_t func_addr, unsigned arg_count,
                                    const ProgramImage& img, std::uint64_t sentinel)
{
    if (!img.contains(func_addr)) throw AddressUnknown(func_addr);
    if (arg_count > 6) throw std::invalid_argument("at most 6 register arguments");
    static constexpr const char* arg_regs[] = {"rdi", "rsi", "rdx", "rcx", "r8", "r9"};
    prepare_entry_stack(base, sentinel);
    for (unsigned k = 0; k < arg_count; ++k) base.write_register(arg_regs[k], base.make_symbol(fmt::format("arg{}", k), 64));
    base.pc = func_addr;
    return base;
}

ExplorationResult s3_run(std::uint64_t func_addr, unsigned arg_count, const ProgramImage& img,
                         const PanicXrefSet& xrefs, const InvariantProfile& profile, ExplorationConfig config,
                         MachineState base)
{
    if (!config.exit_sentinel) config.exit_sentinel = default_exit_sentinel;
    auto state = prepare_function_state(std::move(base), func_addr, arg_count, img, *config.exit_sentinel);
    config.label = Strategy::S3;
    return s2_explore(state, img, xrefs, profile, config);
}

RunResult replay_witness(const MachineState& initial, const Bindings& witness, const ProgramImage& img,
                         const PanicXrefSet& xrefs, const InvariantProfile& profile, const ExplorationConfig& config)
{
    MachineState state = initial;
    state.reseed(witness);
    auto solver = make_solver(config.solver);
    DetectionHooks hooks(xrefs, profile, solver.get());
    auto ctx = make_context(config, &hooks, nullptr, false);
    ctx.division_findings = profile.c_profile();
    return run(state, img, ctx, config.max_steps);
}

}  // namespace pcx
