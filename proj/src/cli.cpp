#include "pcx/cli.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "pcx/parser.hpp"

namespace pcx {

std::string_view run_status_name(RunStatus s)
{
    switch (s) {
        case RunStatus::CleanTermination: return "CleanTermination";
        case RunStatus::FindingHalt: return "FindingHalt";
        case RunStatus::BudgetExhausted: return "BudgetExhausted";
        case RunStatus::Fault: return "Fault";
    }
    return "?";
}

int RunReport::process_exit_code() const
{
    switch (status) {
        case RunStatus::FindingHalt: return 1;
        case RunStatus::Fault: return 3;
        default: return 0;
    }
}

namespace {

std::string_view run_end_name(RunEnd e)
{
    switch (e) {
        case RunEnd::Exited: return "exited";
        case RunEnd::Finding: return "finding";
        case RunEnd::Fault: return "fault";
        case RunEnd::BudgetExhausted: return "budget_exhausted";
    }
    return "?";
}

std::string hex(std::uint64_t v) { return fmt::format("{:#x}", v); }

std::uint64_t parse_u64(std::string_view s, std::string_view what)
{
    int base = 10;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        s.remove_prefix(2);
        base = 16;
    }
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
    if (s.empty() || ec != std::errc() || p != s.data() + s.size())
        throw UsageError(fmt::format("{}: not a number: '{}'", what, s));
    return v;
}

std::vector<std::string_view> split(std::string_view s, char sep)
{
    std::vector<std::string_view> out;
    while (true) {
        auto k = s.find(sep);
        out.push_back(s.substr(0, k));
        if (k == std::string_view::npos) break;
        s.remove_prefix(k + 1);
    }
    return out;
}

std::string read_file(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in) throw UsageError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

PredicateHook parse_predicate(std::string_view text)
{
    auto parts = split(text, ':');
    if (parts.size() < 4 || parts.size() > 5)
        throw UsageError(fmt::format("invariant '{}': expected ADDR:REG:CMP:CONST[:LABEL]", text));
    PredicateHook h;
    h.address = parse_u64(parts[0], "invariant address");
    h.register_name = std::string(parts[1]);
    auto cmp = comparator_from_name(parts[2]);
    if (!cmp) throw UsageError(fmt::format("invariant '{}': unknown comparator '{}'", text, parts[2]));
    h.comparator = *cmp;
    h.constant = parse_u64(parts[3], "invariant constant");
    if (parts.size() == 5) h.label = std::string(parts[4]);
    return h;
}

std::string serialize_report(const RunReport& r)
{
    using nlohmann::ordered_json;
    ordered_json doc;
    doc["status"] = run_status_name(r.status);
    doc["exit_code"] = r.process_exit_code();
    doc["strategy"] = strategy_name(r.strategy);
    auto findings = ordered_json::array();
    for (const auto& f : r.findings) {
        ordered_json j;
        j["strategy"] = strategy_name(f.strategy);
        j["kind"] = f.kind;
        j["bug_class"] = bug_class_name(f.kind);
        j["address"] = hex(f.address);
        j["message"] = f.message;
        j["trace_ref"] = f.trace_ref;
        if (f.witness) {
            ordered_json w = ordered_json::object();
            for (const auto& [id, v] : *f.witness) {
                auto name = f.symbol_names.find(id);
                w[name == f.symbol_names.end() ? fmt::format("sym{}", id) : name->second] = hex(v);
            }
            j["witness"] = w;
        }
        findings.push_back(j);
    }
    doc["findings"] = findings;
    ordered_json stats;
    stats["paths"] = r.stats.paths;
    stats["forks"] = r.stats.forks;
    stats["steps"] = r.stats.steps;
    stats["sat"] = r.stats.solver.sat;
    stats["unsat"] = r.stats.solver.unsat;
    stats["unknown"] = r.stats.solver.unknown;
    stats["budget_exhausted"] = r.stats.budget_exhausted;
    doc["stats"] = stats;
    auto paths = ordered_json::array();
    for (const auto& p : r.paths) {
        ordered_json j;
        j["id"] = p.id;
        j["generation"] = p.generation;
        j["end"] = run_end_name(p.end);
        j["steps"] = p.steps;
        if (p.fault)
            j["fault"] = fmt::format("{} at {:#x}/{}: {}", fault_kind_name(p.fault->kind), p.fault->address,
                                     p.fault->op_index, p.fault->detail);
        paths.push_back(j);
    }
    doc["paths"] = paths;
    doc["warnings"] = r.warnings;
    return doc.dump(2) + "\n";
}

RunReport execute(const RunConfig& config)
{
    if (config.listings.empty()) throw UsageError("no listing given");
    if (config.strategy == Strategy::S3 && !config.function) throw UsageError("--strategy s3 needs --func ADDR:ARGC");
    if (config.strategy != Strategy::S3 && !config.start && !config.dump)
        throw UsageError("need --start ADDR or --dump MANIFEST");
    if (config.function && config.function->arg_count > 6) throw UsageError("--func: at most 6 arguments");

    std::vector<ListingSource> sources;
    for (const auto& l : config.listings) sources.push_back({l.path.string(), l.base, read_file(l.path)});
    std::vector<ParseWarning> parse_warnings;
    ParseOptions popts;
    popts.lenient = config.lenient;
    const auto img = parse_program(sources, popts, &parse_warnings);

    auto sidecars = load_sidecars(config.sidecars, img);

    auto regs = std::make_shared<const RegisterMap>(config.register_map ? RegisterMap::load(*config.register_map)
                                                                        : RegisterMap::parse(default_register_map_text()));
    MachineState state(regs);
    state.rng_seed = config.seed;
    if (config.stdin_file) {
        auto bytes = read_file(*config.stdin_file);
        state.vfs.set_stdin_concrete(std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
    } else {
        state.vfs.set_stdin_symbolic(config.stdin_symbolic);
    }

    ExplorationConfig ec;
    ec.max_steps = config.max_steps;
    ec.max_forks = config.strategy == Strategy::S1 ? 0 : config.max_forks;
    ec.max_depth = config.max_depth;
    ec.workers = config.workers;
    ec.halt_on_finding = config.halt_on_finding;
    ec.strict = config.strict;
    ec.solver = SolverConfig::from_environment();
    ec.solver.timeout = std::chrono::milliseconds(config.solver_timeout_ms);
    ec.jump_tables = &sidecars.jump_tables;
    ec.syscall_stub = config.syscall_stub;
    ec.stubs = config.stubs;
    ec.exit_sentinel = default_exit_sentinel;

    if (config.log || config.trace) {
        std::filesystem::create_directories(config.out_dir);
        const auto* symbols = &sidecars.symbols;
        ec.observer_factory = [&config, symbols](std::size_t id) -> std::unique_ptr<ExecutionObserver> {
            return std::make_unique<FileRecorder>(config.out_dir, id, config.log, config.trace, symbols);
        };
    }

    InvariantProfile profile;
    if (config.c_invariants) profile.enable_c_profile();
    profile.predicates = config.predicates;

    RunReport report;
    report.strategy = config.strategy;
    for (const auto& w : parse_warnings) report.warnings.push_back(fmt::format("{}:{}: {}", w.unit, w.line, w.message));
    report.warnings.insert(report.warnings.end(), sidecars.warnings.begin(), sidecars.warnings.end());

    ExplorationResult result;
    if (config.dump) load_dump(state, load_dump_manifest(*config.dump), *regs);
    if (config.strategy == Strategy::S3) {
        result = s3_run(config.function->address, config.function->arg_count, img, sidecars.xrefs, profile, ec,
                        std::move(state));
    } else {
        if (config.start) state.pc = *config.start;
        if (!img.contains(state.pc)) throw UsageError(fmt::format("start address {:#x} is not an instruction", state.pc));
        if (!config.dump) prepare_entry_stack(state, default_exit_sentinel);
        ec.label = Strategy::S2;
        result = s2_explore(state, img, sidecars.xrefs, profile, ec);
    }

    report.findings = std::move(result.findings);
    report.stats = result.stats;
    report.paths = std::move(result.paths);
    if (!report.findings.empty())
        report.status = RunStatus::FindingHalt;
    else if (!report.paths.empty() && report.paths.front().end == RunEnd::Fault)
        report.status = RunStatus::Fault;
    else if (report.stats.budget_exhausted ||
             (!report.paths.empty() && report.paths.front().end == RunEnd::BudgetExhausted))
        report.status = RunStatus::BudgetExhausted;
    return report;
}

namespace {

std::optional<std::string> prompt(std::istream& in, std::ostream& out, std::string_view question)
{
    out << question << std::flush;
    std::string line;
    if (!std::getline(in, line)) return std::nullopt;
    auto b = line.find_first_not_of(" \t\r");
    auto e = line.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : line.substr(b, e - b + 1);
}

void interactive_setup(RunConfig& config, std::istream& in, std::ostream& out)
{
    if (config.strategy == Strategy::S3) {
        auto f = prompt(in, out, "function address and argument count (ADDR:ARGC): ");
        if (f && !f->empty()) {
            auto parts = split(*f, ':');
            if (parts.size() != 2) throw UsageError("expected ADDR:ARGC");
            config.function = FunctionStart{parse_u64(parts[0], "function"),
                                            static_cast<unsigned>(parse_u64(parts[1], "argument count"))};
        }
    } else {
        auto a = prompt(in, out, "start address: ");
        if (a && !a->empty()) config.start = parse_u64(*a, "start address");
    }
    auto c = prompt(in, out, "enable C invariants (null deref, misaligned, uninitialized read)? [y/N]: ");
    if (c && !c->empty() && (c->front() == 'y' || c->front() == 'Y')) config.c_invariants = true;
    while (auto p = prompt(in, out, "custom invariant ADDR:REG:CMP:CONST[:LABEL] (empty to finish): ")) {
        if (p->empty()) break;
        config.predicates.push_back(parse_predicate(*p));
    }
}

void load_config_file(RunConfig& config, const std::filesystem::path& path)
{
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(fmt::format("{}: {}", path.string(), e.what()));
    }
    if (!doc.is_object()) throw UsageError(path.string() + ": expected an object");
    auto str = [&](const nlohmann::json& v) {
        return v.is_string() ? v.get<std::string>() : v.dump();
    };
    if (doc.contains("invariants")) {
        for (const auto& inv : doc["invariants"]) {
            if (!inv.is_object() || !inv.contains("address") || !inv.contains("register") ||
                !inv.contains("comparator") || !inv.contains("constant"))
                throw UsageError(path.string() + ": invariant needs address, register, comparator, constant");
            PredicateHook h;
            h.address = parse_u64(str(inv["address"]), "invariant address");
            h.register_name = inv["register"].get<std::string>();
            auto cmp = comparator_from_name(inv["comparator"].get<std::string>());
            if (!cmp) throw UsageError(path.string() + ": unknown comparator");
            h.comparator = *cmp;
            h.constant = parse_u64(str(inv["constant"]), "invariant constant");
            if (inv.contains("label")) h.label = inv["label"].get<std::string>();
            config.predicates.push_back(std::move(h));
        }
    }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Concolic P-Code executor with panic and invariant detection", "pcx"};
    RunConfig config;
    std::vector<std::string> listings, bases, invariants, stubs;
    std::string start, func, strategy = "s1", syscall_stub, config_file;
    std::string xrefs, jump_tables, symbols, dump, regs, stdin_file;
    bool interactive = false, keep_going = false;

    app.add_option("listings", listings, "P-Code listing files")->required();
    app.add_option("--base", bases, "load base per listing, in order");
    app.add_option("--xrefs", xrefs, "panic xref file");
    app.add_option("--jump-tables", jump_tables, "jump table JSON");
    app.add_option("--symbols", symbols, "symbol list");
    app.add_option("--dump", dump, "memory dump manifest");
    app.add_option("--regs", regs, "register map (default: built-in x86-64)");
    app.add_option("--start", start, "entry address");
    app.add_option("--func", func, "function start ADDR:ARGC (S3)");
    app.add_option("--strategy", strategy, "s1, s2 or s3")->check(CLI::IsMember({"s1", "s2", "s3"}));
    app.add_flag("--c-invariants", config.c_invariants, "null deref, misaligned and uninitialized-read checks");
    app.add_option("--invariant", invariants, "predicate hook ADDR:REG:CMP:CONST[:LABEL]");
    app.add_option("--config", config_file, "JSON run config with custom invariants");
    app.add_option("--max-steps", config.max_steps, "op budget per path");
    app.add_option("--max-forks", config.max_forks, "alternate paths explored");
    app.add_option("--max-depth", config.max_depth, "generations of alternates");
    app.add_option("--workers", config.workers, "exploration threads")->check(CLI::Range(1u, 256u));
    app.add_option("--solver-timeout-ms", config.solver_timeout_ms, "per-query solver timeout");
    app.add_option("--seed", config.seed, "seed for symbolic input values");
    app.add_flag("--strict", config.strict, "fault on unknown syscalls");
    app.add_flag("--lenient", config.lenient, "skip unknown opcodes in listings");
    app.add_flag("--continue", keep_going, "keep running after a finding");
    app.add_flag("--interactive", interactive, "prompt for start address and invariants");
    app.add_option("--out", config.out_dir, "output directory");
    app.add_flag("--log,!--no-log", config.log, "write execution_log.txt");
    app.add_flag("--trace,!--no-trace", config.trace, "write execution_trace.txt");
    app.add_option("--stdin", stdin_file, "concrete standard input file");
    app.add_option("--stdin-symbolic", config.stdin_symbolic, "symbolic standard input bytes");
    app.add_option("--syscall-stub", syscall_stub, "address whose call performs a syscall");
    app.add_option("--stub", stubs, "ADDR=VALUE return-value stub for an unlisted callee");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        for (std::size_t k = 0; k < listings.size(); ++k)
            config.listings.push_back({listings[k], k < bases.size() ? parse_u64(bases[k], "--base") : 0});
        if (bases.size() > listings.size()) throw UsageError("more --base values than listings");
        if (!xrefs.empty()) config.sidecars.xrefs = xrefs;
        if (!jump_tables.empty()) config.sidecars.jump_tables = jump_tables;
        if (!symbols.empty()) config.sidecars.symbols = symbols;
        if (!dump.empty()) config.dump = dump;
        if (!regs.empty()) config.register_map = regs;
        if (!stdin_file.empty()) config.stdin_file = stdin_file;
        if (!start.empty()) config.start = parse_u64(start, "--start");
        if (!func.empty()) {
            auto parts = split(func, ':');
            if (parts.size() != 2) throw UsageError("--func expects ADDR:ARGC");
            config.function = FunctionStart{parse_u64(parts[0], "--func"),
                                            static_cast<unsigned>(parse_u64(parts[1], "--func argument count"))};
        }
        config.strategy = strategy == "s3" ? Strategy::S3 : strategy == "s2" ? Strategy::S2 : Strategy::S1;
        if (!config_file.empty()) load_config_file(config, config_file);
        for (const auto& i : invariants) config.predicates.push_back(parse_predicate(i));
        if (!syscall_stub.empty()) config.syscall_stub = parse_u64(syscall_stub, "--syscall-stub");
        for (const auto& s : stubs) {
            auto parts = split(s, '=');
            if (parts.size() != 2) throw UsageError("--stub expects ADDR=VALUE");
            config.stubs[parse_u64(parts[0], "--stub")] = parse_u64(parts[1], "--stub value");
        }
        config.halt_on_finding = !keep_going;
        if (interactive) interactive_setup(config, in, out);

        const auto report = execute(config);
        std::filesystem::create_directories(config.out_dir);
        const auto text = serialize_report(report);
        {
            std::ofstream f(config.out_dir / "report.json", std::ios::binary | std::ios::trunc);
            f << text;
            if (!f) throw std::runtime_error("cannot write report.json");
        }
        for (const auto& w : report.warnings) err << "warning: " << w << "\n";
        for (const auto& f : report.findings)
            out << fmt::format("[{}] {} at {:#x}: {}\n", strategy_name(f.strategy), bug_class_name(f.kind), f.address,
                               f.message);
        out << fmt::format("status: {} ({} finding{}, {} path{}, {} steps)\n", run_status_name(report.status),
                           report.findings.size(), report.findings.size() == 1 ? "" : "s", report.stats.paths,
                           report.stats.paths == 1 ? "" : "s", report.stats.steps);
        return report.process_exit_code();
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n" << app.help();
        return 2;
    } catch (const ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const DuplicateAddress& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const MalformedSidecar& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const DumpError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const AddressUnknown& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "fault: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace pcx
