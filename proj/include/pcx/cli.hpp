#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pcx/artifacts.hpp"
#include "pcx/detection.hpp"

namespace pcx {

/// Register map shipped with the tool (x86-64, Ghidra offsets).
std::string_view default_register_map_text();

struct ListingInput {
    std::filesystem::path path;
    std::uint64_t base = 0;
};

struct FunctionStart {
    std::uint64_t address = 0;
    unsigned arg_count = 0;
};

struct RunConfig {
    std::vector<ListingInput> listings;
    SidecarPaths sidecars;
    std::optional<std::filesystem::path> dump;
    std::optional<std::filesystem::path> register_map;
    std::optional<std::uint64_t> start;
    std::optional<FunctionStart> function;
    Strategy strategy = Strategy::S1;
    bool c_invariants = false;
    std::vector<PredicateHook> predicates;
    std::uint64_t max_steps = 100000;
    std::size_t max_forks = 64;
    std::size_t max_depth = 16;
    unsigned workers = 1;
    std::uint64_t solver_timeout_ms = 5000;
    std::uint64_t seed = 0;
    bool strict = false;
    bool lenient = false;
    bool halt_on_finding = true;
    bool log = true;
    bool trace = true;
    std::filesystem::path out_dir = "pcx-out";
    std::optional<std::filesystem::path> stdin_file;
    std::size_t stdin_symbolic = 16;
    std::optional<std::uint64_t> syscall_stub;
    std::map<std::uint64_t, std::uint64_t> stubs;
};

enum class RunStatus { CleanTermination, FindingHalt, BudgetExhausted, Fault };

std::string_view run_status_name(RunStatus s);

struct RunReport {
    RunStatus status = RunStatus::CleanTermination;
    Strategy strategy = Strategy::S1;
    std::vector<Finding> findings;
    ExplorationStats stats;
    std::vector<PathSummary> paths;
    std::vector<std::string> warnings;

    int process_exit_code() const;
};

/// Deterministic JSON rendering (no timestamps).
std::string serialize_report(const RunReport& report);

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Loads every input named by `config` and runs the selected strategy.
/// Throws UsageError, ParseError, MalformedSidecar, DumpError.
RunReport execute(const RunConfig& config);

/// Parses a predicate hook `ADDR:REG:CMP:CONST[:LABEL]`.
PredicateHook parse_predicate(std::string_view text);

/// Full driver: argument parsing, interactive prompts, run, report.json.
int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace pcx
