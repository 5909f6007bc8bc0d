#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pcx/detection.hpp"
#include "pcx/emulator.hpp"

namespace pcx {

class MalformedSidecar : public std::runtime_error {
public:
    MalformedSidecar(std::string file, std::size_t line, std::string message);
    const std::string& file() const { return file_; }
    std::size_t line_number() const { return line_; }

private:
    std::string file_;
    std::size_t line_;
};

struct SymbolEntry {
    std::string name;
    std::optional<unsigned> arg_count;  // from an optional `argc=N` column
};

struct SymbolTable {
    std::map<std::uint64_t, SymbolEntry> entries;
    std::string source;

    const SymbolEntry* find(std::uint64_t address) const
    {
        auto it = entries.find(address);
        return it == entries.end() ? nullptr : &it->second;
    }
    std::optional<std::uint64_t> address_of(std::string_view name) const;
    std::size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }
};

/// `0xADDR kind "message"` per line; `#` comments.
PanicXrefSet parse_xrefs(std::string_view text, std::string source = {});
/// `0xADDR name [argc=N]` per line.
SymbolTable parse_symbols(std::string_view text, std::string source = {});
/// {"tables": [{"address", "index", "base", "targets": [...]}]}; numbers may be hex strings.
JumpTableMap parse_jump_tables(std::string_view json_text, const std::string& source = {});

struct SidecarPaths {
    std::optional<std::filesystem::path> xrefs;
    std::optional<std::filesystem::path> jump_tables;
    std::optional<std::filesystem::path> symbols;
};

struct Sidecars {
    PanicXrefSet xrefs;
    JumpTableMap jump_tables;
    SymbolTable symbols;
    std::vector<std::string> warnings;
};

/// Missing optional paths yield empty structures. Jump-table targets must be
/// instructions of `img`; absent xref/symbol addresses only warn.
Sidecars load_sidecars(const SidecarPaths& paths, const ProgramImage& img);

struct TraceEvent {
    enum Kind { Call, Return, SyscallEntry, FindingEmitted } kind = Call;
    std::uint64_t step = 0;
    std::uint64_t address = 0;  // call/return target, finding address
    std::uint64_t number = 0;   // syscall number
    std::vector<std::uint64_t> args;
    std::string finding_kind;
};

/// `(register,0x0,8)=0x2a`; symbolic values render as `sym3@0x2a`.
std::string render_operand(const Varnode& vn, const ConcolicValue& value);
std::string format_log_line(std::uint64_t step, std::uint64_t address, std::size_t op_index, const PcodeOp& op,
                            std::span<const ConcolicValue> inputs, const std::optional<ConcolicValue>& output);
std::string format_trace_event(const TraceEvent& event, const SymbolTable& symbols);

inline constexpr std::string_view log_file_name = "execution_log.txt";
inline constexpr std::string_view trace_file_name = "execution_trace.txt";

/// File names for a path: the seed path uses the plain names, other paths get
/// a `_path<id>` suffix.
std::filesystem::path log_path(const std::filesystem::path& dir, std::size_t path_id);
std::filesystem::path trace_path(const std::filesystem::path& dir, std::size_t path_id);

/// Observer writing execution_log.txt / execution_trace.txt. Either file may be
/// disabled (then it is not created). Write failures throw std::ios_base::failure.
class FileRecorder : public ExecutionObserver {
public:
    FileRecorder(const std::filesystem::path& dir, std::size_t path_id, bool log, bool trace,
                 const SymbolTable* symbols);

    void on_op(std::uint64_t step, std::uint64_t address, std::size_t op_index, const PcodeOp& op,
               std::span<const ConcolicValue> inputs, const std::optional<ConcolicValue>& output) override;
    void on_call(std::uint64_t step, std::uint64_t target, std::span<const std::uint64_t> args) override;
    void on_return(std::uint64_t step, std::uint64_t target) override;
    void on_syscall(std::uint64_t step, std::uint64_t number, std::span<const std::uint64_t> args) override;
    void on_finding(std::uint64_t step, const Finding& finding) override;

    const std::vector<TraceEvent>& events() const { return events_; }
    std::uint64_t log_lines() const { return log_lines_; }

private:
    void emit(TraceEvent event);

    std::optional<std::ofstream> log_;
    std::optional<std::ofstream> trace_;
    const SymbolTable* symbols_;
    std::vector<TraceEvent> events_;
    std::uint64_t log_lines_ = 0;
};

}  // namespace pcx
