#include "pcx/artifacts.hpp"

#include <charconv>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace pcx {

MalformedSidecar::MalformedSidecar(std::string file, std::size_t line, std::string message)
    : std::runtime_error(fmt::format("{}:{}: {}", file.empty() ? "<sidecar>" : file, line, message)),
      file_(std::move(file)),
      line_(line)
{
}

std::optional<std::uint64_t> SymbolTable::address_of(std::string_view name) const
{
    for (const auto& [addr, e] : entries)
        if (e.name == name) return addr;
    return std::nullopt;
}

namespace {

std::string_view trim(std::string_view s)
{
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::optional<std::uint64_t> parse_number(std::string_view s)
{
    int base = 10;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        s.remove_prefix(2);
        base = 16;
    }
    if (s.empty()) return std::nullopt;
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
    if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
    return v;
}

// Splits off the first whitespace-delimited word.
std::string_view next_word(std::string_view& s)
{
    s = trim(s);
    std::size_t n = 0;
    while (n < s.size() && !std::isspace(static_cast<unsigned char>(s[n]))) ++n;
    auto w = s.substr(0, n);
    s.remove_prefix(n);
    s = trim(s);
    return w;
}

template <typename F>
void for_each_line(std::string_view text, F&& f)
{
    std::size_t lineno = 0;
    while (!text.empty()) {
        auto nl = text.find('\n');
        auto line = text.substr(0, nl);
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        ++lineno;
        line = trim(line);
        if (line.empty() || line.front() == '#') continue;
        f(lineno, line);
    }
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MalformedSidecar(path.string(), 0, "cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

PanicXrefSet parse_xrefs(std::string_view text, std::string source)
{
    PanicXrefSet set;
    set.source = source;
    for_each_line(text, [&](std::size_t lineno, std::string_view line) {
        auto addr_tok = next_word(line);
        auto addr = parse_number(addr_tok);
        if (!addr || addr_tok.substr(0, 2) != "0x") throw MalformedSidecar(source, lineno, "expected a hex address");
        auto kind = next_word(line);
        if (kind.empty()) throw MalformedSidecar(source, lineno, "missing kind label");
        std::string message;
        if (!line.empty()) {
            if (line.size() < 2 || line.front() != '"' || line.back() != '"')
                throw MalformedSidecar(source, lineno, "message must be double-quoted");
            message = std::string(line.substr(1, line.size() - 2));
        }
        if (!set.entries.emplace(*addr, PanicXref{std::string(kind), message}).second)
            throw MalformedSidecar(source, lineno, fmt::format("duplicate address {:#x}", *addr));
    });
    return set;
}

SymbolTable parse_symbols(std::string_view text, std::string source)
{
    SymbolTable table;
    table.source = source;
    for_each_line(text, [&](std::size_t lineno, std::string_view line) {
        auto addr = parse_number(next_word(line));
        if (!addr) throw MalformedSidecar(source, lineno, "expected an address");
        SymbolEntry e;
        e.name = std::string(next_word(line));
        if (e.name.empty()) throw MalformedSidecar(source, lineno, "missing symbol name");
        if (!line.empty()) {
            auto extra = next_word(line);
            std::optional<std::uint64_t> n;
            if (extra.substr(0, 5) == "argc=") n = parse_number(extra.substr(5));
            if (!n || *n > 6 || !line.empty()) throw MalformedSidecar(source, lineno, "trailing text after name");
            e.arg_count = static_cast<unsigned>(*n);
        }
        if (!table.entries.emplace(*addr, std::move(e)).second)
            throw MalformedSidecar(source, lineno, fmt::format("duplicate address {:#x}", *addr));
    });
    return table;
}

JumpTableMap parse_jump_tables(std::string_view json_text, const std::string& source)
{
    using nlohmann::json;
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw MalformedSidecar(source, 0, e.what());
    }
    auto num = [&](const json& v, const char* what) -> std::uint64_t {
        if (v.is_number_unsigned()) return v.get<std::uint64_t>();
        if (v.is_number_integer()) return static_cast<std::uint64_t>(v.get<std::int64_t>());
        if (v.is_string())
            if (auto n = parse_number(v.get<std::string>())) return *n;
        throw MalformedSidecar(source, 0, fmt::format("{}: expected a number", what));
    };
    if (!doc.is_object() || !doc.contains("tables") || !doc["tables"].is_array())
        throw MalformedSidecar(source, 0, "expected an object with a \"tables\" array");
    JumpTableMap out;
    for (const auto& t : doc["tables"]) {
        if (!t.is_object() || !t.contains("address") || !t.contains("targets") || !t["targets"].is_array())
            throw MalformedSidecar(source, 0, "table needs address and targets");
        JumpTable table;
        const auto addr = num(t["address"], "address");
        table.index_source = t.value("index", std::string("rax"));
        if (t.contains("base")) table.index_base = static_cast<std::int64_t>(num(t["base"], "base"));
        for (const auto& target : t["targets"]) table.targets.push_back(num(target, "target"));
        if (!out.emplace(addr, std::move(table)).second)
            throw MalformedSidecar(source, 0, fmt::format("duplicate table at {:#x}", addr));
    }
    return out;
}

Sidecars load_sidecars(const SidecarPaths& paths, const ProgramImage& img)
{
    Sidecars s;
    if (paths.xrefs) {
        s.xrefs = parse_xrefs(read_file(*paths.xrefs), paths.xrefs->string());
        for (const auto& [addr, x] : s.xrefs.entries)
            if (!img.contains(addr)) s.warnings.push_back(fmt::format("xref {:#x} is not an instruction", addr));
    }
    if (paths.jump_tables) {
        const auto name = paths.jump_tables->string();
        s.jump_tables = parse_jump_tables(read_file(*paths.jump_tables), name);
        for (const auto& [addr, t] : s.jump_tables) {
            if (!img.contains(addr))
                throw MalformedSidecar(name, 0, fmt::format("table address {:#x} is not an instruction", addr));
            for (auto target : t.targets)
                if (!img.contains(target))
                    throw MalformedSidecar(name, 0, fmt::format("target {:#x} is not an instruction", target));
        }
    }
    if (paths.symbols) {
        s.symbols = parse_symbols(read_file(*paths.symbols), paths.symbols->string());
        for (const auto& [addr, e] : s.symbols.entries)
            if (!img.contains(addr)) s.warnings.push_back(fmt::format("symbol {} at {:#x} is not an instruction", e.name, addr));
    }
    return s;
}

std::string render_operand(const Varnode& vn, const ConcolicValue& value)
{
    if (vn.is_constant()) return to_string(vn);
    if (value.symbolic)
        if (auto id = value.symbolic->min_symbol()) return fmt::format("{}=sym{}@{}", to_string(vn), *id, to_hex(value.concrete));
    return fmt::format("{}={}", to_string(vn), to_hex(value.concrete));
}

std::string format_log_line(std::uint64_t step, std::uint64_t address, std::size_t op_index, const PcodeOp& op,
                            std::span<const ConcolicValue> inputs, const std::optional<ConcolicValue>& output)
{
    std::string line = fmt::format("STEP {} {:#x}/{} {}", step, address, op_index, opcode_name(op.opcode));
    for (std::size_t k = 0; k < op.inputs.size(); ++k) {
        line += ' ';
        line += k < inputs.size() ? render_operand(op.inputs[k], inputs[k]) : to_string(op.inputs[k]);
    }
    if (!op.callother_name.empty()) line += fmt::format(" \"{}\"", op.callother_name);
    if (op.output) {
        line += " -> ";
        line += output ? render_operand(*op.output, *output) : to_string(*op.output);
    }
    return line;
}

namespace {

std::string hex_list(std::span<const std::uint64_t> values)
{
    std::string out = "[";
    for (std::size_t k = 0; k < values.size(); ++k) out += fmt::format("{}{:#x}", k ? ", " : "", values[k]);
    return out + "]";
}

}  // namespace

std::string format_trace_event(const TraceEvent& event, const SymbolTable& symbols)
{
    switch (event.kind) {
        case TraceEvent::Call: {
            const auto* sym = symbols.find(event.address);
            std::span<const std::uint64_t> args = event.args;
            if (sym && sym->arg_count) args = args.first(std::min<std::size_t>(*sym->arg_count, args.size()));
            return fmt::format("CALL {:#x} {} args={}", event.address, sym ? sym->name : "?", hex_list(args));
        }
        case TraceEvent::Return: return fmt::format("RETURN {:#x}", event.address);
        case TraceEvent::SyscallEntry: return fmt::format("SYSCALL {} args={}", event.number, hex_list(event.args));
        case TraceEvent::FindingEmitted: return fmt::format("FINDING {} {:#x}", event.finding_kind, event.address);
    }
    return {};
}

std::filesystem::path log_path(const std::filesystem::path& dir, std::size_t path_id)
{
    return dir / (path_id == 0 ? std::string(log_file_name) : fmt::format("execution_log_path{}.txt", path_id));
}

std::filesystem::path trace_path(const std::filesystem::path& dir, std::size_t path_id)
{
    return dir / (path_id == 0 ? std::string(trace_file_name) : fmt::format("execution_trace_path{}.txt", path_id));
}

namespace {

std::ofstream open_sink(const std::filesystem::path& p)
{
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw std::ios_base::failure("cannot open " + p.string());
    out.exceptions(std::ios::badbit | std::ios::failbit);
    return out;
}

}  // namespace

FileRecorder::FileRecorder(const std::filesystem::path& dir, std::size_t path_id, bool log, bool trace,
                           const SymbolTable* symbols)
    : symbols_(symbols)
{
    if (log) log_.emplace(open_sink(log_path(dir, path_id)));
    if (trace) trace_.emplace(open_sink(trace_path(dir, path_id)));
}

void FileRecorder::on_op(std::uint64_t step, std::uint64_t address, std::size_t op_index, const PcodeOp& op,
                         std::span<const ConcolicValue> inputs, const std::optional<ConcolicValue>& output)
{
    ++log_lines_;
    if (log_) *log_ << format_log_line(step, address, op_index, op, inputs, output) << '\n';
}

void FileRecorder::emit(TraceEvent event)
{
    if (trace_) {
        static const SymbolTable none;
        *trace_ << format_trace_event(event, symbols_ ? *symbols_ : none) << '\n';
    }
    events_.push_back(std::move(event));
}

void FileRecorder::on_call(std::uint64_t step, std::uint64_t target, std::span<const std::uint64_t> args)
{
    TraceEvent e;
    e.kind = TraceEvent::Call;
    e.step = step;
    e.address = target;
    e.args.assign(args.begin(), args.end());
    emit(std::move(e));
}

void FileRecorder::on_return(std::uint64_t step, std::uint64_t target)
{
    TraceEvent e;
    e.kind = TraceEvent::Return;
    e.step = step;
    e.address = target;
    emit(std::move(e));
}

void FileRecorder::on_syscall(std::uint64_t step, std::uint64_t number, std::span<const std::uint64_t> args)
{
    TraceEvent e;
    e.kind = TraceEvent::SyscallEntry;
    e.step = step;
    e.number = number;
    e.args.assign(args.begin(), args.end());
    emit(std::move(e));
}

void FileRecorder::on_finding(std::uint64_t step, const Finding& finding)
{
    TraceEvent e;
    e.kind = TraceEvent::FindingEmitted;
    e.step = step;
    e.address = finding.address;
    e.finding_kind = finding.kind;
    emit(std::move(e));
}

}  // namespace pcx
