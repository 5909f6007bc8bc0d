#include <catch_amalgamated.hpp>

#include <filesystem>

#include <fmt/format.h>

#include "support/fixtures.hpp"

using namespace pcx;
using namespace pcx::testing;

namespace {

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag)
        : path(std::filesystem::temp_directory_path() / ("pcx_artifacts_" + tag))
    {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("xref sidecar")
{
    auto x = parse_xrefs("# panics\n0x2034c5 nil_map_assignment \"add an entry to a nil map\"\n\n", "x.txt");
    REQUIRE(x.size() == 1);
    CHECK(x.find(0x2034c5)->kind == "nil_map_assignment");
    CHECK(x.find(0x2034c5)->message == "add an entry to a nil map");
    CHECK(x.source == "x.txt");
    CHECK(parse_xrefs("0x10 k \"with # hash\"\n").find(0x10)->message == "with # hash");

    try {
        parse_xrefs("0x10 a \"m\"\n0x10 b \"m\"\n", "x.txt");
        FAIL("accepted duplicate");
    } catch (const MalformedSidecar& e) {
        CHECK(e.file() == "x.txt");
        CHECK(e.line_number() == 2);
    }
    CHECK_THROWS_AS(parse_xrefs("2034c5 k \"m\"\n"), MalformedSidecar);
    CHECK_THROWS_AS(parse_xrefs("0x10\n"), MalformedSidecar);
    CHECK_THROWS_AS(parse_xrefs("0x10 k unquoted\n"), MalformedSidecar);
}

TEST_CASE("symbol sidecar")
{
    auto s = parse_symbols("0x201000 main.main\n0x201100 main.nilMapPanic argc=0\n");
    CHECK(s.size() == 2);
    CHECK(s.find(0x201000)->name == "main.main");
    CHECK_FALSE(s.find(0x201000)->arg_count);
    CHECK(s.find(0x201100)->arg_count == 0u);
    CHECK(s.address_of("main.main") == 0x201000);
    CHECK_THROWS_AS(parse_symbols("0x10 a\n0x10 b\n"), MalformedSidecar);
    CHECK_THROWS_AS(parse_symbols("0x10 a extra\n"), MalformedSidecar);
    CHECK_THROWS_AS(parse_symbols("0x10 a argc=7\n"), MalformedSidecar);
}

TEST_CASE("jump tables are validated against the image")
{
    auto img = parse_listing(slurp(fixture_path("switch.pcode")));
    auto tables = parse_jump_tables(slurp(fixture_path("switch.jump_table.json")));
    REQUIRE(tables.count(0x201017));
    CHECK(tables.at(0x201017).targets == std::vector<std::uint64_t>{0x201030, 0x201040, 0x201050});
    CHECK(tables.at(0x201017).index_source == "rdi");

    TempDir dir("jt");
    auto bad = dir.path / "bad.json";
    std::ofstream(bad) << R"({"tables": [{"address": "0x201017", "targets": ["0x201030", "0x999999"]}]})";
    SidecarPaths paths;
    paths.jump_tables = bad;
    CHECK_THROWS_AS(load_sidecars(paths, img), MalformedSidecar);

    std::ofstream(dir.path / "junk.json") << "{ nope";
    paths.jump_tables = dir.path / "junk.json";
    CHECK_THROWS_AS(load_sidecars(paths, img), MalformedSidecar);
}

TEST_CASE("sidecar loading")
{
    auto img = parse_listing(slurp(fixture_path("nil_map.pcode")));
    auto none = load_sidecars({}, img);
    CHECK(none.xrefs.empty());
    CHECK(none.jump_tables.empty());
    CHECK(none.symbols.empty());

    SidecarPaths paths;
    paths.xrefs = fixture_path("nil_map.xrefs");
    paths.symbols = fixture_path("nil_map.symbols");
    auto s = load_sidecars(paths, img);
    CHECK(s.xrefs.size() == 1);
    CHECK(s.warnings.empty());

    TempDir dir("warn");
    std::ofstream(dir.path / "x.txt") << "0x999 k \"m\"\n";
    paths.xrefs = dir.path / "x.txt";
    CHECK(load_sidecars(paths, img).warnings.size() == 1);

    paths.xrefs = dir.path / "missing.txt";
    CHECK_THROWS_AS(load_sidecars(paths, img), MalformedSidecar);
}

TEST_CASE("log line format")
{
    PcodeOp copy{Opcode::COPY, Varnode{SpaceKind::Register, 0, 8}, {Varnode{SpaceKind::Constant, 0x2a, 8}}, {}};
    const ConcolicValue in[] = {ConcolicValue::of(0x2a, 8)};
    CHECK(format_log_line(0, 0x201000, 0, copy, in, ConcolicValue::of(0x2a, 8)) ==
          "STEP 0 0x201000/0 COPY (const,0x2a,8) -> (register,0x0,8)=0x2a");

    const ConcolicValue sym{0x2a, 1, symbol(3, 8)};
    PcodeOp zext{Opcode::INT_ZEXT, Varnode{SpaceKind::Register, 0x38, 8}, {Varnode{SpaceKind::Unique, 0x100, 1}}, {}};
    const ConcolicValue zin[] = {sym};
    CHECK(format_log_line(7, 0x201010, 1, zext, zin, ConcolicValue{0x2a, 8, zero_extend(sym.symbolic, 64)}) ==
          "STEP 7 0x201010/1 INT_ZEXT (unique,0x100,1)=sym3@0x2a -> (register,0x38,8)=sym3@0x2a");

    PcodeOp sc{Opcode::CALLOTHER, std::nullopt, {Varnode{SpaceKind::Constant, 5, 4}}, "syscall"};
    const ConcolicValue scin[] = {ConcolicValue::of(5, 4)};
    CHECK(format_log_line(9, 0x10, 0, sc, scin, std::nullopt) == "STEP 9 0x10/0 CALLOTHER (const,0x5,4) \"syscall\"");
}

TEST_CASE("trace event format")
{
    auto syms = parse_symbols("0x201100 main.nilMapPanic argc=0\n0x201200 main.f\n");
    TraceEvent call{TraceEvent::Call, 3, 0x201100, 0, {1, 2, 3, 4, 5, 6}, {}};
    CHECK(format_trace_event(call, syms) == "CALL 0x201100 main.nilMapPanic args=[]");
    call.address = 0x300000;
    CHECK(format_trace_event(call, syms) == "CALL 0x300000 ? args=[0x1, 0x2, 0x3, 0x4, 0x5, 0x6]");
    call.address = 0x201200;
    CHECK(format_trace_event(call, syms) == "CALL 0x201200 main.f args=[0x1, 0x2, 0x3, 0x4, 0x5, 0x6]");
    TraceEvent fin{TraceEvent::FindingEmitted, 4, 0x2034c5, 0, {}, "nil_map_assignment"};
    CHECK(format_trace_event(fin, syms) == "FINDING nil_map_assignment 0x2034c5");
    TraceEvent ret{TraceEvent::Return, 5, 0x201025, 0, {}, {}};
    CHECK(format_trace_event(ret, syms) == "RETURN 0x201025");
    TraceEvent sc{TraceEvent::SyscallEntry, 6, 0, 60, {0, 0, 0, 0, 0, 0}, {}};
    CHECK(format_trace_event(sc, syms) == "SYSCALL 60 args=[0x0, 0x0, 0x0, 0x0, 0x0, 0x0]");
}

TEST_CASE("recorder files follow the execution")
{
    TempDir dir("rec");
    auto fx = load_fixture("clean");
    auto state = fx.entry_state(go_entry);
    RunResult r;
    std::vector<TraceEvent> events;
    std::uint64_t logged = 0;
    {
        FileRecorder rec(dir.path, 0, true, true, &fx.sidecars.symbols);
        EmulatorContext ctx;
        ctx.observer = &rec;
        ctx.exit_sentinel = default_exit_sentinel;
        r = run(state, fx.image, ctx, 10000);
        events = rec.events();
        logged = rec.log_lines();
    }
    REQUIRE(r.end == RunEnd::Exited);

    const auto log = slurp(dir.path / "execution_log.txt");
    const auto trace = slurp(dir.path / "execution_trace.txt");
    CHECK(line_count(log) == r.steps);
    CHECK(logged == r.steps);
    CHECK(trace.find("CALL 0x201100 main.double args=[") != std::string::npos);
    CHECK(trace.find("RETURN 0x20101e") != std::string::npos);
    CHECK(trace.find("SYSCALL 1 ") != std::string::npos);
    CHECK(line_count(trace) == events.size());

    // trace steps are strictly increasing and each names a logged step
    std::uint64_t prev = 0;
    bool first = true;
    for (const auto& e : events) {
        if (!first) CHECK(e.step > prev);
        CHECK(e.step < r.steps);
        CHECK(log.find(fmt::format("STEP {} ", e.step)) != std::string::npos);
        prev = e.step;
        first = false;
    }
}

TEST_CASE("disabled outputs are not created")
{
    TempDir dir("off");
    {
        FileRecorder rec(dir.path, 0, false, true, nullptr);
    }
    CHECK_FALSE(std::filesystem::exists(dir.path / "execution_log.txt"));
    CHECK(std::filesystem::exists(dir.path / "execution_trace.txt"));
    CHECK(log_path(dir.path, 3).filename() == "execution_log_path3.txt");
    CHECK(trace_path(dir.path, 0).filename() == "execution_trace.txt");
    CHECK_THROWS(FileRecorder(dir.path / "no" / "such", 0, true, false, nullptr));
}
