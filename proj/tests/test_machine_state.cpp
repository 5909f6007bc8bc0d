#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>

#include "pcx/machine_state.hpp"

using namespace pcx;

namespace {

std::shared_ptr<const RegisterMap> regs()
{
    static auto map = std::make_shared<const RegisterMap>(RegisterMap::load(PCX_DEFAULT_REGISTER_MAP));
    return map;
}

Varnode vn(SpaceKind s, std::uint64_t off, std::uint32_t size) { return {s, off, size}; }

std::filesystem::path scratch_dir(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / ("pcx-ms-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

void write_file(const std::filesystem::path& p, const std::string& data)
{
    std::ofstream f(p, std::ios::binary);
    f << data;
}

}  // namespace

TEST_CASE("register map defaults")
{
    auto m = regs();
    CHECK(m->at("RAX").offset == 0x0);
    CHECK(m->at("rsp").offset == 0x20);
    CHECK(m->at("rdi").offset == 0x38);
    CHECK(m->at("r10").offset == 0x90);
    CHECK(m->at("rip").offset == 0x288);
    CHECK(m->at("zf").offset == 0x206);
    CHECK(m->at("ah").offset == 0x1);
    CHECK_THROWS_AS(m->at("xyz"), UnknownRegisterName);
}

TEST_CASE("constant varnode reads as literal")
{
    MachineState s(regs());
    auto v = read_varnode(s, vn(SpaceKind::Constant, 0x2a, 8));
    CHECK(v.concrete == 42);
    CHECK_FALSE(v.is_symbolic());
}

TEST_CASE("register sub-reads are little endian")
{
    MachineState s(regs());
    write_varnode(s, vn(SpaceKind::Register, 0, 8), ConcolicValue::of(0x1122334455667788ull, 8));
    CHECK(read_varnode(s, vn(SpaceKind::Register, 0, 4)).concrete == 0x55667788);
    CHECK(s.read_register("ah").concrete == 0x77);
    write_varnode(s, vn(SpaceKind::Register, 0, 8), ConcolicValue::of(7, 8));
    CHECK(read_varnode(s, vn(SpaceKind::Register, 0, 4)).concrete == 7);
}

TEST_CASE("ram byte addressing and defaults")
{
    MachineState s(regs());
    write_varnode(s, vn(SpaceKind::Ram, 0x1000, 4), ConcolicValue::of(0xddccbbaa, 4));
    CHECK(read_varnode(s, vn(SpaceKind::Ram, 0x1002, 1)).concrete == 0xcc);
    CHECK(read_varnode(s, vn(SpaceKind::Ram, 0x5000, 1)).concrete == 0);
    CHECK_FALSE(s.memory.is_initialized(0x5000));
    CHECK(s.memory.is_initialized(0x1000, 4));
    CHECK_FALSE(s.memory.is_initialized(0x1000, 5));
}

TEST_CASE("writes crossing a page boundary")
{
    MachineState s(regs());
    write_varnode(s, vn(SpaceKind::Ram, 0x1ffe, 4), ConcolicValue::of(0x04030201, 4));
    CHECK(read_varnode(s, vn(SpaceKind::Ram, 0x1ffe, 4)).concrete == 0x04030201);
    CHECK(read_varnode(s, vn(SpaceKind::Ram, 0x2000, 1)).concrete == 3);
}

TEST_CASE("write to constant")
{
    MachineState s(regs());
    CHECK_THROWS_AS(write_varnode(s, vn(SpaceKind::Constant, 0, 8), ConcolicValue::of(1, 8)), WriteToConstant);
}

TEST_CASE("symbolic bytes merge into extracts and concats")
{
    MachineState s(regs());
    auto x = s.make_symbol("x", 32);
    write_varnode(s, vn(SpaceKind::Ram, 0x100, 4), x);
    auto whole = read_varnode(s, vn(SpaceKind::Ram, 0x100, 4));
    CHECK(whole.symbolic == x.symbolic);

    auto mid = read_varnode(s, vn(SpaceKind::Ram, 0x101, 2));
    REQUIRE(mid.is_symbolic());
    CHECK(mid.symbolic->kind() == ExprKind::Extract);

    auto wide = read_varnode(s, vn(SpaceKind::Ram, 0x0fe, 8));
    REQUIRE(wide.is_symbolic());
    CHECK(evaluate(wide.symbolic, s.bindings()) == wide.concrete);
}

TEST_CASE("byte consistency property")
{
    std::mt19937_64 rng(99);
    for (int round = 0; round < 200; ++round) {
        MachineState s(regs());
        const std::uint32_t sizes[] = {1, 2, 4, 8, 16};
        const auto size = sizes[rng() % 5];
        const auto off = 0x3000 + rng() % 64;
        u128 value = (u128(rng()) << 64) | rng();
        write_varnode(s, vn(SpaceKind::Ram, off, size), ConcolicValue::of(value, size));
        for (std::uint32_t lo = 0; lo < size; ++lo) {
            for (std::uint32_t len = 1; lo + len <= size; ++len) {
                auto got = read_varnode(s, vn(SpaceKind::Ram, off + lo, len)).concrete;
                CHECK(got == ((value >> (8 * lo)) & width_mask(8 * len)));
            }
        }
    }
}

TEST_CASE("fork isolation property")
{
    std::mt19937_64 rng(1234);
    for (int round = 0; round < 50; ++round) {
        MachineState parent(regs());
        for (int i = 0; i < 20; ++i)
            write_varnode(parent, vn(SpaceKind::Ram, rng() % 0x4000, 8), ConcolicValue::of(rng(), 8));
        auto sym = parent.make_symbol("in", 8);
        write_varnode(parent, vn(SpaceKind::Register, 0, 1), sym);
        const MachineState snapshot = parent;

        auto child = parent.fork(8);
        CHECK(child.fork_depth == parent.fork_depth + 1);
        CHECK(child.constraints.size() == parent.constraints.size());
        for (int i = 0; i < 30; ++i) {
            const std::uint32_t size = 1u << (rng() % 4);
            write_varnode(child, vn(SpaceKind::Ram, rng() % 0x5000, size), ConcolicValue::of(rng(), size));
            write_varnode(child, vn(SpaceKind::Register, (rng() % 16) * 8, 8), ConcolicValue::of(rng(), 8));
        }
        child.reseed({{0, 0x55}});
        child.constraints.push_back({literal(1, 1), {}, true});

        CHECK(parent.memory.same_contents(snapshot.memory));
        CHECK(parent.registers.same_contents(snapshot.registers));
        CHECK(parent.symbols[0].value == snapshot.symbols[0].value);
        CHECK(parent.constraints.empty());
    }
}

TEST_CASE("fork depth limit")
{
    MachineState s(regs());
    s.fork_depth = 3;
    CHECK_THROWS_AS(s.fork(3), ForkLimitExceeded);
}

TEST_CASE("reseed recomputes derived bytes")
{
    MachineState s(regs());
    auto x = s.make_symbol("x", 8);
    auto doubled = ConcolicValue{0, 1, binary(BinaryOp::Add, x.symbolic, x.symbolic)};
    doubled.concrete = evaluate(doubled.symbolic, s.bindings());
    write_varnode(s, vn(SpaceKind::Register, 0, 1), doubled);
    s.reseed({{0, 21}});
    CHECK(s.read_register("al").concrete == 42);
    CHECK(s.registers.consistent_with(s.bindings()));
}

TEST_CASE("symbols follow the seed model then the generator")
{
    MachineState a(regs()), b(regs());
    a.rng_seed = b.rng_seed = 5;
    CHECK(a.make_symbol("p", 64).concrete == b.make_symbol("p", 64).concrete);
    MachineState c(regs());
    c.seed_model[0] = 0x2a;
    CHECK(c.make_symbol("q", 8).concrete == 0x2a);
}

TEST_CASE("vfs defaults")
{
    VirtualFileSystem vfs;
    CHECK(vfs.role(0) == StreamRole::Stdin);
    CHECK(vfs.role(1) == StreamRole::Stdout);
    CHECK(vfs.role(2) == StreamRole::Stderr);
    CHECK(vfs.role(3) == StreamRole::Closed);
}

TEST_CASE("load dump")
{
    auto dir = scratch_dir("ok");
    write_file(dir / "seg0.bin", std::string(16, '\x90'));
    write_file(dir / "m.json",
               R"({"registers":{"rip":"0x201000","rsp":"0x7fff0000"},"segments":[{"base":"0x201000","perms":"rx","file":"seg0.bin"}]})");
    MachineState s(regs());
    load_dump(s, load_dump_manifest(dir / "m.json"), *regs());
    CHECK(s.pc == 0x201000);
    CHECK(s.read_register("rsp").concrete == 0x7fff0000);
    CHECK(s.memory.is_initialized(0x201000, 16));
    CHECK_FALSE(s.memory.is_initialized(0x201010));
    CHECK(s.memory.concrete_byte(0x20100f) == 0x90);
}

TEST_CASE("dump errors")
{
    auto dir = scratch_dir("bad");
    write_file(dir / "a.bin", std::string(0x20, 'a'));
    write_file(dir / "b.bin", std::string(0x20, 'b'));
    MachineState s(regs());

    auto bad_reg = parse_dump_manifest(R"({"registers":{"xyz":"1"}})", dir);
    try {
        load_dump(s, bad_reg, *regs());
        FAIL("expected error");
    } catch (const DumpError& e) {
        CHECK(e.kind() == DumpErrorKind::UnknownRegisterName);
    }

    auto overlap = parse_dump_manifest(
        R"({"segments":[{"base":"0x1000","file":"a.bin"},{"base":"0x1010","file":"b.bin"}]})", dir);
    try {
        load_dump(s, overlap, *regs());
        FAIL("expected error");
    } catch (const DumpError& e) {
        CHECK(e.kind() == DumpErrorKind::SegmentOverlap);
    }

    auto missing = parse_dump_manifest(R"({"segments":[{"base":"0x1000","file":"nope.bin"}]})", dir);
    try {
        load_dump(s, missing, *regs());
        FAIL("expected error");
    } catch (const DumpError& e) {
        CHECK(e.kind() == DumpErrorKind::FileUnreadable);
    }
}
