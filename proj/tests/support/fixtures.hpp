#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "pcx/artifacts.hpp"
#include "pcx/detection.hpp"
#include "pcx/parser.hpp"

namespace pcx::testing {

inline std::filesystem::path fixture_path(const std::string& file) { return std::filesystem::path(PCX_FIXTURE_DIR) / file; }

inline std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::shared_ptr<const RegisterMap> x86_registers()
{
    static auto map = std::make_shared<const RegisterMap>(RegisterMap::load(PCX_DEFAULT_REGISTER_MAP));
    return map;
}

struct Fixture {
    ProgramImage image;
    Sidecars sidecars;

    /// Entry-point state: synthetic stack, 16 symbolic stdin bytes.
    MachineState entry_state(std::uint64_t pc, std::uint64_t seed = 0) const
    {
        MachineState s(x86_registers());
        s.rng_seed = seed;
        s.vfs.set_stdin_symbolic(16);
        prepare_entry_stack(s, default_exit_sentinel);
        s.pc = pc;
        return s;
    }

    ExplorationConfig config(std::size_t max_forks = 64) const
    {
        ExplorationConfig c;
        c.max_forks = max_forks;
        c.jump_tables = &sidecars.jump_tables;
        c.exit_sentinel = default_exit_sentinel;
        return c;
    }
};

/// Loads `<name>.pcode` plus whichever sidecars exist. `listing` overrides the text.
inline Fixture load_fixture(const std::string& name, std::optional<std::string> listing = std::nullopt)
{
    Fixture f;
    f.image = parse_listing(listing ? *listing : slurp(fixture_path(name + ".pcode")), name + ".pcode");
    SidecarPaths paths;
    auto opt = [&](const std::string& ext) -> std::optional<std::filesystem::path> {
        auto p = fixture_path(name + ext);
        if (std::filesystem::exists(p)) return p;
        return std::nullopt;
    };
    paths.xrefs = opt(".xrefs");
    paths.symbols = opt(".symbols");
    paths.jump_tables = opt(".jump_table.json");
    f.sidecars = load_sidecars(paths, f.image);
    return f;
}

/// sym_branch with the stdin guard compared against `guard` instead of 0x2a.
inline std::string sym_branch_with_guard(std::uint8_t guard)
{
    auto text = slurp(fixture_path("sym_branch.pcode"));
    const std::string from = "INT_EQUAL (register,0x38,1) , (const,0x2a,1)";
    auto pos = text.find(from);
    if (pos == std::string::npos) throw std::logic_error("sym_branch guard not found");
    char buf[64];
    std::snprintf(buf, sizeof buf, "INT_EQUAL (register,0x38,1) , (const,0x%x,1)", guard);
    text.replace(pos, from.size(), buf);
    return text;
}

inline constexpr std::uint64_t go_entry = 0x201000;
inline constexpr std::uint64_t c_entry = 0x401000;

}  // namespace pcx::testing
