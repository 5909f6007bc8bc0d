#pragma once

#include <array>
#include <bitset>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pcx/expr.hpp"
#include "pcx/pcode.hpp"

namespace pcx {

/// Byte `index` of a symbolic value.
struct SymByte {
    ExprPtr source;
    std::uint8_t index = 0;
};

/// Sparse byte-addressed store with per-byte initialized flags and optional
/// symbolic bytes. Pages are shared between copies until written.
class ByteStore {
public:
    static constexpr std::uint64_t page_size = 4096;

    ConcolicValue read(std::uint64_t addr, std::uint32_t size) const;
    void write(std::uint64_t addr, const ConcolicValue& value);
    void write_bytes(std::uint64_t addr, std::span<const std::uint8_t> bytes);

    std::uint8_t concrete_byte(std::uint64_t addr) const;
    std::optional<SymByte> symbolic_byte(std::uint64_t addr) const;

    bool is_initialized(std::uint64_t addr) const;
    bool is_initialized(std::uint64_t addr, std::uint64_t size) const;
    void mark_initialized(std::uint64_t addr, std::uint64_t size);

    /// Recomputes the concrete value of every symbolic byte.
    void reseed(const Bindings& bindings);

    /// Every live symbolic byte agrees with its expression under the bindings.
    bool consistent_with(const Bindings& bindings) const;

    void clear() { pages_.clear(); }
    bool empty() const { return pages_.empty(); }
    std::size_t page_count() const { return pages_.size(); }

    /// Byte-for-byte comparison of concrete data, flags and attached expressions.
    bool same_contents(const ByteStore& other) const;

private:
    struct Page {
        std::array<std::uint8_t, page_size> data{};
        std::bitset<page_size> initialized;
        std::map<std::uint16_t, SymByte> symbolic;
    };
    const Page* page(std::uint64_t number) const;
    Page& page_for_write(std::uint64_t number);

    std::map<std::uint64_t, std::shared_ptr<Page>> pages_;
};

struct RegisterInfo {
    std::uint64_t offset = 0;
    std::uint32_t size = 0;
};

class UnknownRegisterName : public std::runtime_error {
public:
    explicit UnknownRegisterName(std::string name);
    const std::string& name() const { return name_; }

private:
    std::string name_;
};

/// Register name -> location in the register space. Names are case-insensitive.
class RegisterMap {
public:
    /// Lines of `name 0xoffset size`; `#` comments.
    static RegisterMap parse(std::string_view text);
    static RegisterMap load(const std::filesystem::path& path);

    void add(std::string name, RegisterInfo info);
    std::optional<RegisterInfo> find(std::string_view name) const;
    RegisterInfo at(std::string_view name) const;
    std::size_t size() const { return entries_.size(); }

private:
    std::map<std::string, RegisterInfo, std::less<>> entries_;
};

enum class StreamRole { Stdin, Stdout, Stderr, Closed };

class VirtualFileSystem {
public:
    VirtualFileSystem();

    StreamRole role(int fd) const;
    void close(int fd);

    /// Standard input either replays fixed bytes or produces fresh symbolic bytes.
    void set_stdin_concrete(std::vector<std::uint8_t> bytes);
    void set_stdin_symbolic(std::size_t count);
    bool stdin_symbolic() const { return stdin_symbolic_; }
    /// Bytes still available.
    std::size_t stdin_remaining() const;
    /// Takes up to `max` concrete bytes (concrete mode).
    std::vector<std::uint8_t> take_stdin(std::size_t max);
    /// Reserves up to `max` symbolic byte slots and returns the first slot index.
    std::pair<std::size_t, std::size_t> take_symbolic_stdin(std::size_t max);

    void append(int fd, std::span<const std::uint8_t> bytes);
    const std::vector<std::uint8_t>& stdout_data() const { return stdout_; }
    const std::vector<std::uint8_t>& stderr_data() const { return stderr_; }

private:
    std::map<int, StreamRole> fds_;
    bool stdin_symbolic_ = false;
    std::vector<std::uint8_t> stdin_bytes_;
    std::size_t stdin_count_ = 0;
    std::size_t stdin_pos_ = 0;
    std::vector<std::uint8_t> stdout_;
    std::vector<std::uint8_t> stderr_;
};

struct SymbolInfo {
    std::uint32_t id = 0;
    std::string name;
    unsigned width = 0;
    std::uint64_t value = 0;
};

struct MemoryRegion {
    std::uint64_t base = 0;
    std::uint64_t size = 0;
    std::string perms;
    std::string name;
};

class ForkLimitExceeded : public std::runtime_error {
public:
    explicit ForkLimitExceeded(std::size_t depth);
};

class WriteToConstant : public std::runtime_error {
public:
    WriteToConstant();
};

/// The concolic machine. Copies are independent (copy-on-write pages).
struct MachineState {
    std::uint64_t pc = 0;
    std::shared_ptr<const RegisterMap> register_map;
    ByteStore registers;
    ByteStore memory;
    ByteStore unique;
    VirtualFileSystem vfs;
    std::vector<PathConstraint> constraints;
    // alternatives to the asserted constraint at an index (multi-way branches)
    std::map<std::size_t, std::vector<ExprPtr>> alternatives;
    std::size_t fork_depth = 0;
    std::uint64_t rng_seed = 0;
    std::vector<SymbolInfo> symbols;
    Bindings seed_model;
    std::uint64_t heap_break = 0x10000000;
    std::uint64_t mmap_next = 0x7f0000000000;
    std::uint64_t step_index = 0;
    std::vector<MemoryRegion> regions;

    MachineState() = default;
    explicit MachineState(std::shared_ptr<const RegisterMap> map) : register_map(std::move(map)) {}

    /// Fresh symbol; its concrete value comes from seed_model or the seeded generator.
    ConcolicValue make_symbol(std::string name, unsigned width);

    Bindings bindings() const;

    /// Installs a new concrete seed and recomputes every symbolic byte.
    void reseed(const Bindings& model);

    MachineState fork(std::size_t max_depth) const;

    ConcolicValue read_register(std::string_view name) const;
    void write_register(std::string_view name, const ConcolicValue& value);
    void write_register(std::string_view name, std::uint64_t value);
};

ConcolicValue read_varnode(const MachineState& state, const Varnode& vn);
void write_varnode(MachineState& state, const Varnode& vn, const ConcolicValue& value);

struct DumpSegment {
    std::uint64_t base = 0;
    std::string perms;
    std::filesystem::path file;
};

struct DumpManifest {
    std::map<std::string, std::uint64_t> registers;
    std::vector<DumpSegment> segments;
};

enum class DumpErrorKind { UnknownRegisterName, SegmentOverlap, FileUnreadable, Malformed };

class DumpError : public std::runtime_error {
public:
    DumpError(DumpErrorKind kind, std::string message);
    DumpErrorKind kind() const { return kind_; }

private:
    DumpErrorKind kind_;
};

/// Reads a JSON manifest; segment files resolve relative to its directory.
DumpManifest load_dump_manifest(const std::filesystem::path& path);
DumpManifest parse_dump_manifest(std::string_view json_text, const std::filesystem::path& base_dir = {});

void load_dump(MachineState& state, const DumpManifest& manifest, const RegisterMap& register_map);

}  // namespace pcx
