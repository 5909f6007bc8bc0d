#include "pcx/machine_state.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>
#include <json.hpp>

namespace pcx {

namespace {

std::uint64_t page_of(std::uint64_t addr) { return addr / ByteStore::page_size; }
std::uint16_t slot_of(std::uint64_t addr) { return static_cast<std::uint16_t>(addr % ByteStore::page_size); }

std::string lowercase(std::string_view s)
{
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace

const ByteStore::Page* ByteStore::page(std::uint64_t number) const
{
    auto it = pages_.find(number);
    return it == pages_.end() ? nullptr : it->second.get();
}

ByteStore::Page& ByteStore::page_for_write(std::uint64_t number)
{
    auto& slot = pages_[number];
    if (!slot) slot = std::make_shared<Page>();
    else if (slot.use_count() > 1) slot = std::make_shared<Page>(*slot);
    return *slot;
}

std::uint8_t ByteStore::concrete_byte(std::uint64_t addr) const
{
    const Page* p = page(page_of(addr));
    return p ? p->data[slot_of(addr)] : 0;
}

std::optional<SymByte> ByteStore::symbolic_byte(std::uint64_t addr) const
{
    const Page* p = page(page_of(addr));
    if (!p) return std::nullopt;
    auto it = p->symbolic.find(slot_of(addr));
    if (it == p->symbolic.end()) return std::nullopt;
    return it->second;
}

bool ByteStore::is_initialized(std::uint64_t addr) const
{
    const Page* p = page(page_of(addr));
    return p && p->initialized[slot_of(addr)];
}

bool ByteStore::is_initialized(std::uint64_t addr, std::uint64_t size) const
{
    for (std::uint64_t i = 0; i < size; ++i)
        if (!is_initialized(addr + i)) return false;
    return true;
}

void ByteStore::mark_initialized(std::uint64_t addr, std::uint64_t size)
{
    for (std::uint64_t i = 0; i < size; ++i) page_for_write(page_of(addr + i)).initialized.set(slot_of(addr + i));
}

void ByteStore::write_bytes(std::uint64_t addr, std::span<const std::uint8_t> bytes)
{
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        auto& p = page_for_write(page_of(addr + i));
        const auto s = slot_of(addr + i);
        p.data[s] = bytes[i];
        p.initialized.set(s);
        p.symbolic.erase(s);
    }
}

void ByteStore::write(std::uint64_t addr, const ConcolicValue& value)
{
    for (std::uint32_t i = 0; i < value.size; ++i) {
        auto& p = page_for_write(page_of(addr + i));
        const auto s = slot_of(addr + i);
        p.data[s] = static_cast<std::uint8_t>(value.concrete >> (8 * i));
        p.initialized.set(s);
        if (value.symbolic) p.symbolic[s] = SymByte{value.symbolic, static_cast<std::uint8_t>(i)};
        else p.symbolic.erase(s);
    }
}

ConcolicValue ByteStore::read(std::uint64_t addr, std::uint32_t size) const
{
    ConcolicValue out{0, size, nullptr};
    std::vector<std::optional<SymByte>> syms(size);
    bool any_symbolic = false;
    for (std::uint32_t i = 0; i < size; ++i) {
        out.concrete |= static_cast<u128>(concrete_byte(addr + i)) << (8 * i);
        syms[i] = symbolic_byte(addr + i);
        any_symbolic |= syms[i].has_value();
    }
    if (!any_symbolic) return out;

    // runs of bytes from one source at consecutive indices, or concrete runs
    ExprPtr result;
    std::uint32_t i = 0;
    while (i < size) {
        std::uint32_t j = i + 1;
        ExprPtr piece;
        if (syms[i]) {
            while (j < size && syms[j] && syms[j]->source == syms[i]->source &&
                   syms[j]->index == syms[i]->index + (j - i))
                ++j;
            piece = extract(syms[i]->source, syms[i]->index, (j - i) * 8);
        } else {
            while (j < size && !syms[j]) ++j;
            piece = literal(out.concrete >> (8 * i), (j - i) * 8);
        }
        result = result ? concat(piece, result) : piece;
        i = j;
    }
    out.symbolic = result;
    return out;
}

void ByteStore::reseed(const Bindings& bindings)
{
    std::unordered_map<const Expr*, u128> cache;
    for (auto& [number, ptr] : pages_) {
        if (ptr->symbolic.empty()) continue;
        auto& p = page_for_write(number);
        for (auto& [s, sb] : p.symbolic) {
            auto it = cache.find(sb.source.get());
            if (it == cache.end()) it = cache.emplace(sb.source.get(), evaluate(sb.source, bindings)).first;
            p.data[s] = static_cast<std::uint8_t>(it->second >> (8 * sb.index));
        }
    }
}

bool ByteStore::consistent_with(const Bindings& bindings) const
{
    std::unordered_map<const Expr*, u128> cache;
    for (const auto& [number, ptr] : pages_) {
        for (const auto& [s, sb] : ptr->symbolic) {
            auto it = cache.find(sb.source.get());
            if (it == cache.end()) it = cache.emplace(sb.source.get(), evaluate(sb.source, bindings)).first;
            if (ptr->data[s] != static_cast<std::uint8_t>(it->second >> (8 * sb.index))) return false;
        }
    }
    return true;
}

bool ByteStore::same_contents(const ByteStore& other) const
{
    auto nonempty = [](const std::map<std::uint64_t, std::shared_ptr<Page>>& m) {
        std::vector<std::uint64_t> keys;
        for (const auto& [k, p] : m)
            if (p->initialized.any() || !p->symbolic.empty() ||
                std::any_of(p->data.begin(), p->data.end(), [](auto b) { return b != 0; }))
                keys.push_back(k);
        return keys;
    };
    auto keys = nonempty(pages_);
    if (keys != nonempty(other.pages_)) return false;
    for (auto k : keys) {
        const Page& a = *pages_.at(k);
        const Page& b = *other.pages_.at(k);
        if (a.data != b.data || a.initialized != b.initialized || a.symbolic.size() != b.symbolic.size())
            return false;
        for (const auto& [s, sb] : a.symbolic) {
            auto it = b.symbolic.find(s);
            if (it == b.symbolic.end() || it->second.source != sb.source || it->second.index != sb.index)
                return false;
        }
    }
    return true;
}

UnknownRegisterName::UnknownRegisterName(std::string name)
    : std::runtime_error("unknown register name '" + name + "'"), name_(std::move(name))
{
}

RegisterMap RegisterMap::parse(std::string_view text)
{
    RegisterMap map;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream fields(line);
        std::string name, offset;
        std::uint32_t size = 0;
        if (!(fields >> name)) continue;
        if (!(fields >> offset >> size) || size == 0 || size > 16)
            throw std::runtime_error(fmt::format("register map line {}: expected `name 0xoffset size`", line_no));
        map.add(name, {std::stoull(offset, nullptr, 0), size});
    }
    return map;
}

RegisterMap RegisterMap::load(const std::filesystem::path& path)
{
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read register map " + path.string());
    std::stringstream buf;
    buf << f.rdbuf();
    return parse(buf.str());
}

void RegisterMap::add(std::string name, RegisterInfo info)
{
    entries_[lowercase(name)] = info;
}

std::optional<RegisterInfo> RegisterMap::find(std::string_view name) const
{
    auto it = entries_.find(lowercase(name));
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

RegisterInfo RegisterMap::at(std::string_view name) const
{
    if (auto info = find(name)) return *info;
    throw UnknownRegisterName(std::string(name));
}

VirtualFileSystem::VirtualFileSystem()
{
    fds_ = {{0, StreamRole::Stdin}, {1, StreamRole::Stdout}, {2, StreamRole::Stderr}};
}

StreamRole VirtualFileSystem::role(int fd) const
{
    auto it = fds_.find(fd);
    return it == fds_.end() ? StreamRole::Closed : it->second;
}

void VirtualFileSystem::close(int fd)
{
    fds_[fd] = StreamRole::Closed;
}

void VirtualFileSystem::set_stdin_concrete(std::vector<std::uint8_t> bytes)
{
    stdin_symbolic_ = false;
    stdin_bytes_ = std::move(bytes);
    stdin_count_ = stdin_bytes_.size();
    stdin_pos_ = 0;
}

void VirtualFileSystem::set_stdin_symbolic(std::size_t count)
{
    stdin_symbolic_ = true;
    stdin_bytes_.clear();
    stdin_count_ = count;
    stdin_pos_ = 0;
}

std::size_t VirtualFileSystem::stdin_remaining() const
{
    return stdin_count_ - stdin_pos_;
}

std::vector<std::uint8_t> VirtualFileSystem::take_stdin(std::size_t max)
{
    const auto n = std::min(max, stdin_remaining());
    std::vector<std::uint8_t> out(stdin_bytes_.begin() + static_cast<std::ptrdiff_t>(stdin_pos_),
                                  stdin_bytes_.begin() + static_cast<std::ptrdiff_t>(stdin_pos_ + n));
    stdin_pos_ += n;
    return out;
}

std::pair<std::size_t, std::size_t> VirtualFileSystem::take_symbolic_stdin(std::size_t max)
{
    const auto n = std::min(max, stdin_remaining());
    const auto first = stdin_pos_;
    stdin_pos_ += n;
    return {first, n};
}

void VirtualFileSystem::append(int fd, std::span<const std::uint8_t> bytes)
{
    auto& sink = role(fd) == StreamRole::Stderr ? stderr_ : stdout_;
    sink.insert(sink.end(), bytes.begin(), bytes.end());
}

ForkLimitExceeded::ForkLimitExceeded(std::size_t depth)
    : std::runtime_error(fmt::format("fork depth limit {} reached", depth))
{
}

WriteToConstant::WriteToConstant() : std::runtime_error("write to the constant space") {}

ConcolicValue MachineState::make_symbol(std::string name, unsigned width)
{
    const auto id = static_cast<std::uint32_t>(symbols.size());
    std::uint64_t value;
    if (auto it = seed_model.find(id); it != seed_model.end()) {
        value = it->second;
    } else {
        std::mt19937_64 gen(rng_seed ^ (0x9e3779b97f4a7c15ull * (id + 1)));
        value = gen();
    }
    value &= static_cast<std::uint64_t>(width_mask(width));
    symbols.push_back({id, std::move(name), width, value});
    return ConcolicValue{value, width / 8, symbol(id, width)};
}

Bindings MachineState::bindings() const
{
    Bindings out;
    for (const auto& s : symbols) out[s.id] = s.value;
    return out;
}

void MachineState::reseed(const Bindings& model)
{
    for (auto [id, v] : model) seed_model[id] = v;
    for (auto& s : symbols) {
        if (auto it = model.find(s.id); it != model.end())
            s.value = it->second & static_cast<std::uint64_t>(width_mask(s.width));
    }
    const auto b = bindings();
    registers.reseed(b);
    memory.reseed(b);
    unique.reseed(b);
}

MachineState MachineState::fork(std::size_t max_depth) const
{
    if (fork_depth >= max_depth) throw ForkLimitExceeded(max_depth);
    MachineState child = *this;
    ++child.fork_depth;
    return child;
}

ConcolicValue MachineState::read_register(std::string_view name) const
{
    const auto info = register_map->at(name);
    return registers.read(info.offset, info.size);
}

void MachineState::write_register(std::string_view name, const ConcolicValue& value)
{
    const auto info = register_map->at(name);
    ConcolicValue v = value;
    if (v.size != info.size) {
        v.concrete &= width_mask(info.size * 8);
        if (v.symbolic) {
            v.symbolic = v.size > info.size ? extract(v.symbolic, 0, info.size * 8)
                                             : zero_extend(v.symbolic, info.size * 8);
        }
        v.size = info.size;
    }
    registers.write(info.offset, v);
}

void MachineState::write_register(std::string_view name, std::uint64_t value)
{
    write_register(name, ConcolicValue::of(value, 8));
}

ConcolicValue read_varnode(const MachineState& state, const Varnode& vn)
{
    switch (vn.space) {
        case SpaceKind::Constant: return ConcolicValue::of(vn.offset, vn.size);
        case SpaceKind::Register: return state.registers.read(vn.offset, vn.size);
        case SpaceKind::Unique: return state.unique.read(vn.offset, vn.size);
        case SpaceKind::Ram: return state.memory.read(vn.offset, vn.size);
    }
    return {};
}

void write_varnode(MachineState& state, const Varnode& vn, const ConcolicValue& value)
{
    if (value.size != vn.size)
        throw std::invalid_argument(fmt::format("value of {} bytes written to {}", value.size, to_string(vn)));
    switch (vn.space) {
        case SpaceKind::Constant: throw WriteToConstant();
        case SpaceKind::Register: state.registers.write(vn.offset, value); break;
        case SpaceKind::Unique: state.unique.write(vn.offset, value); break;
        case SpaceKind::Ram: state.memory.write(vn.offset, value); break;
    }
}

DumpError::DumpError(DumpErrorKind kind, std::string message)
    : std::runtime_error(std::move(message)), kind_(kind)
{
}

namespace {

std::uint64_t json_u64(const nlohmann::json& v, std::string_view what)
{
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer()) return static_cast<std::uint64_t>(v.get<std::int64_t>());
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        try {
            std::size_t used = 0;
            auto value = std::stoull(s, &used, 0);
            if (used == s.size()) return value;
        } catch (const std::exception&) {
        }
    }
    throw DumpError(DumpErrorKind::Malformed, fmt::format("{}: expected an integer", what));
}

}  // namespace

DumpManifest parse_dump_manifest(std::string_view json_text, const std::filesystem::path& base_dir)
{
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw DumpError(DumpErrorKind::Malformed, std::string("manifest: ") + e.what());
    }
    if (!doc.is_object()) throw DumpError(DumpErrorKind::Malformed, "manifest: expected an object");
    DumpManifest m;
    if (doc.contains("registers")) {
        if (!doc["registers"].is_object()) throw DumpError(DumpErrorKind::Malformed, "manifest: registers must be an object");
        for (const auto& [name, value] : doc["registers"].items())
            m.registers[lowercase(name)] = json_u64(value, "register " + name);
    }
    if (doc.contains("segments")) {
        if (!doc["segments"].is_array()) throw DumpError(DumpErrorKind::Malformed, "manifest: segments must be an array");
        for (const auto& seg : doc["segments"]) {
            if (!seg.is_object() || !seg.contains("base") || !seg.contains("file") || !seg["file"].is_string())
                throw DumpError(DumpErrorKind::Malformed, "manifest: segment needs base and file");
            DumpSegment s;
            s.base = json_u64(seg["base"], "segment base");
            s.perms = seg.value("perms", std::string("rw"));
            s.file = base_dir / seg["file"].get<std::string>();
            m.segments.push_back(std::move(s));
        }
    }
    return m;
}

DumpManifest load_dump_manifest(const std::filesystem::path& path)
{
    std::ifstream f(path);
    if (!f) throw DumpError(DumpErrorKind::FileUnreadable, "cannot read " + path.string());
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_dump_manifest(buf.str(), path.parent_path());
}

void load_dump(MachineState& state, const DumpManifest& manifest, const RegisterMap& register_map)
{
    for (const auto& [name, value] : manifest.registers)
        if (!register_map.find(name))
            throw DumpError(DumpErrorKind::UnknownRegisterName, "unknown register name '" + name + "'");

    std::vector<std::vector<std::uint8_t>> contents;
    for (const auto& seg : manifest.segments) {
        std::ifstream f(seg.file, std::ios::binary);
        if (!f) throw DumpError(DumpErrorKind::FileUnreadable, "cannot read " + seg.file.string());
        contents.emplace_back(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    }
    std::vector<std::size_t> order(manifest.segments.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](auto a, auto b) { return manifest.segments[a].base < manifest.segments[b].base; });
    for (std::size_t k = 1; k < order.size(); ++k) {
        const auto& prev = manifest.segments[order[k - 1]];
        const auto& cur = manifest.segments[order[k]];
        if (!contents[order[k - 1]].empty() && !contents[order[k]].empty() &&
            prev.base + contents[order[k - 1]].size() > cur.base)
            throw DumpError(DumpErrorKind::SegmentOverlap,
                            fmt::format("segments at {:#x} and {:#x} overlap", prev.base, cur.base));
    }

    for (const auto& [name, value] : manifest.registers) {
        const auto info = register_map.at(name);
        state.registers.write(info.offset, ConcolicValue::of(value, info.size));
    }
    for (std::size_t i = 0; i < manifest.segments.size(); ++i) {
        const auto& seg = manifest.segments[i];
        state.memory.write_bytes(seg.base, contents[i]);
        state.regions.push_back({seg.base, contents[i].size(), seg.perms, seg.file.filename().string()});
    }
    if (auto rip = manifest.registers.find("rip"); rip != manifest.registers.end()) state.pc = rip->second;
}

}  // namespace pcx
