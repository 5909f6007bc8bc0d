#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "pcx/parser.hpp"

using namespace pcx;

namespace {

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::filesystem::path> fixture_listings()
{
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(PCX_FIXTURE_DIR))
        if (e.path().extension() == ".pcode") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

ParseErrorKind kind_of(std::string_view text)
{
    try {
        parse_listing(text);
    } catch (const ParseError& e) {
        return e.kind();
    }
    FAIL("expected a ParseError");
    return ParseErrorKind::BadAddress;
}

}  // namespace

TEST_CASE("varnode tokens")
{
    CHECK(parse_varnode("(register,0x0,8)") == Varnode{SpaceKind::Register, 0, 8});
    CHECK(parse_varnode("(const,0x2a,8)") == Varnode{SpaceKind::Constant, 42, 8});
    CHECK(parse_varnode("(ram,0xDEADbeef,4)") == Varnode{SpaceKind::Ram, 0xdeadbeef, 4});
    CHECK(parse_varnode("(unique,0x100,16)") == Varnode{SpaceKind::Unique, 0x100, 16});
    for (auto bad : {"(stackptr,0x8,8)", "(register, 0x0,8)", "(register,0x0,0)", "(register,0x0,17)",
                     "(register,0,8)", "(register,0x0,8", "register,0x0,8)", "(register,0x0,0x8)",
                     "(register,0x,8)", "(const,0x10000000000000000,8)", ""}) {
        INFO(bad);
        try {
            parse_varnode(bad);
            FAIL("accepted");
        } catch (const ParseError& e) {
            CHECK(e.kind() == ParseErrorKind::BadVarnode);
        }
    }
}

TEST_CASE("two-instruction listing")
{
    auto img = parse_listing(R"(
0x00201000 len=7
  (register,0x0,8) = COPY (const,0x2a,8)
  STORE (const,0x1b1,8) , (register,0x20,8) , (register,0x0,8)
0x00201007 len=2
  CBRANCH (ram,0x201010,8) , (register,0x206,1)
)");
    REQUIRE(img.size() == 2);
    const auto& a = img.at(0x201000);
    CHECK(a.length == 7);
    REQUIRE(a.ops.size() == 2);
    CHECK(a.ops[0].opcode == Opcode::COPY);
    CHECK(a.ops[0].output == Varnode{SpaceKind::Register, 0, 8});
    CHECK(a.ops[1].opcode == Opcode::STORE);
    CHECK(a.ops[1].inputs.size() == 3);
    CHECK(img.at(0x201007).ops[0].opcode == Opcode::CBRANCH);
}

TEST_CASE("error kinds and line numbers")
{
    CHECK(kind_of("0x10\n  (register,0x0,8) = MULTIEQUAL (register,0x0,8) , (register,0x8,8)\n") ==
          ParseErrorKind::RejectedHighLevelOp);
    CHECK(kind_of("0x10\n  (register,0x0,8) = FROB (register,0x0,8)\n") == ParseErrorKind::UnknownOpcode);
    CHECK(kind_of("0x10\n  CBRANCH (ram,0x10,8)\n") == ParseErrorKind::ArityMismatch);
    CHECK(kind_of("0x10\n  (register,0x0,8) = INT_ADD (register,0x0,8) , (register,0x8,4)\n") ==
          ParseErrorKind::ArityMismatch);
    CHECK(kind_of("0xzz\n  (register,0x0,8) = COPY (const,0x1,8)\n") == ParseErrorKind::BadAddress);
    CHECK(kind_of("  (register,0x0,8) = COPY (const,0x1,8)\n") == ParseErrorKind::BadAddress);
    CHECK(kind_of("0x10\n  (register,0x0,8) = COPY (bogus,0x1,8)\n") == ParseErrorKind::BadVarnode);

    try {
        parse_listing("# header\n0x10 len=1\n  (register,0x0,8) = COPY (const,0x1,8)\n\n  COPY (const,0x1,8)\n");
        FAIL("accepted");
    } catch (const ParseError& e) {
        CHECK(e.line_number() == 5);
    }
}

TEST_CASE("lenient mode skips unknown opcodes")
{
    const std::string text = "0x10\n  (register,0x0,8) = FLOAT_ADD (register,0x0,8) , (register,0x8,8)\n"
                             "  (register,0x0,8) = COPY (const,0x1,8)\n";
    ListingSource src{"u", 0, text};
    std::vector<ParseWarning> warnings;
    auto img = parse_program(std::span<const ListingSource>(&src, 1), ParseOptions{true}, &warnings);
    CHECK(img.at(0x10).ops.size() == 1);
    CHECK(warnings.size() == 1);
    CHECK_THROWS_AS(parse_program(std::span<const ListingSource>(&src, 1)), ParseError);
}

TEST_CASE("units, bases and duplicates")
{
    const std::string text = "0x1000 len=1\n  (register,0x0,8) = COPY (const,0x1,8)\n";
    std::vector<ListingSource> units{{"main", 0x200000, text}, {"libc", 0x7f0000, text}};
    auto img = parse_program(units);
    CHECK(img.contains(0x201000));
    CHECK(img.contains(0x7f1000));
    CHECK(img.load_units().size() == 2);

    std::vector<ListingSource> clash{{"a", 0x200000, text}, {"b", 0x200000, text}};
    CHECK_THROWS_AS(parse_program(clash), DuplicateAddress);
}

TEST_CASE("callother keeps its name")
{
    auto img = parse_listing("0x10 len=2\n  CALLOTHER (const,0x5,4) \"syscall\"\n");
    CHECK(img.at(0x10).ops[0].callother_name == "syscall");
    CHECK(normalize_listing(print_listing(img)) == normalize_listing("0x00000010 len=2\n CALLOTHER (const,0x5,4) \"syscall\"\n"));
}

TEST_CASE("fixtures round-trip")
{
    const auto files = fixture_listings();
    REQUIRE(files.size() >= 10);
    for (const auto& f : files) {
        INFO(f.filename().string());
        const auto text = slurp(f);
        const auto img = parse_listing(text, f.filename().string());
        CHECK(normalize_listing(print_listing(img)) == normalize_listing(text));
        const auto again = parse_listing(print_listing(img));
        CHECK(print_listing(again) == print_listing(img));
        for (const auto& [addr, instr] : img.instructions())
            for (const auto& op : instr.ops) CHECK_FALSE(check_op(op).has_value());
    }
}

TEST_CASE("parser never aborts on random input")
{
    std::mt19937_64 rng(0x5eed);
    std::vector<std::string> corpus;
    for (const auto& f : fixture_listings()) corpus.push_back(slurp(f));
    static const std::string alphabet = "0x123456789abcdefABCDEF(),= \n\t#\"registconsuqamlen_ICNTOPYBRHUSEQLAD";
    std::size_t accepted = 0, rejected = 0;
    for (int i = 0; i < 10000; ++i) {
        std::string input;
        switch (i % 3) {
            case 0: {  // raw bytes
                input.resize(rng() % 256);
                for (auto& c : input) c = static_cast<char>(rng() & 0xff);
                break;
            }
            case 1: {  // grammar-flavoured noise
                input.resize(rng() % 256);
                for (auto& c : input) c = alphabet[rng() % alphabet.size()];
                break;
            }
            default: {  // mutated fixture
                input = corpus[rng() % corpus.size()];
                const int edits = 1 + static_cast<int>(rng() % 8);
                for (int k = 0; k < edits && !input.empty(); ++k) {
                    const auto pos = rng() % input.size();
                    switch (rng() % 3) {
                        case 0: input[pos] = static_cast<char>(rng() & 0xff); break;
                        case 1: input.erase(pos, 1 + rng() % 4); break;
                        default: input.insert(pos, 1, alphabet[rng() % alphabet.size()]);
                    }
                }
            }
        }
        try {
            auto img = parse_listing(input);
            for (const auto& [addr, instr] : img.instructions())
                for (const auto& op : instr.ops) REQUIRE_FALSE(check_op(op).has_value());
            ++accepted;
        } catch (const ParseError&) {
            ++rejected;
        }
    }
    CHECK(accepted + rejected == 10000);
    CHECK(accepted > 0);
}
