#include <catch_amalgamated.hpp>

#include "pcx/pcode.hpp"

using namespace pcx;

namespace {

ProgramImage image_of(std::initializer_list<std::pair<std::uint64_t, std::uint32_t>> instrs)
{
    ProgramImage img;
    for (auto [addr, len] : instrs)
        img.add(Instruction{addr, len, {PcodeOp{Opcode::COPY, Varnode{SpaceKind::Register, 0, 8},
                                                {Varnode{SpaceKind::Constant, 1, 8}}, {}}}});
    return img;
}

const Varnode r8{SpaceKind::Register, 0, 8};
const Varnode r4{SpaceKind::Register, 0, 4};
const Varnode f1{SpaceKind::Register, 0x206, 1};
const Varnode c8{SpaceKind::Constant, 1, 8};
const Varnode ram{SpaceKind::Ram, 0x1000, 8};

}  // namespace

TEST_CASE("next instruction address")
{
    auto img = image_of({{0x10, 3}, {0x13, 5}, {0x18, 1}});
    CHECK(img.next_instruction_address(0x10) == 0x13);
    CHECK(image_of({{0x10, 0}}).next_instruction_address(0x10) == std::nullopt);
    CHECK_THROWS_AS(image_of({{0x10, 0}, {0x13, 0}}).next_instruction_address(0x11), AddressUnknown);

    std::vector<std::uint64_t> walk;
    std::optional<std::uint64_t> a = img.instructions().begin()->first;
    while (a) {
        walk.push_back(*a);
        a = img.next_instruction_address(*a);
    }
    CHECK(walk == std::vector<std::uint64_t>{0x10, 0x13, 0x18});
}

TEST_CASE("fall-through uses length, else listing order")
{
    auto img = image_of({{0x10, 3}, {0x13, 0}, {0x20, 0}});
    CHECK(img.fall_through(img.at(0x10)) == 0x13);
    CHECK(img.fall_through(img.at(0x13)) == 0x20);
    CHECK(img.fall_through(img.at(0x20)) == std::nullopt);
    CHECK_THROWS_AS(img.add(Instruction{0x10, 1, {}}), DuplicateAddress);
    CHECK_THROWS_AS(img.at(0x11), AddressUnknown);
}

TEST_CASE("arity and size table")
{
    CHECK_FALSE(check_op({Opcode::COPY, r8, {c8}, {}}));
    CHECK(check_op({Opcode::COPY, std::nullopt, {c8}, {}}));
    CHECK(check_op({Opcode::COPY, r4, {c8}, {}}));
    CHECK_FALSE(check_op({Opcode::CBRANCH, std::nullopt, {ram, f1}, {}}));
    CHECK(check_op({Opcode::CBRANCH, std::nullopt, {ram}, {}}));
    CHECK(check_op({Opcode::CBRANCH, r8, {ram, f1}, {}}));
    CHECK_FALSE(check_op({Opcode::STORE, std::nullopt, {c8, r8, r8}, {}}));
    CHECK(check_op({Opcode::STORE, std::nullopt, {c8, r8}, {}}));
    CHECK_FALSE(check_op({Opcode::INT_ADD, r8, {r8, c8}, {}}));
    CHECK(check_op({Opcode::INT_ADD, r8, {r8, r4}, {}}));
    CHECK_FALSE(check_op({Opcode::INT_LEFT, r8, {r8, r4}, {}}));
    CHECK_FALSE(check_op({Opcode::INT_EQUAL, f1, {r8, c8}, {}}));
    CHECK(check_op({Opcode::INT_EQUAL, r8, {r8, c8}, {}}));
    CHECK_THROWS_AS(validate({Opcode::RETURN, std::nullopt, {}, {}}), InvalidOp);
}

TEST_CASE("opcode names")
{
    for (auto op : all_opcodes) CHECK(opcode_from_name(opcode_name(op)) == op);
    CHECK(is_high_level_opcode_name("MULTIEQUAL"));
    CHECK(is_high_level_opcode_name("INDIRECT"));
    CHECK(is_float_opcode_name("FLOAT_ADD"));
    CHECK_FALSE(opcode_from_name("FLOAT_ADD"));
    CHECK(to_string(PcodeOp{Opcode::INT_ADD, r8, {r8, c8}, {}}) ==
          "(register,0x0,8) = INT_ADD (register,0x0,8) , (const,0x1,8)");
}
