#include <catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "pcx/solver.hpp"

using namespace pcx;

namespace {

ExprPtr eq(ExprPtr a, u128 v)
{
    auto w = a->width();
    return binary(BinaryOp::Eq, std::move(a), literal(v, w));
}

PathConstraint holds(ExprPtr e)
{
    return PathConstraint{std::move(e), {}, true};
}

// Random expression over a small symbol pool, total symbolic bits <= 16.
ExprPtr random_expr(std::mt19937_64& rng, int depth)
{
    std::uniform_int_distribution<int> pick(0, 9);
    if (depth == 0 || pick(rng) < 3) {
        if (pick(rng) < 5) return symbol(static_cast<std::uint32_t>(rng() % 2), 8);
        return literal(rng() & 0xff, 8);
    }
    static constexpr BinaryOp ops[] = {BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::And,
                                       BinaryOp::Or,  BinaryOp::Xor, BinaryOp::Shl, BinaryOp::LShr,
                                       BinaryOp::AShr, BinaryOp::UDiv, BinaryOp::SRem};
    auto op = ops[rng() % std::size(ops)];
    return binary(op, random_expr(rng, depth - 1), random_expr(rng, depth - 1));
}

ExprPtr random_predicate(std::mt19937_64& rng)
{
    static constexpr BinaryOp preds[] = {BinaryOp::Eq, BinaryOp::Ne, BinaryOp::Ult, BinaryOp::Sle,
                                         BinaryOp::Carry, BinaryOp::SBorrow};
    return binary(preds[rng() % std::size(preds)], random_expr(rng, 3), random_expr(rng, 3));
}

}  // namespace

TEST_CASE("single equality is sat")
{
    EnumerationSolver solver;
    auto x = symbol(0, 8);
    std::vector<PathConstraint> cs{holds(eq(x, 3))};
    auto v = check_sat(solver, cs);
    REQUIRE(is_sat(v));
    CHECK(std::get<Sat>(v).model.at(0) == 3);
}

TEST_CASE("contradiction is unsat")
{
    EnumerationSolver solver;
    auto x = symbol(0, 8);
    std::vector<PathConstraint> cs{holds(eq(x, 3)), holds(eq(x, 4))};
    CHECK(is_unsat(check_sat(solver, cs)));
    CHECK(solver.stats().unsat == 1);
}

TEST_CASE("x*2 == 10 over 8 bits")
{
    EnumerationSolver solver;
    auto x = symbol(0, 8);
    std::vector<PathConstraint> cs{holds(eq(binary(BinaryOp::Mul, x, literal(2, 8)), 10))};
    auto v = check_sat(solver, cs);
    REQUIRE(is_sat(v));
    auto val = std::get<Sat>(v).model.at(0);
    CHECK((val == 5 || val == 133));
    CHECK(model_check(cs, std::get<Sat>(v).model));
}

TEST_CASE("model_check")
{
    auto x = symbol(0, 8);
    std::vector<PathConstraint> cs{holds(eq(x, 3))};
    CHECK(model_check(cs, {{0, 3}}));
    CHECK_FALSE(model_check(cs, {{0, 4}}));
    CHECK_THROWS_AS(model_check(cs, {}), UnboundSymbol);
}

TEST_CASE("negated constraint")
{
    EnumerationSolver solver;
    auto x = symbol(0, 8);
    std::vector<PathConstraint> cs{{eq(x, 7), {}, false}};
    auto v = check_sat(solver, cs, eq(x, 7));
    CHECK(is_unsat(v));
}

TEST_CASE("demanded bits follow extracts of wide symbols")
{
    auto arg = symbol(0, 64);
    auto low = extract(arg, 0, 8);
    std::vector<ExprPtr> roots{binary(BinaryOp::Ult, low, literal(0xc8, 8))};
    auto d = demanded_bits(roots);
    CHECK(d.at(0) == 0xff);

    EnumerationSolver solver;
    auto v = solver.check_assertions({logical_not(roots[0])}, {{0, 0x1234567800000005ull}});
    REQUIRE(is_sat(v));
    auto m = std::get<Sat>(v).model.at(0);
    CHECK((m & 0xff) >= 0xc8);
    CHECK((m & ~0xffull) == 0x1234567800000000ull);
}

TEST_CASE("independent clusters are enumerated separately")
{
    // 4 bytes of symbols, 32 bits total but clusters of 8
    std::vector<ExprPtr> as;
    for (std::uint32_t i = 0; i < 4; ++i) as.push_back(eq(symbol(i, 8), 0x40 + i));
    EnumerationSolver solver;
    auto v = solver.check_assertions(as);
    REQUIRE(is_sat(v));
    for (std::uint32_t i = 0; i < 4; ++i) CHECK(std::get<Sat>(v).model.at(i) == 0x40 + i);
}

TEST_CASE("too many demanded bits yields unknown")
{
    auto x = symbol(0, 32);
    EnumerationSolver solver;
    auto v = solver.check_assertions({eq(binary(BinaryOp::Mul, x, x), 0x12345679)});
    CHECK(is_unknown(v));
}

TEST_CASE("random queries: sat models pass model_check, never unknown")
{
    std::mt19937_64 rng(20261015);
    EnumerationSolver solver;
    int sat = 0;
    for (int i = 0; i < 300; ++i) {
        std::vector<PathConstraint> cs;
        const int n = 1 + static_cast<int>(rng() % 3);
        for (int k = 0; k < n; ++k) cs.push_back({random_predicate(rng), {}, (rng() & 1) != 0});
        auto v = check_sat(solver, cs);
        REQUIRE_FALSE(is_unknown(v));
        if (auto* s = std::get_if<Sat>(&v)) {
            ++sat;
            CHECK(model_check(cs, s->model));
        }
    }
    CHECK(sat > 0);
}

TEST_CASE("smtlib rendering")
{
    auto x = symbol(0, 8);
    std::vector<ExprPtr> as{eq(binary(BinaryOp::Add, x, literal(1, 8)), 0)};
    auto text = to_smtlib(as);
    CHECK(text.find("(declare-const s0 (_ BitVec 8))") != std::string::npos);
    CHECK(text.find("(bvadd s0 #x01)") != std::string::npos);
    CHECK(text.find("(check-sat)") != std::string::npos);
}

TEST_CASE("external solver agrees with enumeration when available")
{
    const char* candidates[] = {"/usr/local/bin/z3", "/usr/bin/z3"};
    std::string exe;
    for (auto c : candidates)
        if (std::filesystem::exists(c)) exe = c;
    if (exe.empty()) SKIP("no z3 binary");

    SmtLibSolver smt(exe, std::chrono::milliseconds(5000));
    EnumerationSolver en;
    std::mt19937_64 rng(7);
    for (int i = 0; i < 40; ++i) {
        std::vector<PathConstraint> cs{{random_predicate(rng), {}, true}, {random_predicate(rng), {}, false}};
        auto a = check_sat(smt, cs);
        auto b = check_sat(en, cs);
        REQUIRE_FALSE(is_unknown(a));
        CHECK(is_sat(a) == is_sat(b));
        if (auto* s = std::get_if<Sat>(&a)) CHECK(model_check(cs, s->model));
    }
}
