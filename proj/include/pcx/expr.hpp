#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pcx {

using u128 = unsigned __int128;

constexpr u128 width_mask(unsigned width)
{
    return width >= 128 ? ~u128(0) : ((u128(1) << width) - 1);
}

/// Widths the expression layer accepts: 1 (predicates) and whole bytes up to 128.
constexpr bool is_valid_width(unsigned width)
{
    return width == 1 || (width >= 8 && width <= 128 && width % 8 == 0);
}

std::string to_hex(u128 value);

enum class ExprKind : std::uint8_t {
    Literal,
    Symbol,
    Unary,
    Binary,
    Extract,
    Concat,
    ZeroExtend,
    SignExtend,
    IfThenElse,
};

enum class UnaryOp : std::uint8_t { Not, Neg, Popcount };

enum class BinaryOp : std::uint8_t {
    Add, Sub, Mul, UDiv, SDiv, URem, SRem,
    And, Or, Xor,
    Shl, LShr, AShr,
    Eq, Ne, Ult, Ule, Slt, Sle,
    Carry, SCarry, SBorrow,
};

std::string_view unary_op_name(UnaryOp op);
std::string_view binary_op_name(BinaryOp op);

/// Ops whose result is a single bit.
constexpr bool is_predicate(BinaryOp op)
{
    return op >= BinaryOp::Eq;
}

constexpr bool is_shift(BinaryOp op)
{
    return op == BinaryOp::Shl || op == BinaryOp::LShr || op == BinaryOp::AShr;
}

class Expr;
using ExprPtr = std::shared_ptr<const Expr>;

/// Immutable bitvector expression node. Build with the free functions below;
/// they validate widths and fold literal-only operands.
class Expr {
public:
    ExprKind kind() const noexcept { return kind_; }
    unsigned width() const noexcept { return width_; }
    bool is_literal() const noexcept { return kind_ == ExprKind::Literal; }

    u128 value() const noexcept { return value_; }              // Literal
    std::uint32_t symbol_id() const noexcept { return aux_; }   // Symbol
    unsigned low_byte() const noexcept { return aux_; }         // Extract
    UnaryOp unary_op() const noexcept { return static_cast<UnaryOp>(op_); }
    BinaryOp binary_op() const noexcept { return static_cast<BinaryOp>(op_); }

    std::size_t arity() const noexcept { return arity_; }
    const ExprPtr& child(std::size_t i) const noexcept { return children_[i]; }

    /// Smallest symbol id this expression depends on.
    std::optional<std::uint32_t> min_symbol() const noexcept
    {
        if (min_symbol_ < 0) return std::nullopt;
        return static_cast<std::uint32_t>(min_symbol_);
    }

    struct Init {
        ExprKind kind;
        unsigned width;
        std::uint8_t op = 0;
        std::uint32_t aux = 0;
        u128 value = 0;
        std::array<ExprPtr, 3> children{};
        std::uint8_t arity = 0;
    };
    explicit Expr(Init init);

private:
    ExprKind kind_;
    std::uint8_t op_;
    std::uint8_t arity_;
    unsigned width_;
    std::uint32_t aux_;
    std::int64_t min_symbol_ = -1;
    u128 value_;
    std::array<ExprPtr, 3> children_;
};

ExprPtr literal(u128 value, unsigned width);
ExprPtr symbol(std::uint32_t id, unsigned width);
ExprPtr unary(UnaryOp op, ExprPtr operand);
ExprPtr binary(BinaryOp op, ExprPtr lhs, ExprPtr rhs);
ExprPtr extract(ExprPtr operand, unsigned low_byte, unsigned width);
ExprPtr concat(ExprPtr high, ExprPtr low);
ExprPtr zero_extend(ExprPtr operand, unsigned width);
ExprPtr sign_extend(ExprPtr operand, unsigned width);
ExprPtr ite(ExprPtr cond, ExprPtr then_expr, ExprPtr else_expr);

/// Width-1 negation.
ExprPtr logical_not(ExprPtr operand);

/// S-expression rendering for diagnostics.
std::string to_string(const ExprPtr& expr);

using Bindings = std::map<std::uint32_t, std::uint64_t>;

class UnboundSymbol : public std::runtime_error {
public:
    explicit UnboundSymbol(std::uint32_t id);
    std::uint32_t id() const { return id_; }

private:
    std::uint32_t id_;
};

/// Every node reachable from the roots, children before parents, each once.
std::vector<const Expr*> topological_order(std::span<const ExprPtr> roots);

/// Distinct symbols (id -> width) reachable from the roots.
std::map<std::uint32_t, unsigned> collect_symbols(std::span<const ExprPtr> roots);

/// A flattened, topologically ordered form of one or more expressions that can
/// be evaluated many times with different symbol values.
class ExprProgram {
public:
    struct Slot {
        std::uint32_t id;
        unsigned width;
    };

    explicit ExprProgram(std::span<const ExprPtr> roots);

    const std::vector<Slot>& symbols() const { return slots_; }
    std::size_t root_count() const { return roots_.size(); }

    /// `values[i]` is the value of `symbols()[i]`. Results land in `scratch`.
    void run(std::span<const std::uint64_t> values, std::vector<u128>& scratch) const;
    u128 root_value(std::size_t i, const std::vector<u128>& scratch) const { return scratch[roots_[i]]; }

    /// Convenience: evaluates all roots under the bindings.
    std::vector<u128> evaluate(const Bindings& bindings) const;

private:
    struct Node {
        ExprKind kind;
        std::uint8_t op;
        unsigned width;
        unsigned aux;
        u128 value;
        std::array<std::uint32_t, 3> in;
    };
    std::vector<Node> nodes_;
    std::vector<Slot> slots_;
    std::vector<std::uint32_t> roots_;
};

/// Value of `expr` under the bindings, masked to its width.
u128 evaluate(const ExprPtr& expr, const Bindings& bindings);

/// Little-endian bytes of the expression's value (width-1 results occupy one byte).
std::vector<std::uint8_t> eval_concrete(const ExprPtr& expr, const Bindings& bindings);

namespace detail {
// Reference semantics shared by folding and evaluation.
u128 apply_unary(UnaryOp op, u128 a, unsigned width);
u128 apply_binary(BinaryOp op, u128 a, u128 b, unsigned width, unsigned rhs_width);
}  // namespace detail

/// Concrete little-endian bytes paired with an optional symbolic expression of
/// width size*8.
struct ConcolicValue {
    u128 concrete = 0;
    std::uint32_t size = 0;
    ExprPtr symbolic;

    static ConcolicValue of(u128 value, std::uint32_t size)
    {
        return {value & width_mask(size * 8), size, nullptr};
    }

    bool is_symbolic() const { return symbolic != nullptr; }
    std::uint64_t low64() const { return static_cast<std::uint64_t>(concrete); }
    std::vector<std::uint8_t> bytes() const;

    /// The symbolic expression, or a literal of the concrete value.
    ExprPtr as_expr() const;
};

struct Origin {
    std::uint64_t address = 0;
    std::size_t op_index = 0;
    friend bool operator==(const Origin&, const Origin&) = default;
};

/// A branch decision: `expr` (width 1) evaluated to `taken` on this path.
struct PathConstraint {
    ExprPtr expr;
    Origin origin;
    bool taken = true;

    /// Width-1 expression that must equal 1 for the constraint to hold.
    ExprPtr asserted() const { return taken ? expr : logical_not(expr); }
};

}  // namespace pcx
