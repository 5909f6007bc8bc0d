#include "pcx/expr.hpp"

#include <algorithm>
#include <bit>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>

namespace pcx {

std::string to_hex(u128 value)
{
    const auto hi = static_cast<std::uint64_t>(value >> 64);
    const auto lo = static_cast<std::uint64_t>(value);
    if (hi == 0) return fmt::format("{:#x}", lo);
    return fmt::format("{:#x}{:016x}", hi, lo);
}

std::string_view unary_op_name(UnaryOp op)
{
    switch (op) {
        case UnaryOp::Not: return "not";
        case UnaryOp::Neg: return "neg";
        case UnaryOp::Popcount: return "popcount";
    }
    return "?";
}

std::string_view binary_op_name(BinaryOp op)
{
    switch (op) {
        case BinaryOp::Add: return "add";
        case BinaryOp::Sub: return "sub";
        case BinaryOp::Mul: return "mul";
        case BinaryOp::UDiv: return "udiv";
        case BinaryOp::SDiv: return "sdiv";
        case BinaryOp::URem: return "urem";
        case BinaryOp::SRem: return "srem";
        case BinaryOp::And: return "and";
        case BinaryOp::Or: return "or";
        case BinaryOp::Xor: return "xor";
        case BinaryOp::Shl: return "shl";
        case BinaryOp::LShr: return "lshr";
        case BinaryOp::AShr: return "ashr";
        case BinaryOp::Eq: return "eq";
        case BinaryOp::Ne: return "ne";
        case BinaryOp::Ult: return "ult";
        case BinaryOp::Ule: return "ule";
        case BinaryOp::Slt: return "slt";
        case BinaryOp::Sle: return "sle";
        case BinaryOp::Carry: return "carry";
        case BinaryOp::SCarry: return "scarry";
        case BinaryOp::SBorrow: return "sborrow";
    }
    return "?";
}

Expr::Expr(Init init)
    : kind_(init.kind),
      op_(init.op),
      arity_(init.arity),
      width_(init.width),
      aux_(init.aux),
      value_(init.value),
      children_(std::move(init.children))
{
    if (kind_ == ExprKind::Symbol) min_symbol_ = aux_;
    for (std::size_t i = 0; i < arity_; ++i) {
        auto m = children_[i]->min_symbol_;
        if (m >= 0 && (min_symbol_ < 0 || m < min_symbol_)) min_symbol_ = m;
    }
}

namespace detail {

namespace {

bool sign_bit(u128 a, unsigned width)
{
    return ((a >> (width - 1)) & 1) != 0;
}

__int128 as_signed(u128 a, unsigned width)
{
    if (width >= 128) return static_cast<__int128>(a);
    if (sign_bit(a, width)) return static_cast<__int128>(a) - (static_cast<__int128>(1) << width);
    return static_cast<__int128>(a);
}

}  // namespace

u128 apply_unary(UnaryOp op, u128 a, unsigned width)
{
    const auto m = width_mask(width);
    switch (op) {
        case UnaryOp::Not: return ~a & m;
        case UnaryOp::Neg: return (~a + 1) & m;
        case UnaryOp::Popcount: {
            auto lo = static_cast<std::uint64_t>(a & m);
            auto hi = static_cast<std::uint64_t>((a & m) >> 64);
            return static_cast<u128>(std::popcount(lo) + std::popcount(hi));
        }
    }
    return 0;
}

u128 apply_binary(BinaryOp op, u128 a, u128 b, unsigned width, unsigned rhs_width)
{
    const auto m = width_mask(width);
    a &= m;
    b &= width_mask(rhs_width);
    switch (op) {
        case BinaryOp::Add: return (a + b) & m;
        case BinaryOp::Sub: return (a - b) & m;
        case BinaryOp::Mul: return (a * b) & m;
        case BinaryOp::UDiv: return b == 0 ? m : a / b;
        case BinaryOp::URem: return b == 0 ? a : a % b;
        case BinaryOp::SDiv: {
            auto sa = as_signed(a, width);
            if (b == 0) return sa < 0 ? u128(1) : m;
            return static_cast<u128>(sa / as_signed(b, width)) & m;
        }
        case BinaryOp::SRem: {
            if (b == 0) return a;
            return static_cast<u128>(as_signed(a, width) % as_signed(b, width)) & m;
        }
        case BinaryOp::And: return a & b;
        case BinaryOp::Or: return a | b;
        case BinaryOp::Xor: return a ^ b;
        case BinaryOp::Shl: return b >= width ? 0 : (a << static_cast<unsigned>(b)) & m;
        case BinaryOp::LShr: return b >= width ? 0 : a >> static_cast<unsigned>(b);
        case BinaryOp::AShr: {
            if (b >= width) return sign_bit(a, width) ? m : 0;
            auto shifted = a >> static_cast<unsigned>(b);
            if (sign_bit(a, width)) shifted |= m & ~(m >> static_cast<unsigned>(b));
            return shifted;
        }
        case BinaryOp::Eq: return a == b;
        case BinaryOp::Ne: return a != b;
        case BinaryOp::Ult: return a < b;
        case BinaryOp::Ule: return a <= b;
        case BinaryOp::Slt: return as_signed(a, width) < as_signed(b, width);
        case BinaryOp::Sle: return as_signed(a, width) <= as_signed(b, width);
        case BinaryOp::Carry: return ((a + b) & m) < a;
        case BinaryOp::SCarry: {
            auto r = (a + b) & m;
            return sign_bit((a ^ r) & (b ^ r), width);
        }
        case BinaryOp::SBorrow: {
            auto r = (a - b) & m;
            return sign_bit((a ^ b) & (a ^ r), width);
        }
    }
    return 0;
}

}  // namespace detail

namespace {

void require(bool cond, std::string_view what)
{
    if (!cond) throw std::invalid_argument(std::string(what));
}

void require_width(unsigned width)
{
    if (!is_valid_width(width))
        throw std::invalid_argument(fmt::format("invalid bitvector width {}", width));
}

ExprPtr make(Expr::Init init)
{
    return std::make_shared<const Expr>(std::move(init));
}

u128 sign_extend_value(u128 v, unsigned from, unsigned to)
{
    if (from < to && ((v >> (from - 1)) & 1)) v |= width_mask(to) & ~width_mask(from);
    return v;
}

}  // namespace

ExprPtr literal(u128 value, unsigned width)
{
    require_width(width);
    return make({ExprKind::Literal, width, 0, 0, value & width_mask(width)});
}

ExprPtr symbol(std::uint32_t id, unsigned width)
{
    require_width(width);
    require(width <= 64, "symbols are at most 64 bits wide");
    return make({ExprKind::Symbol, width, 0, id});
}

ExprPtr unary(UnaryOp op, ExprPtr operand)
{
    require(operand != nullptr, "null operand");
    const auto w = operand->width();
    require(op == UnaryOp::Not || w <= 64, "128-bit expressions support logical operators only");
    if (operand->is_literal()) return literal(detail::apply_unary(op, operand->value(), w), w);
    Expr::Init init{ExprKind::Unary, w, static_cast<std::uint8_t>(op)};
    init.children[0] = std::move(operand);
    init.arity = 1;
    return make(std::move(init));
}

ExprPtr binary(BinaryOp op, ExprPtr lhs, ExprPtr rhs)
{
    require(lhs && rhs, "null operand");
    const auto w = lhs->width();
    if (!is_shift(op))
        require(w == rhs->width(), fmt::format("{}: operand widths differ ({} vs {})",
                                               binary_op_name(op), w, rhs->width()));
    if (w > 64 || rhs->width() > 64)
        require(op == BinaryOp::And || op == BinaryOp::Or || op == BinaryOp::Xor ||
                    op == BinaryOp::Eq || op == BinaryOp::Ne,
                "128-bit expressions support logical operators only");
    const unsigned out_width = is_predicate(op) ? 1 : w;
    if (lhs->is_literal() && rhs->is_literal())
        return literal(detail::apply_binary(op, lhs->value(), rhs->value(), w, rhs->width()), out_width);
    Expr::Init init{ExprKind::Binary, out_width, static_cast<std::uint8_t>(op)};
    init.children[0] = std::move(lhs);
    init.children[1] = std::move(rhs);
    init.arity = 2;
    return make(std::move(init));
}

ExprPtr extract(ExprPtr operand, unsigned low_byte, unsigned width)
{
    require(operand != nullptr, "null operand");
    require_width(width);
    require(low_byte * 8 + width <= operand->width(), "extract out of range");
    if (low_byte == 0 && width == operand->width()) return operand;
    if (operand->is_literal())
        return literal(operand->value() >> (low_byte * 8), width);
    Expr::Init init{ExprKind::Extract, width, 0, low_byte};
    init.children[0] = std::move(operand);
    init.arity = 1;
    return make(std::move(init));
}

ExprPtr concat(ExprPtr high, ExprPtr low)
{
    require(high && low, "null operand");
    const auto w = high->width() + low->width();
    require_width(w);
    if (high->is_literal() && low->is_literal())
        return literal((high->value() << low->width()) | low->value(), w);
    Expr::Init init{ExprKind::Concat, w};
    init.children[0] = std::move(high);
    init.children[1] = std::move(low);
    init.arity = 2;
    return make(std::move(init));
}

ExprPtr zero_extend(ExprPtr operand, unsigned width)
{
    require(operand != nullptr, "null operand");
    require_width(width);
    require(width >= operand->width(), "zero_extend narrows");
    if (width == operand->width()) return operand;
    if (operand->is_literal()) return literal(operand->value(), width);
    Expr::Init init{ExprKind::ZeroExtend, width};
    init.children[0] = std::move(operand);
    init.arity = 1;
    return make(std::move(init));
}

ExprPtr sign_extend(ExprPtr operand, unsigned width)
{
    require(operand != nullptr, "null operand");
    require_width(width);
    require(width >= operand->width(), "sign_extend narrows");
    require(width <= 64, "128-bit expressions support logical operators only");
    if (width == operand->width()) return operand;
    if (operand->is_literal())
        return literal(sign_extend_value(operand->value(), operand->width(), width), width);
    Expr::Init init{ExprKind::SignExtend, width};
    init.children[0] = std::move(operand);
    init.arity = 1;
    return make(std::move(init));
}

ExprPtr ite(ExprPtr cond, ExprPtr then_expr, ExprPtr else_expr)
{
    require(cond && then_expr && else_expr, "null operand");
    require(cond->width() == 1, "ite condition must be 1 bit");
    require(then_expr->width() == else_expr->width(), "ite branch widths differ");
    if (cond->is_literal()) return cond->value() ? then_expr : else_expr;
    Expr::Init init{ExprKind::IfThenElse, then_expr->width()};
    init.children[0] = std::move(cond);
    init.children[1] = std::move(then_expr);
    init.children[2] = std::move(else_expr);
    init.arity = 3;
    return make(std::move(init));
}

ExprPtr logical_not(ExprPtr operand)
{
    require(operand && operand->width() == 1, "logical_not expects a 1-bit operand");
    return unary(UnaryOp::Not, std::move(operand));
}

std::string to_string(const ExprPtr& expr)
{
    if (!expr) return "null";
    switch (expr->kind()) {
        case ExprKind::Literal: return fmt::format("{}:{}", to_hex(expr->value()), expr->width());
        case ExprKind::Symbol: return fmt::format("sym{}:{}", expr->symbol_id(), expr->width());
        case ExprKind::Unary:
            return fmt::format("({} {})", unary_op_name(expr->unary_op()), to_string(expr->child(0)));
        case ExprKind::Binary:
            return fmt::format("({} {} {})", binary_op_name(expr->binary_op()),
                               to_string(expr->child(0)), to_string(expr->child(1)));
        case ExprKind::Extract:
            return fmt::format("(extract {} {} {})", expr->low_byte(), expr->width(),
                               to_string(expr->child(0)));
        case ExprKind::Concat:
            return fmt::format("(concat {} {})", to_string(expr->child(0)), to_string(expr->child(1)));
        case ExprKind::ZeroExtend:
            return fmt::format("(zext {} {})", expr->width(), to_string(expr->child(0)));
        case ExprKind::SignExtend:
            return fmt::format("(sext {} {})", expr->width(), to_string(expr->child(0)));
        case ExprKind::IfThenElse:
            return fmt::format("(ite {} {} {})", to_string(expr->child(0)),
                               to_string(expr->child(1)), to_string(expr->child(2)));
    }
    return "?";
}

UnboundSymbol::UnboundSymbol(std::uint32_t id)
    : std::runtime_error(fmt::format("symbol sym{} has no binding", id)), id_(id)
{
}

namespace {

/// Post-order (children first) over the DAG, each node once.
template <typename Visit>
void post_order(std::span<const ExprPtr> roots, Visit&& visit)
{
    std::unordered_set<const Expr*> done;
    std::vector<std::pair<const Expr*, bool>> stack;
    for (const auto& root : roots) {
        if (!root) continue;
        stack.emplace_back(root.get(), false);
        while (!stack.empty()) {
            auto [node, expanded] = stack.back();
            stack.pop_back();
            if (done.count(node)) continue;
            if (expanded) {
                done.insert(node);
                visit(node);
                continue;
            }
            stack.emplace_back(node, true);
            for (std::size_t i = node->arity(); i-- > 0;) {
                if (!done.count(node->child(i).get())) stack.emplace_back(node->child(i).get(), false);
            }
        }
    }
}

}  // namespace

std::vector<const Expr*> topological_order(std::span<const ExprPtr> roots)
{
    std::vector<const Expr*> out;
    post_order(roots, [&](const Expr* e) { out.push_back(e); });
    return out;
}

std::map<std::uint32_t, unsigned> collect_symbols(std::span<const ExprPtr> roots)
{
    std::map<std::uint32_t, unsigned> out;
    post_order(roots, [&](const Expr* e) {
        if (e->kind() == ExprKind::Symbol) out.emplace(e->symbol_id(), e->width());
    });
    return out;
}

ExprProgram::ExprProgram(std::span<const ExprPtr> roots)
{
    std::unordered_map<const Expr*, std::uint32_t> index;
    std::map<std::uint32_t, unsigned> symbol_widths;
    post_order(roots, [&](const Expr* e) {
        if (e->kind() == ExprKind::Symbol) symbol_widths.emplace(e->symbol_id(), e->width());
    });
    std::map<std::uint32_t, std::uint32_t> slot_of;
    for (auto [id, width] : symbol_widths) {
        slot_of[id] = static_cast<std::uint32_t>(slots_.size());
        slots_.push_back({id, width});
    }
    post_order(roots, [&](const Expr* e) {
        Node n{e->kind(), 0, e->width(), 0, 0, {0, 0, 0}};
        switch (e->kind()) {
            case ExprKind::Literal: n.value = e->value(); break;
            case ExprKind::Symbol: n.aux = slot_of.at(e->symbol_id()); break;
            case ExprKind::Unary: n.op = static_cast<std::uint8_t>(e->unary_op()); break;
            case ExprKind::Binary: n.op = static_cast<std::uint8_t>(e->binary_op()); break;
            case ExprKind::Extract: n.aux = e->low_byte(); break;
            default: break;
        }
        for (std::size_t i = 0; i < e->arity(); ++i) n.in[i] = index.at(e->child(i).get());
        index.emplace(e, static_cast<std::uint32_t>(nodes_.size()));
        nodes_.push_back(n);
    });
    for (const auto& root : roots) roots_.push_back(index.at(root.get()));
}

void ExprProgram::run(std::span<const std::uint64_t> values, std::vector<u128>& scratch) const
{
    scratch.resize(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const auto& n = nodes_[i];
        u128 r = 0;
        switch (n.kind) {
            case ExprKind::Literal: r = n.value; break;
            case ExprKind::Symbol: r = static_cast<u128>(values[n.aux]) & width_mask(n.width); break;
            case ExprKind::Unary:
                r = detail::apply_unary(static_cast<UnaryOp>(n.op), scratch[n.in[0]], nodes_[n.in[0]].width);
                break;
            case ExprKind::Binary:
                r = detail::apply_binary(static_cast<BinaryOp>(n.op), scratch[n.in[0]], scratch[n.in[1]],
                                         nodes_[n.in[0]].width, nodes_[n.in[1]].width);
                break;
            case ExprKind::Extract: r = (scratch[n.in[0]] >> (n.aux * 8)) & width_mask(n.width); break;
            case ExprKind::Concat:
                r = (scratch[n.in[0]] << nodes_[n.in[1]].width) | scratch[n.in[1]];
                break;
            case ExprKind::ZeroExtend: r = scratch[n.in[0]]; break;
            case ExprKind::SignExtend:
                r = sign_extend_value(scratch[n.in[0]], nodes_[n.in[0]].width, n.width);
                break;
            case ExprKind::IfThenElse: r = scratch[n.in[0]] ? scratch[n.in[1]] : scratch[n.in[2]]; break;
        }
        scratch[i] = r & width_mask(n.width);
    }
}

std::vector<u128> ExprProgram::evaluate(const Bindings& bindings) const
{
    std::vector<std::uint64_t> values;
    values.reserve(slots_.size());
    for (const auto& slot : slots_) {
        auto it = bindings.find(slot.id);
        if (it == bindings.end()) throw UnboundSymbol(slot.id);
        values.push_back(it->second);
    }
    std::vector<u128> scratch;
    run(values, scratch);
    std::vector<u128> out;
    out.reserve(roots_.size());
    for (auto r : roots_) out.push_back(scratch[r]);
    return out;
}

u128 evaluate(const ExprPtr& expr, const Bindings& bindings)
{
    if (expr->is_literal()) return expr->value();
    ExprProgram program(std::span<const ExprPtr>(&expr, 1));
    return program.evaluate(bindings).front();
}

namespace {

std::vector<std::uint8_t> to_bytes(u128 value, std::size_t count)
{
    std::vector<std::uint8_t> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<std::uint8_t>(value >> (8 * i));
    return out;
}

}  // namespace

std::vector<std::uint8_t> eval_concrete(const ExprPtr& expr, const Bindings& bindings)
{
    return to_bytes(evaluate(expr, bindings), std::max(1u, expr->width() / 8));
}

std::vector<std::uint8_t> ConcolicValue::bytes() const
{
    return to_bytes(concrete, size);
}

ExprPtr ConcolicValue::as_expr() const
{
    if (symbolic) return symbolic;
    return literal(concrete, size * 8);
}

}  // namespace pcx
