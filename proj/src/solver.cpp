#include "pcx/solver.hpp"

#include <algorithm>
#include <bit>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fmt/format.h>

extern char** environ;

namespace pcx {

SolverVerdict Solver::check(std::span<const PathConstraint> constraints, const ExprPtr& extra,
                            const Model& hints)
{
    std::vector<ExprPtr> assertions;
    assertions.reserve(constraints.size() + 1);
    for (const auto& c : constraints) assertions.push_back(c.asserted());
    if (extra) assertions.push_back(extra);
    return check_assertions(std::move(assertions), hints);
}

SolverVerdict Solver::check_assertions(std::vector<ExprPtr> assertions, const Model& hints)
{
    std::vector<ExprPtr> live;
    bool trivially_false = false;
    for (auto& a : assertions) {
        if (!a || a->width() != 1) throw std::invalid_argument("assertion must be a 1-bit expression");
        if (a->is_literal()) {
            if (a->value() == 0) trivially_false = true;
            continue;
        }
        live.push_back(std::move(a));
    }
    SolverVerdict verdict = trivially_false ? SolverVerdict{Unsat{}}
                            : live.empty()  ? SolverVerdict{Sat{}}
                                            : solve(live, hints);
    if (auto* sat = std::get_if<Sat>(&verdict)) {
        // every symbol of the query gets a value
        for (auto [id, width] : collect_symbols(live)) {
            if (!sat->model.count(id)) {
                auto it = hints.find(id);
                sat->model[id] = it == hints.end() ? 0 : it->second & static_cast<std::uint64_t>(width_mask(width));
            }
        }
    }
    std::visit([this](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Sat>) ++stats_.sat;
        else if constexpr (std::is_same_v<T, Unsat>) ++stats_.unsat;
        else ++stats_.unknown;
    }, verdict);
    return verdict;
}

namespace {

u128 low_bits_upto_msb(u128 m)
{
    if (m == 0) return 0;
    auto hi = static_cast<std::uint64_t>(m >> 64);
    unsigned msb = hi ? 127 - std::countl_zero(hi) : 63 - std::countl_zero(static_cast<std::uint64_t>(m));
    return width_mask(msb + 1);
}

}  // namespace

std::map<std::uint32_t, std::uint64_t> demanded_bits(std::span<const ExprPtr> roots)
{
    auto order = topological_order(roots);
    std::unordered_map<const Expr*, u128> mask;
    for (const auto& r : roots) mask[r.get()] |= width_mask(r->width());
    std::map<std::uint32_t, std::uint64_t> out;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const Expr* e = *it;
        const u128 m = mask[e];
        auto give = [&](std::size_t i, u128 bits) {
            const Expr* c = e->child(i).get();
            mask[c] |= bits & width_mask(c->width());
        };
        auto full = [&](std::size_t i) {
            if (m) give(i, ~u128(0));
        };
        switch (e->kind()) {
            case ExprKind::Literal: break;
            case ExprKind::Symbol: out[e->symbol_id()] |= static_cast<std::uint64_t>(m); break;
            case ExprKind::Unary:
                if (e->unary_op() == UnaryOp::Not) give(0, m);
                else if (e->unary_op() == UnaryOp::Neg) give(0, low_bits_upto_msb(m));
                else full(0);
                break;
            case ExprKind::Binary:
                switch (e->binary_op()) {
                    case BinaryOp::And:
                    case BinaryOp::Or:
                    case BinaryOp::Xor:
                        give(0, m);
                        give(1, m);
                        break;
                    case BinaryOp::Add:
                    case BinaryOp::Sub:
                    case BinaryOp::Mul:
                        give(0, low_bits_upto_msb(m));
                        give(1, low_bits_upto_msb(m));
                        break;
                    default:
                        full(0);
                        full(1);
                }
                break;
            case ExprKind::Extract: give(0, m << (e->low_byte() * 8)); break;
            case ExprKind::Concat: {
                const unsigned lw = e->child(1)->width();
                give(1, m);
                give(0, m >> lw);
                break;
            }
            case ExprKind::ZeroExtend: give(0, m); break;
            case ExprKind::SignExtend: {
                const unsigned cw = e->child(0)->width();
                u128 bits = m;
                if (m & ~width_mask(cw)) bits |= u128(1) << (cw - 1);
                give(0, bits);
                break;
            }
            case ExprKind::IfThenElse:
                if (m) give(0, 1);
                give(1, m);
                give(2, m);
                break;
        }
    }
    return out;
}

EnumerationSolver::EnumerationSolver(unsigned max_bits, std::chrono::milliseconds timeout)
    : max_bits_(max_bits), timeout_(timeout)
{
}

std::unique_ptr<Solver> EnumerationSolver::clone() const
{
    return std::make_unique<EnumerationSolver>(max_bits_, timeout_);
}

SolverVerdict EnumerationSolver::solve(const std::vector<ExprPtr>& assertions, const Model& hints)
{
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    const auto demand = demanded_bits(assertions);

    // union-find over symbols that share an assertion
    std::map<std::uint32_t, std::uint32_t> parent;
    std::function<std::uint32_t(std::uint32_t)> find = [&](std::uint32_t x) {
        auto p = parent.at(x);
        if (p == x) return x;
        return parent[x] = find(p);
    };
    std::vector<std::map<std::uint32_t, unsigned>> syms_of(assertions.size());
    for (std::size_t i = 0; i < assertions.size(); ++i) {
        syms_of[i] = collect_symbols(std::span<const ExprPtr>(&assertions[i], 1));
        for (auto [id, w] : syms_of[i]) parent.emplace(id, id);
        if (syms_of[i].empty()) continue;
        const auto first = find(syms_of[i].begin()->first);
        for (auto [id, w] : syms_of[i]) parent[find(id)] = first;
    }
    std::map<std::uint32_t, std::vector<ExprPtr>> clusters;
    for (std::size_t i = 0; i < assertions.size(); ++i)
        clusters[find(syms_of[i].begin()->first)].push_back(assertions[i]);

    Model model;
    for (const auto& [root, members] : clusters) {
        ExprProgram program(members);
        const auto& slots = program.symbols();
        std::vector<std::uint64_t> base(slots.size());
        std::vector<std::pair<std::size_t, unsigned>> positions;  // (slot, bit)
        for (std::size_t s = 0; s < slots.size(); ++s) {
            auto h = hints.find(slots[s].id);
            base[s] = h == hints.end() ? 0 : h->second;
            base[s] &= static_cast<std::uint64_t>(width_mask(slots[s].width));
            auto d = demand.find(slots[s].id);
            const std::uint64_t bits = d == demand.end() ? 0 : d->second;
            for (unsigned b = 0; b < 64; ++b)
                if ((bits >> b) & 1) positions.emplace_back(s, b);
        }

        std::vector<u128> scratch;
        auto satisfied = [&](const std::vector<std::uint64_t>& values) {
            program.run(values, scratch);
            for (std::size_t r = 0; r < program.root_count(); ++r)
                if (program.root_value(r, scratch) != 1) return false;
            return true;
        };

        std::optional<std::vector<std::uint64_t>> found;
        if (satisfied(base)) {
            found = base;
        } else {
            if (positions.size() > max_bits_)
                return Unknown{fmt::format("{} demanded bits exceed the enumeration bound of {}",
                                           positions.size(), max_bits_)};
            std::vector<std::uint64_t> values(base);
            for (std::size_t s = 0; s < slots.size(); ++s) {
                for (auto [slot, bit] : positions)
                    if (slot == s) values[s] &= ~(std::uint64_t(1) << bit);
            }
            const std::vector<std::uint64_t> cleared = values;
            const std::uint64_t total = std::uint64_t(1) << positions.size();
            for (std::uint64_t counter = 0; counter < total; ++counter) {
                if ((counter & 1023) == 1023 && std::chrono::steady_clock::now() > deadline)
                    return Unknown{"timeout"};
                values = cleared;
                for (std::size_t k = 0; k < positions.size(); ++k)
                    if ((counter >> k) & 1) values[positions[k].first] |= std::uint64_t(1) << positions[k].second;
                if (satisfied(values)) {
                    found = values;
                    break;
                }
            }
            if (!found) return Unsat{};
        }
        for (std::size_t s = 0; s < slots.size(); ++s) model[slots[s].id] = (*found)[s];
    }
    return Sat{std::move(model)};
}

namespace {

std::string bv_sort(unsigned width)
{
    return fmt::format("(_ BitVec {})", width);
}

std::string bv_literal(u128 value, unsigned width)
{
    if (width % 4 == 0) {
        std::string digits;
        for (int i = static_cast<int>(width / 4) - 1; i >= 0; --i)
            digits += "0123456789abcdef"[static_cast<unsigned>(value >> (4 * i)) & 0xf];
        return "#x" + digits;
    }
    std::string digits;
    for (int i = static_cast<int>(width) - 1; i >= 0; --i) digits += ((value >> i) & 1) ? '1' : '0';
    return "#b" + digits;
}

std::string bool_to_bv(const std::string& pred)
{
    return fmt::format("(ite {} #b1 #b0)", pred);
}

std::string sign_of(const std::string& term, unsigned width)
{
    return fmt::format("((_ extract {0} {0}) {1})", width - 1, term);
}

std::string shift_amount(const std::string& amount, unsigned amount_width, unsigned width,
                         std::string_view op, const std::string& value)
{
    if (amount_width == width) return fmt::format("({} {} {})", op, value, amount);
    if (amount_width < width)
        return fmt::format("({} {} ((_ zero_extend {}) {}))", op, value, width - amount_width, amount);
    return fmt::format("(ite (bvuge {} {}) ({} {} {}) ({} {} ((_ extract {} 0) {})))", amount,
                       bv_literal(width, amount_width), op, value, bv_literal(width, width), op, value,
                       width - 1, amount);
}

std::string node_term(const Expr* e, const std::unordered_map<const Expr*, std::string>& names)
{
    auto arg = [&](std::size_t i) { return names.at(e->child(i).get()); };
    const unsigned w = e->width();
    switch (e->kind()) {
        case ExprKind::Literal: return bv_literal(e->value(), w);
        case ExprKind::Symbol: return fmt::format("s{}", e->symbol_id());
        case ExprKind::Unary:
            switch (e->unary_op()) {
                case UnaryOp::Not: return fmt::format("(bvnot {})", arg(0));
                case UnaryOp::Neg: return fmt::format("(bvneg {})", arg(0));
                case UnaryOp::Popcount: {
                    std::string sum = bv_literal(0, w);
                    for (unsigned b = 0; b < w; ++b) {
                        auto bit = fmt::format("((_ extract {0} {0}) {1})", b, arg(0));
                        if (w > 1) bit = fmt::format("((_ zero_extend {}) {})", w - 1, bit);
                        sum = fmt::format("(bvadd {} {})", sum, bit);
                    }
                    return sum;
                }
            }
            break;
        case ExprKind::Binary: {
            const unsigned ow = e->child(0)->width();
            const auto a = arg(0);
            const auto b = arg(1);
            switch (e->binary_op()) {
                case BinaryOp::Add: return fmt::format("(bvadd {} {})", a, b);
                case BinaryOp::Sub: return fmt::format("(bvsub {} {})", a, b);
                case BinaryOp::Mul: return fmt::format("(bvmul {} {})", a, b);
                case BinaryOp::UDiv: return fmt::format("(bvudiv {} {})", a, b);
                case BinaryOp::SDiv: return fmt::format("(bvsdiv {} {})", a, b);
                case BinaryOp::URem: return fmt::format("(bvurem {} {})", a, b);
                case BinaryOp::SRem: return fmt::format("(bvsrem {} {})", a, b);
                case BinaryOp::And: return fmt::format("(bvand {} {})", a, b);
                case BinaryOp::Or: return fmt::format("(bvor {} {})", a, b);
                case BinaryOp::Xor: return fmt::format("(bvxor {} {})", a, b);
                case BinaryOp::Shl: return shift_amount(b, e->child(1)->width(), ow, "bvshl", a);
                case BinaryOp::LShr: return shift_amount(b, e->child(1)->width(), ow, "bvlshr", a);
                case BinaryOp::AShr: return shift_amount(b, e->child(1)->width(), ow, "bvashr", a);
                case BinaryOp::Eq: return bool_to_bv(fmt::format("(= {} {})", a, b));
                case BinaryOp::Ne: return bool_to_bv(fmt::format("(not (= {} {}))", a, b));
                case BinaryOp::Ult: return bool_to_bv(fmt::format("(bvult {} {})", a, b));
                case BinaryOp::Ule: return bool_to_bv(fmt::format("(bvule {} {})", a, b));
                case BinaryOp::Slt: return bool_to_bv(fmt::format("(bvslt {} {})", a, b));
                case BinaryOp::Sle: return bool_to_bv(fmt::format("(bvsle {} {})", a, b));
                case BinaryOp::Carry: return bool_to_bv(fmt::format("(bvult (bvadd {0} {1}) {0})", a, b));
                case BinaryOp::SCarry: {
                    auto r = fmt::format("(bvadd {} {})", a, b);
                    return sign_of(fmt::format("(bvand (bvxor {0} {2}) (bvxor {1} {2}))", a, b, r), ow);
                }
                case BinaryOp::SBorrow: {
                    auto r = fmt::format("(bvsub {} {})", a, b);
                    return sign_of(fmt::format("(bvand (bvxor {0} {1}) (bvxor {0} {2}))", a, b, r), ow);
                }
            }
            break;
        }
        case ExprKind::Extract:
            return fmt::format("((_ extract {} {}) {})", e->low_byte() * 8 + w - 1, e->low_byte() * 8, arg(0));
        case ExprKind::Concat: return fmt::format("(concat {} {})", arg(0), arg(1));
        case ExprKind::ZeroExtend:
            return fmt::format("((_ zero_extend {}) {})", w - e->child(0)->width(), arg(0));
        case ExprKind::SignExtend:
            return fmt::format("((_ sign_extend {}) {})", w - e->child(0)->width(), arg(0));
        case ExprKind::IfThenElse: return fmt::format("(ite (= {} #b1) {} {})", arg(0), arg(1), arg(2));
    }
    return "?";
}

}  // namespace

std::string to_smtlib(std::span<const ExprPtr> assertions)
{
    std::string out = "(set-logic QF_BV)\n";
    for (auto [id, width] : collect_symbols(assertions))
        out += fmt::format("(declare-const s{} {})\n", id, bv_sort(width));
    std::unordered_map<const Expr*, std::string> names;
    std::size_t counter = 0;
    for (const Expr* e : topological_order(assertions)) {
        if (e->kind() == ExprKind::Symbol || e->kind() == ExprKind::Literal) {
            names[e] = node_term(e, names);
            continue;
        }
        auto name = fmt::format("n{}", counter++);
        out += fmt::format("(define-fun {} () {} {})\n", name, bv_sort(e->width()), node_term(e, names));
        names[e] = name;
    }
    for (const auto& a : assertions) out += fmt::format("(assert (= {} #b1))\n", names.at(a.get()));
    out += "(check-sat)\n";
    return out;
}

SmtLibSolver::SmtLibSolver(std::string executable, std::chrono::milliseconds timeout)
    : executable_(std::move(executable)), timeout_(timeout)
{
}

std::unique_ptr<Solver> SmtLibSolver::clone() const
{
    return std::make_unique<SmtLibSolver>(executable_, timeout_);
}

namespace {

struct ProcessResult {
    bool timed_out = false;
    bool failed = false;
    std::string output;
};

ProcessResult run_solver_process(const std::string& exe, const std::string& script_path,
                                 std::chrono::milliseconds timeout)
{
    ProcessResult result;
    int out_pipe[2];
    if (pipe(out_pipe) != 0) {
        result.failed = true;
        return result;
    }
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
    posix_spawn_file_actions_addclose(&actions, out_pipe[0]);
    posix_spawn_file_actions_addopen(&actions, STDERR_FILENO, "/dev/null", O_WRONLY, 0);

    std::vector<std::string> args{exe, script_path};
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);

    pid_t pid = 0;
    const int rc = posix_spawnp(&pid, exe.c_str(), &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    close(out_pipe[1]);
    if (rc != 0) {
        close(out_pipe[0]);
        result.failed = true;
        return result;
    }
    fcntl(out_pipe[0], F_SETFL, O_NONBLOCK);

    const auto deadline = std::chrono::steady_clock::now() + timeout;
    char buf[4096];
    int status = 0;
    bool exited = false;
    while (true) {
        ssize_t n;
        while ((n = read(out_pipe[0], buf, sizeof buf)) > 0) result.output.append(buf, static_cast<std::size_t>(n));
        if (!exited && waitpid(pid, &status, WNOHANG) == pid) exited = true;
        if (exited && n == 0) break;
        if (exited && n < 0 && errno != EAGAIN) break;
        if (!exited && std::chrono::steady_clock::now() > deadline) {
            kill(pid, SIGKILL);
            waitpid(pid, &status, 0);
            result.timed_out = true;
            break;
        }
        if (n < 0) std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
    close(out_pipe[0]);
    return result;
}

std::optional<u128> parse_bv_value(std::string_view token)
{
    u128 v = 0;
    if (token.starts_with("#x")) {
        for (char c : token.substr(2)) {
            int d = std::isdigit(static_cast<unsigned char>(c)) ? c - '0' : std::tolower(c) - 'a' + 10;
            if (d < 0 || d > 15) return std::nullopt;
            v = (v << 4) | static_cast<unsigned>(d);
        }
        return v;
    }
    if (token.starts_with("#b")) {
        for (char c : token.substr(2)) {
            if (c != '0' && c != '1') return std::nullopt;
            v = (v << 1) | static_cast<unsigned>(c - '0');
        }
        return v;
    }
    if (token.starts_with("bv")) {
        for (char c : token.substr(2)) {
            if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
            v = v * 10 + static_cast<unsigned>(c - '0');
        }
        return v;
    }
    return std::nullopt;
}

}  // namespace

SolverVerdict SmtLibSolver::solve(const std::vector<ExprPtr>& assertions, const Model& hints)
{
    (void)hints;
    const auto symbols = collect_symbols(assertions);
    std::string script = to_smtlib(assertions);
    if (!symbols.empty()) {
        script += "(get-value (";
        for (auto [id, w] : symbols) script += fmt::format(" s{}", id);
        script += "))\n";
    }

    char path[] = "/tmp/pcx-query-XXXXXX";
    const int fd = mkstemp(path);
    if (fd < 0) return Unknown{"cannot create query file"};
    {
        std::ofstream f(path);
        f << script;
    }
    close(fd);
    auto result = run_solver_process(executable_, path, timeout_);
    std::remove(path);
    if (result.failed) return Unknown{"cannot run " + executable_};
    if (result.timed_out) return Unknown{"timeout"};

    std::istringstream in(result.output);
    std::string head;
    in >> head;
    if (head == "unsat") return Unsat{};
    if (head != "sat") return Unknown{head.empty() ? "no answer" : head};

    // ((s0 #x2a) (s1 (_ bv5 8)))
    std::string rest((std::istreambuf_iterator<char>(in)), {});
    for (char& c : rest)
        if (c == '(' || c == ')') c = ' ';
    std::istringstream tokens(rest);
    Model model;
    std::string tok;
    std::optional<std::uint32_t> pending;
    while (tokens >> tok) {
        if (tok.size() > 1 && tok[0] == 's' && std::all_of(tok.begin() + 1, tok.end(), ::isdigit)) {
            pending = static_cast<std::uint32_t>(std::stoul(tok.substr(1)));
            continue;
        }
        if (pending) {
            if (auto v = parse_bv_value(tok)) {
                model[*pending] = static_cast<std::uint64_t>(*v);
                pending.reset();
            }
        }
    }
    for (auto [id, w] : symbols)
        if (!model.count(id)) return Unknown{"incomplete model"};
    if (!model_check(std::span<const ExprPtr>(assertions), model)) return Unknown{"model rejected by cross-check"};
    return Sat{std::move(model)};
}

SolverConfig SolverConfig::from_environment()
{
    SolverConfig config;
    if (const char* exe = std::getenv("PCX_SMT_SOLVER"); exe && *exe) config.smt_executable = exe;
    return config;
}

std::unique_ptr<Solver> make_solver(const SolverConfig& config)
{
    if (config.smt_executable) return std::make_unique<SmtLibSolver>(*config.smt_executable, config.timeout);
    return std::make_unique<EnumerationSolver>(config.max_enumeration_bits, config.timeout);
}

SolverVerdict check_sat(Solver& solver, std::span<const PathConstraint> constraints, const ExprPtr& extra)
{
    return solver.check(constraints, extra);
}

bool model_check(std::span<const ExprPtr> assertions, const Model& model)
{
    if (assertions.empty()) return true;
    ExprProgram program(assertions);
    for (auto v : program.evaluate(model))
        if (v != 1) return false;
    return true;
}

bool model_check(std::span<const PathConstraint> constraints, const Model& model)
{
    std::vector<ExprPtr> assertions;
    for (const auto& c : constraints) assertions.push_back(c.asserted());
    return model_check(std::span<const ExprPtr>(assertions), model);
}

}  // namespace pcx
