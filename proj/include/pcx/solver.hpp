#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "pcx/expr.hpp"

namespace pcx {

using Model = Bindings;

struct Sat {
    Model model;
};
struct Unsat {};
struct Unknown {
    std::string reason;
};

using SolverVerdict = std::variant<Sat, Unsat, Unknown>;

inline bool is_sat(const SolverVerdict& v) { return std::holds_alternative<Sat>(v); }
inline bool is_unsat(const SolverVerdict& v) { return std::holds_alternative<Unsat>(v); }
inline bool is_unknown(const SolverVerdict& v) { return std::holds_alternative<Unknown>(v); }

struct SolverStats {
    std::size_t sat = 0;
    std::size_t unsat = 0;
    std::size_t unknown = 0;

    std::size_t queries() const { return sat + unsat + unknown; }
    SolverStats& operator+=(const SolverStats& o)
    {
        sat += o.sat;
        unsat += o.unsat;
        unknown += o.unknown;
        return *this;
    }
};

/// Backend-independent solver front. One instance per exploration worker.
class Solver {
public:
    virtual ~Solver() = default;

    /// Conjunction of the constraints (as asserted) and `extra` when given.
    /// `hints` supplies preferred values, e.g. the current concrete seed.
    SolverVerdict check(std::span<const PathConstraint> constraints, const ExprPtr& extra = nullptr,
                        const Model& hints = {});

    /// Every assertion must be a width-1 expression equal to 1.
    SolverVerdict check_assertions(std::vector<ExprPtr> assertions, const Model& hints = {});

    const SolverStats& stats() const { return stats_; }
    virtual std::string name() const = 0;
    virtual std::unique_ptr<Solver> clone() const = 0;

protected:
    virtual SolverVerdict solve(const std::vector<ExprPtr>& assertions, const Model& hints) = 0;

private:
    SolverStats stats_;
};

/// Built-in fallback: exhaustive enumeration over the bits of each symbol that
/// can influence the query, one independent symbol cluster at a time.
class EnumerationSolver : public Solver {
public:
    explicit EnumerationSolver(unsigned max_bits = 20,
                               std::chrono::milliseconds timeout = std::chrono::milliseconds(5000));

    std::string name() const override { return "enumeration"; }
    std::unique_ptr<Solver> clone() const override;

protected:
    SolverVerdict solve(const std::vector<ExprPtr>& assertions, const Model& hints) override;

private:
    unsigned max_bits_;
    std::chrono::milliseconds timeout_;
};

/// Runs an external SMT-LIB2 solver (z3, cvc5, ...) as a child process.
class SmtLibSolver : public Solver {
public:
    SmtLibSolver(std::string executable, std::chrono::milliseconds timeout);

    std::string name() const override { return "smtlib:" + executable_; }
    std::unique_ptr<Solver> clone() const override;

protected:
    SolverVerdict solve(const std::vector<ExprPtr>& assertions, const Model& hints) override;

private:
    std::string executable_;
    std::chrono::milliseconds timeout_;
};

struct SolverConfig {
    std::optional<std::string> smt_executable;
    std::chrono::milliseconds timeout{5000};
    unsigned max_enumeration_bits = 20;

    /// Picks up PCX_SMT_SOLVER when set.
    static SolverConfig from_environment();
};

std::unique_ptr<Solver> make_solver(const SolverConfig& config);

SolverVerdict check_sat(Solver& solver, std::span<const PathConstraint> constraints,
                        const ExprPtr& extra = nullptr);

/// True iff every constraint holds under the model. Throws UnboundSymbol.
bool model_check(std::span<const PathConstraint> constraints, const Model& model);
bool model_check(std::span<const ExprPtr> assertions, const Model& model);

/// SMT-LIB2 script asserting every expression equals #b1.
std::string to_smtlib(std::span<const ExprPtr> assertions);

/// Bits of each symbol that can affect the value of the roots.
std::map<std::uint32_t, std::uint64_t> demanded_bits(std::span<const ExprPtr> roots);

}  // namespace pcx
