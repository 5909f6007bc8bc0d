#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "pcx/expr.hpp"

namespace pcx {

enum class Strategy { S1, S2, S3, CProfile };

std::string_view strategy_name(Strategy s);

struct Finding {
    Strategy strategy = Strategy::S1;
    std::string kind;
    std::uint64_t address = 0;
    std::string message;
    std::optional<Bindings> witness;
    std::map<std::uint32_t, std::string> symbol_names;  // witness ids -> input names
    std::uint64_t trace_ref = 0;                        // step index
};

/// Report name for a kind label, e.g. nil_map_assignment -> "Nil Map Assignment".
std::string bug_class_name(std::string_view kind);

}  // namespace pcx
