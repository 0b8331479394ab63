#pragma once

#include <stdexcept>

namespace paodp {

/// Invalid user-facing configuration (unknown ids, out-of-range knobs).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace paodp
