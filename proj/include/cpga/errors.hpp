#pragma once

#include <stdexcept>

namespace cpga {

// Invalid user-supplied configuration (names the offending field).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A documented precondition or invariant was violated by the caller.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace cpga
