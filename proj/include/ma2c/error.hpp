#pragma once

#include <stdexcept>
#include <string>

namespace ma2c {

/// Invalid user input: config keys, scenario files, out-of-range parameters.
/// The CLI maps this to exit code 1.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (bad phase index, shape
/// mismatch, unordered batch). Never recoverable.
class ContractError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

/// Training produced a non-finite value. The CLI maps this to exit code 2.
class DivergenceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace ma2c
