#pragma once

#include <stdexcept>
#include <string>

namespace vulsatd {

/// Malformed user input: datasets, pattern files, configs, CLI arguments.
/// Internal invariant failures use std::logic_error / std::runtime_error.
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace vulsatd
