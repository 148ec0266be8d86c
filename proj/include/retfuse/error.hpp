#pragma once

#include <stdexcept>
#include <string>

namespace retfuse {

/// Raised for every contract violation surfaced to callers: malformed input
/// files, bad configuration, precondition failures.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace retfuse
