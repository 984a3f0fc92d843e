#pragma once

#include <stdexcept>
#include <string>

namespace spt {

// Bad inputs: missing files, malformed JSON, template/field mismatches,
// out-of-range ids. CLI exit code 2.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerics went wrong: non-finite loss/objective, misuse of backward.
// CLI exit code 3.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace spt
