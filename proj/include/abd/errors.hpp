#ifndef ABD_ERRORS_HPP
#define ABD_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace abd {

// Error taxonomy used across the library. The CLI maps DomainError/ShapeError/
// FormatError/StateError to exit code 2 and NumericError to exit code 3.

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error("domain error: " + msg) {}
};

struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error("state error: " + msg) {}
};

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error("format error: " + msg) {}
};

} // namespace abd

#endif
