#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace uavdet {

// Bad input: malformed files, violated invariants, out-of-range arguments.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Carries every violated invariant, not just the first one found.
class ConfigError : public ValidationError {
public:
    explicit ConfigError(std::vector<std::string> problems);

    const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
    std::vector<std::string> problems_;
};

// Detector backend failure (transport, non-200, schema violation, unknown image).
class BackendError : public std::runtime_error {
public:
    explicit BackendError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace uavdet
