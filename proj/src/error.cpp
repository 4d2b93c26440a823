#include "uavdet/error.hpp"

namespace uavdet {

namespace {

std::string join_problems(const std::vector<std::string>& problems) {
    std::string out = "invalid configuration";
    for (const auto& p : problems) {
        out += "\n  - ";
        out += p;
    }
    return out;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : ValidationError(join_problems(problems)), problems_(std::move(problems)) {}

}  // namespace uavdet
