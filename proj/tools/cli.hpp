#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace uavdet::cli {

enum ExitCode : int {
    kOk = 0,
    kValidation = 1,
    kThreshold = 2,
    kBackend = 3,
};

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace uavdet::cli
