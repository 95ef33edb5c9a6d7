#pragma once

#include <string>
#include <vector>

namespace subnetens {

/// One nonzero exit code per error class; every failure prints exactly one
/// diagnostic line to stderr.
enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 2,
    kExitIo = 3,
    kExitFormat = 4,
    kExitChecksum = 5,
    kExitVersion = 6,
    kExitConstraint = 7,
    kExitNumeric = 8,
    kExitConfig = 9,
};

int cli_main(const std::vector<std::string>& args);

}  // namespace subnetens
