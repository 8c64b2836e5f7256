#pragma once

#include <string>
#include <vector>

namespace modest::cli {

/// Runs one subcommand. Exit status: 0 success, 2 usage error, 1 runtime
/// error. All artifacts land under the --out directory.
int run(const std::vector<std::string>& args);

}  // namespace modest::cli
