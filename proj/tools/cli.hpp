#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tfda::cli {

// Runs one tfda command. Returns the process exit code: 0 success, 1
// validation/config/IO error, 2 training divergence.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Configuration key listing appended to --help.
std::string config_help();

}  // namespace tfda::cli
