#pragma once

#include <string>
#include <vector>

namespace ipcd {

// Entry point for the ipcd command-line tool. `args` excludes the program
// name. Returns 0 on success, 1 on usage errors, 2 on data errors.
int run_cli(const std::vector<std::string>& args);

}  // namespace ipcd
