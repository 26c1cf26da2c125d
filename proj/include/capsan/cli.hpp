#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace capsan::cli {

// Parses and dispatches one command. Exit codes: 0 success, 1 usage or
// configuration error, 2 numeric or unexpected runtime failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace capsan::cli
