#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fullanno::cli {

/// Entry point behind the `fullanno` binary. Returns the process exit
/// status: 0 success, 1 data/runtime error, 2 usage error. Errors are also
/// written to `err` as a one-line JSON object.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fullanno::cli
