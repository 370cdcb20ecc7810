#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nucseg::cli {

/// Runs one `nucseg` invocation; args exclude the program name.
/// Returns the process exit code (0 ok, 1 usage, 2 data, 3 invariant).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nucseg::cli
