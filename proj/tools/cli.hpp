#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace masksurf::cli {

/// Runs one command line (args[0] is the program name). Returns the exit
/// status; 0 iff no error record was written.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace masksurf::cli
