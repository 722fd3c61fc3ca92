#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace clusterseq::cli {

/// Runs one command line (without the program name). Errors print a single
/// "error: <code>: <message>" line to `err` and return nonzero.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace clusterseq::cli
