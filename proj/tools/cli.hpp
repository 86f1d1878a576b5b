#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace nfuse::cli {

// Runs one `nfuse` invocation; args excludes the program name. Returns the
// process exit code. Failures print a single "error: <category>: <message>"
// line to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nfuse::cli
