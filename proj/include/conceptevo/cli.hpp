#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace conceptevo {

/// Entry point of the `conceptevo` tool. `args` excludes the program name.
/// Errors are written to `err` as one JSON object; the return value is the
/// process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run_cli(int argc, char** argv);

}  // namespace conceptevo
