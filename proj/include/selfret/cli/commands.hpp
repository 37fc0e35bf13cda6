#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace selfret::cli {

/// Runs one command line (args excludes the program name) and returns the
/// process exit code: 0 success, 2 validation error, 3 data error,
/// 4 training failure. Errors are reported on `err` as one JSON object.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int main(int argc, char** argv);

}  // namespace selfret::cli
