#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dyn4d::cli {

// Full command-line entry point; returns the process exit code
// (0 ok, 1 usage or config, 2 data or parse, 3 assertion failure).
int run(int argc, const char* const* argv);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

[[nodiscard]] const char* tool_version();

}  // namespace dyn4d::cli
