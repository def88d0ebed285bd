#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace percept::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Runs one pipeline command. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

std::string version();

}  // namespace percept::cli
