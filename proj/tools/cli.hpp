#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tempo::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // failed check, invalid input or usage
inline constexpr int kExitIo = 2;       // unreadable or unwritable file, corrupt checkpoint

/// Runs one command line (args excludes the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tempo::cli
