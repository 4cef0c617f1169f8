#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace urbanclip::cli {

// Exit codes: 0 success, 1 module error, 2 usage error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;

// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace urbanclip::cli
