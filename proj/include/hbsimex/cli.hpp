#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace hbsimex::cli {

inline constexpr const char* kVersion = "0.1.0";

// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
int run(int argc, char** argv);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hbsimex::cli
