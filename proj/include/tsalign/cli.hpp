#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tsalign::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command. args excludes the program name, e.g. {"align", "--config", "toy.json"}.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tsalign::cli
