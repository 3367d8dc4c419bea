#pragma once

#include <iosfwd>

namespace claa::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitViolations = 2;
inline constexpr int kExitUsage = 64;
inline constexpr int kExitBadInput = 65;
inline constexpr int kExitNoInput = 66;

// Entry point shared by the binary and the tests.
int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace claa::cli
