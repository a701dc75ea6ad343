#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nimaenh::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumerical = 4;

// Default output root when --out is omitted; each command writes to
// $NIMAENH_OUT_DIR/<command>.
inline constexpr const char* kOutDirEnv = "NIMAENH_OUT_DIR";

// `args` excludes the program name. Returns the process exit code; errors are
// reported on `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nimaenh::cli
