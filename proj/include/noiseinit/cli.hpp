#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace noiseinit {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;

// Runs one CLI invocation; `args` excludes the program name. Never throws:
// failures are reported on `err` and mapped to the exit codes above.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Keeps large freed blocks in the heap (glibc only) so per-iteration
// activation buffers are recycled instead of re-mapped.
void tune_allocator();

}  // namespace noiseinit
