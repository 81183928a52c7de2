#pragma once

#include <cstddef>

namespace sdr::cli {

enum ExitCode : int { kOk = 0, kRuntime = 1, kUsage = 2, kResourceCap = 3 };

int run(int argc, char** argv);

/// SD_DETERMINISTIC=1 forces 1, otherwise SD_THREADS (default: hardware
/// concurrency).
std::size_t worker_threads();

}  // namespace sdr::cli
