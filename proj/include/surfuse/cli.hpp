#pragma once

namespace surfuse::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kMissingPath = 2,
  kBadConfig = 3,
  kNumericFailure = 4,
};

/// Entry point for the surfuse tool: gen-data, train, eval, bench, gradcheck.
int run(int argc, char** argv);

}  // namespace surfuse::cli
