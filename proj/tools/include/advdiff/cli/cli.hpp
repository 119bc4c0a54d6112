#pragma once

#include <string>
#include <vector>

namespace advdiff::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,   // unclassified error
  kExitUsage = 2,     // bad flags or unknown subcommand
  kExitConfig = 3,    // config file or parameter error
  kExitArtifact = 4,  // missing or unusable checkpoint, manifest, dataset
  kExitFormat = 5,    // malformed file content
  kExitNumeric = 6,   // non-finite values during training or inference
  kExitNetwork = 7,   // serve could not open its socket
};

/// Entry point of the advdiff tool; args excludes the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace advdiff::cli
