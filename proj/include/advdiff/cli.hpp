#pragma once

namespace advdiff::cli {

enum ExitCode : int {
    kOk = 0,
    kUsage = 1,
    kConfig = 2,
    kRuntime = 3,
};

/// Entry point of the `advdiff` tool. Never throws; failures map to an exit
/// code and a message on stderr.
int run(int argc, char** argv);

}  // namespace advdiff::cli
