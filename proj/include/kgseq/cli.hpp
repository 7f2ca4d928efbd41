#pragma once

namespace kgseq {

/// Entry point of the `kgseq` command. Returns the process exit code:
/// 0 on success, 1 on a runtime failure, 2 on a usage error.
int run_cli(int argc, char** argv);

}  // namespace kgseq
