#pragma once

#include <atomic>
#include <iosfwd>
#include <string>
#include <vector>

namespace benchkit {

/// Exit statuses: 0 success, 1 usage or configuration error, 2 some trial or upload failed.
/// `args` excludes the program name. Summary lines go last on `out`; progress and warnings go to `err`.
int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err,
            const std::atomic<bool> *cancel = nullptr);

/// Top-level help followed by every subcommand's options.
std::string cli_full_help();

}  // namespace benchkit
