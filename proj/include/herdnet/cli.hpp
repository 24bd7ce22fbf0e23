#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace herdnet::cli {

// Subcommands: gen, split, pretrain, train, eval, explain, audit, report.
// Returns 0 on success, 1 on a failed check (one "error: module: ..." line on
// `err`), 2 on a command-line error (usage on `err`).
int cli_main(int argc, const char* const* argv);
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace herdnet::cli
