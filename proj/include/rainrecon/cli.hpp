#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace rainrecon {

// Subcommands: simulate, train, evaluate, baseline, reconstruct, render.
// Returns 0 on success, 1 on domain/data errors and 2 on usage errors (usage
// text goes to `err`).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rainrecon
