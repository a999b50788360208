#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace musefm::cli {

/// Runs one subcommand (scene-gen, data-gen, baseline, train, eval, report).
/// Returns 0 on success, 1 on validation errors, 2 on runtime failures.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace musefm::cli
