#pragma once

#include <string>
#include <vector>

namespace graphtext {

// Command-line entry point, exposed so tests can drive commands in-process.
// args excludes the program name. Returns the process exit status; every
// successful command writes a manifest.json (argv, seed, config snapshot,
// metric results) into its --out directory.
int dispatch(const std::vector<std::string>& args);

}  // namespace graphtext
