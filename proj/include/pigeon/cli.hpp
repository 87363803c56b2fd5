#pragma once

namespace pigeon::cli {

// Entry point for the command-line tool. Exit codes: 0 success, 1 data/file
// errors, 2 usage errors.
int run(int argc, const char* const* argv);

}  // namespace pigeon::cli
