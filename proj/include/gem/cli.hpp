#pragma once

namespace gem {

// Entry point behind the gem binary. Returns 0 on success, 1 on usage
// errors, 2 on runtime failures.
int run_cli(int argc, const char* const* argv);

}  // namespace gem
