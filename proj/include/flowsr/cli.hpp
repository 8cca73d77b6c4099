#pragma once

#include <string>
#include <vector>

namespace flowsr {

// Entry point behind the `flowsr` binary; exposed for in-process testing.
// Returns 0 on success, 1 on usage errors, 2 on numeric/config failures.
int run_cli(const std::vector<std::string>& args);

}  // namespace flowsr
