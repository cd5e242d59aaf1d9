#pragma once

#include <string>
#include <vector>

namespace hdi {

/// Runs one CLI subcommand (forward, measure, spectrum, reconstruct, verify,
/// halfspace, cgo-sweep). Returns the process exit code:
/// 0 ok, 2 config error, 3 solver failure, 4 identification-stage failure.
int cli_run(const std::vector<std::string>& args);

}  // namespace hdi
