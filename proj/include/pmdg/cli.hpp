#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace pmdg {

// Applies a dotted-key override "train.epochs=30" to a config tree. Every key
// on the path must already exist. Values parse as JSON when possible,
// otherwise as strings.
void apply_override(nlohmann::json& config, const std::string& assignment);

// Entry point behind the `pmdg` binary. Exit codes: 0 success, 1 validation
// error, 2 runtime failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace pmdg
