#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "driftlab/field.hpp"

namespace driftlab::cli {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kMissingFile = 2,
    kBadConfig = 3,
    kNumerical = 4,
};

using Json = nlohmann::ordered_json;

/// Built-in defaults for every section of the run configuration.
Json default_config();

/// Applies `a.b.c=value` (value parsed as JSON, else taken as a string).
void apply_override(Json& config, const std::string& assignment);

GridSpec grid_from_config(const Json& config);
/// The field named by `field_path`, or the configured synthetic flow on the configured grid.
VelocityField field_from_config(const Json& config);

/// Full command-line entry point; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace driftlab::cli
