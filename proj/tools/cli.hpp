#pragma once

#include <string>
#include <vector>

#include "dtq/util.hpp"

namespace dtq::cli {

// Exit codes: 0 success, 1 domain error, 2 usage error.
int run(const std::vector<std::string>& args);

// Schema every config file is checked against before any data is read.
Json config_schema();

// Throws ConfigError describing the first violation.
void validate_config(const Json& config);

}  // namespace dtq::cli
