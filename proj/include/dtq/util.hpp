#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <random>
#include <string>
#include <string_view>

#include "dtq/tensor.hpp"

namespace dtq {

using Rng = std::mt19937_64;
using Json = nlohmann::json;

Tensor normal_tensor(const Shape& shape, double mean, double stddev, Rng& rng);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);
Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& value);

// Shortest text that parses back to the same double.
std::string format_double(double value);

// ISO-8601 calendar dates ("YYYY-MM-DD").
bool is_iso_date(std::string_view text);
std::string add_days(const std::string& iso_date, int days);
// Monday = 0 ... Sunday = 6
int weekday_index(const std::string& iso_date);

// Reads DTQ_LOG_LEVEL (error|warn|info|debug) and configures spdlog.
void configure_logging();

}  // namespace dtq
