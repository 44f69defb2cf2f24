#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "clipmem/learning.hpp"

namespace clipmem::config {

/// Malformed JSON, unknown field, wrong type, or a violated constraint. The
/// message names the line/column or the dotted field path.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Parses a RunConfig document. Absent fields keep their defaults; unknown
/// fields are rejected.
learning::RunConfig parse_config(const std::string& text);
learning::RunConfig load_config(const std::filesystem::path& path);

nlohmann::json to_json(const learning::RunConfig& config);

/// FNV-1a 64 of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const learning::RunConfig& config);

}  // namespace clipmem::config
