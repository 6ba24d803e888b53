#pragma once

#include "gdich/core.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace gdich::app {

using Json = nlohmann::json;

/// Every accepted key with its default. Keys whose default is null are optional
/// and filled from the selected system before the run.
const Json& default_config();

/// dichotomy.verify, lyapunov.check, ...
const std::vector<std::string>& known_commands();

struct RunConfig {
    std::string command;
    Json values;                      ///< defaults merged with the file and the environment
    std::filesystem::path base_dir;   ///< relative CSV paths resolve here
    std::vector<std::string> overrides;  ///< environment variables that were applied
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// Reads variables from the process environment.
std::optional<std::string> process_env(const std::string& name);

/// Parses TOML text. Schema violations are collected and thrown together as one
/// ConfigError, one "path: problem" line each. tolerances.<name> can be overridden by
/// GDICH_TOL_<NAME>. `command` wins over the file's `command` key.
RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir,
                       const std::string& command = "", const EnvLookup& env = process_env,
                       const std::string& source = "config");

/// Throws ConfigError when the file cannot be read.
RunConfig load_config(const std::string& path, const std::string& command = "",
                      const EnvLookup& env = process_env);

/// Typed accessors for resolved values. Throw ConfigError with the path on mismatch.
double get_number(const Json& v, const std::string& path);
int get_int(const Json& v, const std::string& path);
std::string get_string(const Json& v, const std::string& path);
bool get_bool(const Json& v, const std::string& path);
std::vector<double> get_numbers(const Json& v, const std::string& path);
std::vector<std::string> get_strings(const Json& v, const std::string& path);
/// Rows of equal length; an empty array gives a 0×0 matrix.
Mat get_matrix(const Json& v, const std::string& path);

/// Looks up "a.b.c".
const Json& at_path(const Json& root, const std::string& path);

} // namespace gdich::app
