#pragma once

#include "gdich/app/pipelines.hpp"

#include <iosfwd>
#include <string>

namespace gdich::app {

inline constexpr const char* kVersion = "0.1.0";

struct RunOptions {
    std::string config_path;
    std::string command;   ///< empty: take the config's command
    std::string out_dir;   ///< empty: output.dir of the config, relative to the config file
    int threads = 0;       ///< 0 keeps the default
    bool verbose = false;
};

/// Exit codes: 0 every check passed, 2 a check failed, 1 configuration or numerical error.
enum ExitCode : int { kPass = 0, kError = 1, kFail = 2 };

/// Loads the config, runs the pipeline and writes report.json, timings.json and the
/// CSV tables. Errors are reported on `err`.
int run(const RunOptions& opts, std::ostream& out, std::ostream& err);

/// The report without timings; identical across runs of the same config.
Json make_report(const RunConfig& cfg, const PipelineResult& res, int exit_code);

} // namespace gdich::app
