#pragma once

#include "gdich/app/config.hpp"
#include "gdich/csv.hpp"
#include "gdich/dichotomy.hpp"
#include "gdich/evolution.hpp"
#include "gdich/spec.hpp"
#include "gdich/system.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace gdich::app {

struct Table {
    std::string file;
    CsvTable data;
};

struct PipelineResult {
    Json certificates = Json::object();
    bool pass = true;
    std::vector<Table> tables;
    Json timings = Json::object();  ///< stage name -> seconds
};

using Logger = std::function<void(const std::string&)>;

/// The selected system and what can be derived from it.
struct SystemSetup {
    CoefficientField field;
    std::optional<std::function<Mat(double, double)>> closed_form;  ///< T(t,s) when known
    std::optional<ProjectionFamily> P;
    std::optional<DichotomySpec> spec;       ///< constants known for the system
    std::optional<BlockSystem> block;
    std::vector<std::string> rate_names;     ///< defaults for [rates]
};

SystemSetup build_system(const RunConfig& cfg);

/// Fills the optional [rates] and [dichotomy] keys of cfg.values from the system and
/// returns the resulting spec. Without constants (K, a, b, eps) in either place a
/// ConfigError names the missing keys unless `need_constants` is false.
DichotomySpec resolve_spec(RunConfig& cfg, const SystemSetup& sys, bool need_constants = true);

IntegratorConfig integrator_config(const RunConfig& cfg);

/// t,s,stable_ratio,unstable_ratio. An empty certificate gives the header only.
CsvTable ratios_table(const Certificate& cert);

Json certificate_json(const Certificate& cert);

/// Runs cfg.command. Library errors propagate; a failed check only clears `pass`.
PipelineResult run_pipeline(RunConfig& cfg, const Logger& log = {});

} // namespace gdich::app
