#include "gdich/app/run.hpp"

#include "gdich/csv.hpp"
#include "gdich/parallel.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

namespace gdich::app {

namespace fs = std::filesystem;

namespace {

void write_json(const fs::path& p, const Json& j) {
    std::ofstream os(p);
    if (!os) throw Error("cannot write " + p.string());
    os << j.dump(2) << '\n';
}

fs::path resolve_out(const RunOptions& opts, const RunConfig& cfg) {
    if (!opts.out_dir.empty()) return fs::path(opts.out_dir);
    fs::path p(get_string(at_path(cfg.values, "output.dir"), "output.dir"));
    return p.is_relative() ? cfg.base_dir / p : p;
}

} // namespace

Json make_report(const RunConfig& cfg, const PipelineResult& res, int exit_code) {
    Json config = cfg.values;
    config.erase("output");
    Json tables = Json::array();
    for (const auto& t : res.tables) tables.push_back(t.file);
    return {{"tool", {{"name", "gdich"}, {"version", kVersion}}},
            {"command", cfg.command},
            {"config", config},
            {"overrides", cfg.overrides},
            {"certificates", res.certificates},
            {"pass", res.pass},
            {"exit_code", exit_code},
            {"tables", tables}};
}

int run(const RunOptions& opts, std::ostream& out, std::ostream& err) {
    std::optional<fs::path> out_dir;
    try {
        if (opts.threads < 0) throw ConfigError("--threads: must be nonnegative");
        if (opts.threads > 0) set_max_threads(static_cast<unsigned>(opts.threads));
        RunConfig cfg = load_config(opts.config_path, opts.command);
        if (cfg.command.empty()) throw ConfigError("command: none given on the command line or in the config");
        out_dir = resolve_out(opts, cfg);
        fs::create_directories(*out_dir);

        Logger log;
        if (opts.verbose) log = [&err](const std::string& m) { err << "[gdich] " << m << '\n'; };
        for (const auto& o : cfg.overrides) err << "[gdich] override " << o << '\n';

        const PipelineResult res = run_pipeline(cfg, log);
        const int code = res.pass ? kPass : kFail;
        for (const auto& t : res.tables) write_csv((*out_dir / t.file).string(), t.data);
        write_json(*out_dir / "report.json", make_report(cfg, res, code));
        write_json(*out_dir / "timings.json", res.timings);

        out << cfg.command << ": " << (res.pass ? "PASS" : "FAIL") << '\n';
        for (const auto& [name, c] : res.certificates.items()) {
            const auto it = c.find("pass");
            if (it != c.end() && it->is_boolean())
                out << "  " << name << ": " << (it->get<bool>() ? "pass" : "FAIL") << '\n';
        }
        out << "  output: " << out_dir->string() << '\n';
        return code;
    } catch (const std::exception& e) {
        err << "gdich: error: " << e.what() << '\n';
        if (out_dir) {
            try {
                write_json(*out_dir / "report.json",
                           {{"tool", {{"name", "gdich"}, {"version", kVersion}}},
                            {"error", e.what()},
                            {"pass", false},
                            {"exit_code", int(kError)}});
            } catch (const std::exception&) {
            }
        }
        return kError;
    }
}

} // namespace gdich::app
