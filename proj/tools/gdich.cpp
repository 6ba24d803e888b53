#include "gdich/app/run.hpp"

#include "CLI11.hpp"

#include <iostream>

int main(int argc, char** argv) {
    using namespace gdich::app;
    RunOptions opts;
    CLI::App app{"Generalized exponential dichotomies: verification and constructions"};
    app.set_version_flag("--version", std::string(kVersion));
    app.add_option("-c,--config", opts.config_path, "TOML configuration file")->required()->check(CLI::ExistingFile);
    app.add_option("-o,--out", opts.out_dir, "output directory (default: output.dir of the config)");
    app.add_option("-j,--threads", opts.threads, "worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
    app.add_flag("-v,--verbose", opts.verbose, "progress on stderr");
    app.require_subcommand(0, 1);

    struct Cmd {
        CLI::App* app;
        std::string name;
    };
    std::vector<Cmd> cmds;
    auto leaf = [&](CLI::App* parent, const std::string& name, const std::string& full, const std::string& help) {
        cmds.push_back({parent->add_subcommand(name, help), full});
    };
    leaf(&app, "rates", "rates", "validate the growth rates");
    leaf(&app, "evolve", "evolve", "evolution operator against the closed form");
    auto* dich = app.add_subcommand("dichotomy", "dichotomy certificates")->require_subcommand(1);
    leaf(dich, "verify", "dichotomy.verify", "verify the dichotomy bounds on a grid");
    leaf(dich, "estimate", "dichotomy.estimate", "fit the constants and re-verify");
    leaf(&app, "spectrum", "spectrum", "exponents of a block system");
    auto* lyap = app.add_subcommand("lyapunov", "quadratic Lyapunov function")->require_subcommand(1);
    leaf(lyap, "construct", "lyapunov.construct", "build S(t)");
    leaf(lyap, "check", "lyapunov.check", "build S(t) and check the derivative conditions");
    leaf(&app, "robust", "robust", "robustness under a linear perturbation");
    leaf(&app, "conjugacy", "conjugacy", "topological conjugacy with the linear flow");
    leaf(&app, "manifold", "manifold", "stable invariant manifold");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kError;
    }
    for (const auto& c : cmds)
        if (c.app->parsed()) opts.command = c.name;
    return run(opts, std::cout, std::cerr);
}
