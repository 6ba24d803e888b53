#include "gdich/app/config.hpp"

#include "toml.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace gdich::app {

namespace {

enum class Kind { Number, Integer, String, Bool, Numbers, Strings, Matrix, Table };

Json build_defaults() {
    Json d;
    d["command"] = "";
    d["seed"] = 20240601;
    d["system"] = {{"kind", "example22"},
                   {"eta", {1.0, 0.1, 1.0}},
                   {"hats", {"exp", "exp", "expabs", "expabs"}},
                   {"diag", {-1.0, 1.0}},
                   {"matrix", Json::array()},
                   {"w1", Json::array()},
                   {"w2", Json::array()},
                   {"csv", ""}};
    d["rates"] = {{"h", nullptr}, {"k", nullptr}, {"mu", nullptr}, {"nu", nullptr}};
    d["dichotomy"] = {{"K", nullptr}, {"a", nullptr}, {"b", nullptr}, {"eps", nullptr}, {"P", nullptr}};
    d["grid"] = {{"t_lo", -6.0}, {"t_hi", 6.0}, {"step", 0.5}};
    d["integrator"] = {{"rel_tol", 1e-9}, {"abs_tol", 1e-12}, {"max_step", 0.5}, {"cell", 1.0}, {"blowup", 1e12}};
    d["quadrature"] = {{"rel_tol", 1e-10}, {"abs_tol", 1e-14}, {"tail_tol", 1e-8}};
    d["tolerances"] = {{"verify", 1e-6},      {"commute", 1e-8},    {"evolve", 1e-7},
                       {"cocycle", 1e-7},     {"derivative", 1e-8}, {"semigroup", 1e-6},
                       {"contraction_slack", 0.05}, {"roundtrip", 1e-5},
                       {"conjugation", 1e-5}, {"invariance", 1e-4}, {"regression", 0.1}};
    d["rates_check"] = {{"probe_lo", -5.0}, {"probe_hi", 5.0}, {"probe_count", 21}};
    d["evolve"] = {{"pairs", 50}, {"t_lo", -5.0}, {"t_hi", 5.0}};
    d["estimate"] = {{"eps", -1.0}};
    d["spectrum"] = {{"horizon", 50.0}, {"eps_tilde", 0.1}, {"verify_hi", 10.0}, {"verify_step", 0.5}};
    d["lyapunov"] = {{"dbar", 0.5}, {"t_lo", -1.0}, {"t_hi", 1.0}, {"step", 0.1}};
    d["robust"] = {{"c", 0.05},        {"omega", 2.0},        {"decay", 2.0},
                   {"B", {{0.0, 1.0}, {1.0, 0.0}}},          {"fp_tol", 1e-10},
                   {"n_lo", -10.0},    {"n_hi", 10.0},        {"n_count", 81},
                   {"starts", {0.0, 1.0, 2.0}},              {"proj_lo", -5.0},
                   {"proj_hi", 5.0},   {"proj_step", 0.5},    {"verify_lo", -3.0},
                   {"verify_hi", 3.0}, {"verify_step", 0.5},  {"semigroup_t_max", 5.0},
                   {"step", 0.05},     {"window", 0.0}};
    d["conjugacy"] = {{"term", "smooth_sat"}, {"alpha0", 0.1}, {"step", 0.025}, {"t_lo", -5.0},
                      {"t_hi", 5.0},          {"ts", {0.0}},   {"box_lo", -1.0}, {"box_hi", 1.0},
                      {"per_axis", 9},        {"horizon", 5.0},  {"fp_tol", 1e-12},
                      {"tail_tol", 1e-9}};
    d["manifold"] = {{"term", "swap_cubic"}, {"g", 1e-3},          {"lambda", 1.0},
                     {"lambda_lo", 0.0},     {"lambda_hi", 1.5},   {"lambdas", {0.0, 0.5, 1.0, 1.5}},
                     {"starts", {0.0, 1.0, 2.0}}, {"kappas", {0.5, 1.0, 2.0}},
                     {"shells", 10},         {"step", 0.025},      {"slice_step", 0.05},
                     {"radius", 0.0},        {"fp_tol", 1e-10},    {"inner_fp_tol", 1e-13},
                     {"tail_tol", 1e-10}};
    d["output"] = {{"dir", "out"}};
    return d;
}

const std::map<std::string, Kind>& explicit_kinds() {
    static const std::map<std::string, Kind> m{
        {"rates.h", Kind::String},     {"rates.k", Kind::String},   {"rates.mu", Kind::String},
        {"rates.nu", Kind::String},    {"dichotomy.K", Kind::Number}, {"dichotomy.a", Kind::Number},
        {"dichotomy.b", Kind::Number}, {"dichotomy.eps", Kind::Number}, {"dichotomy.P", Kind::Matrix},
        {"system.matrix", Kind::Matrix}, {"system.w1", Kind::Matrix}, {"system.w2", Kind::Matrix},
        {"robust.B", Kind::Matrix}};
    return m;
}

Kind kind_of(const std::string& path, const Json& def) {
    const auto& m = explicit_kinds();
    if (auto it = m.find(path); it != m.end()) return it->second;
    if (def.is_object()) return Kind::Table;
    if (def.is_boolean()) return Kind::Bool;
    if (def.is_string()) return Kind::String;
    if (def.is_number_integer()) return Kind::Integer;
    if (def.is_number()) return Kind::Number;
    if (def.is_array() && !def.empty() && def[0].is_string()) return Kind::Strings;
    return Kind::Numbers;
}

const char* kind_name(Kind k) {
    switch (k) {
    case Kind::Number: return "a number";
    case Kind::Integer: return "an integer";
    case Kind::String: return "a string";
    case Kind::Bool: return "a boolean";
    case Kind::Numbers: return "an array of numbers";
    case Kind::Strings: return "an array of strings";
    case Kind::Matrix: return "an array of number rows";
    case Kind::Table: return "a table";
    }
    return "?";
}

bool all_numbers(const Json& a) {
    return std::all_of(a.begin(), a.end(), [](const Json& x) { return x.is_number(); });
}

/// Checks `v` against the expected kind and returns it normalized (integers of
/// number-typed keys become doubles).
std::optional<Json> coerce(const Json& v, Kind k) {
    switch (k) {
    case Kind::Number:
        if (v.is_number()) return Json(v.get<double>());
        return std::nullopt;
    case Kind::Integer:
        if (v.is_number_integer()) return v;
        return std::nullopt;
    case Kind::String:
        if (v.is_string()) return v;
        return std::nullopt;
    case Kind::Bool:
        if (v.is_boolean()) return v;
        return std::nullopt;
    case Kind::Numbers: {
        if (!v.is_array() || !all_numbers(v)) return std::nullopt;
        Json out = Json::array();
        for (const auto& x : v) out.push_back(x.get<double>());
        return out;
    }
    case Kind::Strings:
        if (!v.is_array() || !std::all_of(v.begin(), v.end(), [](const Json& x) { return x.is_string(); }))
            return std::nullopt;
        return v;
    case Kind::Matrix: {
        if (!v.is_array()) return std::nullopt;
        Json out = Json::array();
        for (const auto& row : v) {
            if (!row.is_array() || !all_numbers(row)) return std::nullopt;
            Json r = Json::array();
            for (const auto& x : row) r.push_back(x.get<double>());
            out.push_back(r);
        }
        return out;
    }
    case Kind::Table:
        return std::nullopt;
    }
    return std::nullopt;
}

void merge(const Json& user, const Json& def, Json& out, const std::string& prefix, std::vector<std::string>& errors) {
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!def.contains(it.key())) {
            errors.push_back(path + ": unknown key");
            continue;
        }
        const Json& d = def.at(it.key());
        const Kind k = kind_of(path, d);
        if (k == Kind::Table) {
            if (!it.value().is_object()) {
                errors.push_back(path + ": expected a table");
                continue;
            }
            merge(it.value(), d, out[it.key()], path, errors);
            continue;
        }
        const auto v = coerce(it.value(), k);
        if (!v) {
            errors.push_back(path + ": expected " + std::string(kind_name(k)));
            continue;
        }
        out[it.key()] = *v;
    }
}

Json toml_to_json(const toml::node& n, const std::string& path, std::vector<std::string>& errors) {
    if (const auto* t = n.as_table()) {
        Json o = Json::object();
        for (auto&& [k, v] : *t) {
            const std::string key(k.str());
            o[key] = toml_to_json(v, path.empty() ? key : path + "." + key, errors);
        }
        return o;
    }
    if (const auto* a = n.as_array()) {
        Json arr = Json::array();
        for (std::size_t i = 0; i < a->size(); ++i)
            arr.push_back(toml_to_json(*a->get(i), path + "[" + std::to_string(i) + "]", errors));
        return arr;
    }
    if (const auto* v = n.as_integer()) return Json(v->get());
    if (const auto* v = n.as_floating_point()) return Json(v->get());
    if (const auto* v = n.as_boolean()) return Json(v->get());
    if (const auto* v = n.as_string()) return Json(v->get());
    errors.push_back(path + ": unsupported value type");
    return nullptr;
}

std::string upper(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

[[noreturn]] void fail(const std::vector<std::string>& errors, const std::string& source) {
    std::ostringstream os;
    os << source << ": " << errors.size() << " configuration error" << (errors.size() > 1 ? "s" : "");
    for (const auto& e : errors) os << "\n  " << e;
    throw ConfigError(os.str());
}

} // namespace

const Json& default_config() {
    static const Json d = build_defaults();
    return d;
}

const std::vector<std::string>& known_commands() {
    static const std::vector<std::string> c{"rates",     "evolve",           "dichotomy.verify", "dichotomy.estimate",
                                            "spectrum",  "lyapunov.construct", "lyapunov.check",  "robust",
                                            "conjugacy", "manifold"};
    return c;
}

std::optional<std::string> process_env(const std::string& name) {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
}

RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir, const std::string& command,
                       const EnvLookup& env, const std::string& source) {
    std::vector<std::string> errors;
    toml::table tbl;
    try {
        tbl = toml::parse(text, source);
    } catch (const toml::parse_error& e) {
        std::ostringstream os;
        os << source << ":" << e.source().begin.line << ":" << e.source().begin.column << ": "
           << e.description();
        throw ConfigError(os.str());
    }
    const Json user = toml_to_json(tbl, "", errors);
    RunConfig cfg;
    cfg.base_dir = base_dir;
    cfg.values = default_config();
    if (errors.empty()) merge(user, default_config(), cfg.values, "", errors);

    for (auto it = default_config()["tolerances"].begin(); it != default_config()["tolerances"].end(); ++it) {
        const std::string var = "GDICH_TOL_" + upper(it.key());
        const auto v = env(var);
        if (!v) continue;
        std::size_t used = 0;
        double x = 0.0;
        try {
            x = std::stod(*v, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != v->size() || !std::isfinite(x)) {
            errors.push_back(var + ": expected a number, got '" + *v + "'");
            continue;
        }
        cfg.values["tolerances"][it.key()] = x;
        cfg.overrides.push_back(var);
    }

    cfg.command = command.empty() ? cfg.values["command"].get<std::string>() : command;
    const auto& known = known_commands();
    if (cfg.command.empty())
        errors.push_back("command: missing (give a subcommand or set `command`)");
    else if (std::find(known.begin(), known.end(), cfg.command) == known.end())
        errors.push_back("command: unknown command '" + cfg.command + "'");
    cfg.values["command"] = cfg.command;

    for (auto it = cfg.values["tolerances"].begin(); it != cfg.values["tolerances"].end(); ++it)
        if (!(it.value().get<double>() > 0.0)) errors.push_back("tolerances." + it.key() + ": must be positive");
    if (!errors.empty()) fail(errors, source);
    return cfg;
}

RunConfig load_config(const std::string& path, const std::string& command, const EnvLookup& env) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    const auto base = std::filesystem::absolute(path).parent_path();
    return parse_config(ss.str(), base, command, env, path);
}

const Json& at_path(const Json& root, const std::string& path) {
    const Json* cur = &root;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!cur->is_object() || !cur->contains(key)) throw ConfigError(path + ": missing");
        cur = &(*cur)[key];
        if (dot == std::string::npos) return *cur;
        start = dot + 1;
    }
}

double get_number(const Json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path + ": expected a number");
    return v.get<double>();
}

int get_int(const Json& v, const std::string& path) {
    if (!v.is_number_integer()) throw ConfigError(path + ": expected an integer");
    return v.get<int>();
}

std::string get_string(const Json& v, const std::string& path) {
    if (!v.is_string()) throw ConfigError(path + ": expected a string");
    return v.get<std::string>();
}

bool get_bool(const Json& v, const std::string& path) {
    if (!v.is_boolean()) throw ConfigError(path + ": expected a boolean");
    return v.get<bool>();
}

std::vector<double> get_numbers(const Json& v, const std::string& path) {
    if (!v.is_array() || !all_numbers(v)) throw ConfigError(path + ": expected an array of numbers");
    return v.get<std::vector<double>>();
}

std::vector<std::string> get_strings(const Json& v, const std::string& path) {
    if (!v.is_array()) throw ConfigError(path + ": expected an array of strings");
    std::vector<std::string> out;
    for (const auto& x : v) out.push_back(get_string(x, path));
    return out;
}

Mat get_matrix(const Json& v, const std::string& path) {
    if (!v.is_array()) throw ConfigError(path + ": expected an array of number rows");
    if (v.empty()) return Mat(0, 0);
    const auto rows = static_cast<Eigen::Index>(v.size());
    const auto cols = static_cast<Eigen::Index>(v[0].size());
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const Json& r = v[static_cast<std::size_t>(i)];
        if (!r.is_array() || static_cast<Eigen::Index>(r.size()) != cols || !all_numbers(r))
            throw ConfigError(path + ": rows must be number arrays of equal length");
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = r[static_cast<std::size_t>(j)].get<double>();
    }
    return m;
}

} // namespace gdich::app
