#pragma once

// JSON problem descriptions: agents, scenario tree, evaluation queries and
// sweep settings, plus the textual point grammar used by --at.
//
//   {"agents": [{"kind": "exponential", "rate": 1.0},
//               {"kind": "mixture", "weights": [1, 2], "rates": [0.5, 3]}],
//    "tree": {"p": [0.5, 0.5], "children": [{"sigma0": 0, "psi": [1]},
//                                           {"sigma0": 0, "psi": [-1]}]},
//    "queries": [{"what": "r", "at": "v=1,1;x=0"}],
//    "sweep": {"seed": 7, "n_points": 50}}

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "saddlefield/errors.hpp"
#include "saddlefield/points.hpp"
#include "saddlefield/scenario_tree.hpp"
#include "saddlefield/utility.hpp"
#include "saddlefield/verification.hpp"

namespace saddlefield {

using json = nlohmann::json;

struct Query {
    std::string what;
    std::string at;
    std::optional<std::string> node;

    bool operator==(const Query&) const = default;
};

struct ProblemConfig {
    AgentSet agents;
    TreeNodeSpec tree;
    std::vector<Query> queries;
    std::optional<SweepConfig> sweep;

    Problem problem() const { return Problem{agents, ScenarioTree(tree)}; }

    bool operator==(const ProblemConfig&) const = default;
};

namespace detail {

inline std::string ptr(const std::string& base, const std::string& key) { return base + "/" + key; }
inline std::string ptr(const std::string& base, std::size_t i) { return base + "/" + std::to_string(i); }

[[noreturn]] inline void config_error(const std::string& where, const std::string& what) {
    throw ConfigError("config " + (where.empty() ? std::string("/") : where) + ": " + what);
}

inline void allow_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
    if (!j.is_object()) config_error(where, "expected an object");
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key)) config_error(ptr(where, key), "unknown key");
    }
}

inline const json& require(const json& j, const std::string& where, const char* key) {
    if (!j.contains(key)) config_error(ptr(where, key), "missing required key");
    return j.at(key);
}

inline double number(const json& j, const std::string& where) {
    if (!j.is_number()) config_error(where, "expected a number");
    const double x = j.get<double>();
    if (!std::isfinite(x)) config_error(where, "expected a finite number");
    return x;
}

inline double positive(const json& j, const std::string& where) {
    const double x = number(j, where);
    if (!(x > 0.0)) config_error(where, "expected a positive number");
    return x;
}

inline std::vector<double> numbers(const json& j, const std::string& where) {
    if (!j.is_array()) config_error(where, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], ptr(where, i)));
    return out;
}

inline std::pair<double, double> range(const json& j, const std::string& where) {
    const auto xs = numbers(j, where);
    if (xs.size() != 2 || !(xs[0] < xs[1])) config_error(where, "expected [lo, hi] with lo < hi");
    return {xs[0], xs[1]};
}

inline std::string text(const json& j, const std::string& where) {
    if (!j.is_string()) config_error(where, "expected a string");
    return j.get<std::string>();
}

inline UtilitySpec parse_agent(const json& j, const std::string& where) {
    if (!j.is_object()) config_error(where, "expected an object");
    const std::string kind = text(require(j, where, "kind"), ptr(where, "kind"));
    if (kind == "exponential") {
        allow_keys(j, where, {"kind", "rate"});
        return UtilitySpec::exponential(positive(require(j, where, "rate"), ptr(where, "rate")));
    }
    if (kind == "mixture") {
        allow_keys(j, where, {"kind", "weights", "rates"});
        const auto w = numbers(require(j, where, "weights"), ptr(where, "weights"));
        const auto r = numbers(require(j, where, "rates"), ptr(where, "rates"));
        if (w.empty()) config_error(ptr(where, "weights"), "expected at least one term");
        if (w.size() != r.size()) config_error(ptr(where, "rates"), "must have the same length as weights");
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (!(w[i] > 0.0)) config_error(ptr(ptr(where, "weights"), i), "expected a positive number");
            if (!(r[i] > 0.0)) config_error(ptr(ptr(where, "rates"), i), "expected a positive number");
        }
        return UtilitySpec::mixture(w, r);
    }
    config_error(ptr(where, "kind"), "expected \"exponential\" or \"mixture\", got \"" + kind + "\"");
}

inline TreeNodeSpec parse_node(const json& j, const std::string& where) {
    if (!j.is_object()) config_error(where, "expected a tree node object");
    TreeNodeSpec node;
    if (j.contains("children")) {
        allow_keys(j, where, {"p", "children"});
        const json& kids = j.at("children");
        if (!kids.is_array() || kids.empty()) config_error(ptr(where, "children"), "expected a nonempty array");
        node.p = numbers(require(j, where, "p"), ptr(where, "p"));
        if (node.p.size() != kids.size()) {
            config_error(ptr(where, "p"), "has " + std::to_string(node.p.size()) + " entries for " +
                                              std::to_string(kids.size()) + " children");
        }
        for (std::size_t i = 0; i < kids.size(); ++i) node.children.push_back(parse_node(kids[i], ptr(ptr(where, "children"), i)));
        return node;
    }
    allow_keys(j, where, {"sigma0", "psi"});
    node.sigma0 = j.contains("sigma0") ? number(j.at("sigma0"), ptr(where, "sigma0")) : 0.0;
    node.psi = j.contains("psi") ? numbers(j.at("psi"), ptr(where, "psi")) : std::vector<double>{};
    return node;
}

inline SweepConfig parse_sweep(const json& j, const std::string& where) {
    allow_keys(j, where,
               {"seed", "n_points", "v_log_range", "x_range", "q_range", "normalize_v", "fd_step", "hessian_step",
                "g_step", "envelope_step", "tolerances", "c", "boundary_x", "boundary_max_n"});
    SweepConfig s;
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_unsigned()) config_error(ptr(where, "seed"), "expected a nonnegative integer");
        s.seed = j.at("seed").get<std::uint64_t>();
    }
    if (j.contains("n_points")) {
        if (!j.at("n_points").is_number_integer() || j.at("n_points").get<long long>() < 1) {
            config_error(ptr(where, "n_points"), "expected a positive integer");
        }
        s.n_points = j.at("n_points").get<int>();
    }
    if (j.contains("v_log_range")) {
        s.v_log_range = range(j.at("v_log_range"), ptr(where, "v_log_range"));
        if (!(s.v_log_range.first > 0.0)) config_error(ptr(where, "v_log_range"), "must be positive");
    }
    if (j.contains("x_range")) s.x_range = range(j.at("x_range"), ptr(where, "x_range"));
    if (j.contains("q_range")) s.q_range = range(j.at("q_range"), ptr(where, "q_range"));
    if (j.contains("normalize_v")) {
        if (!j.at("normalize_v").is_boolean()) config_error(ptr(where, "normalize_v"), "expected true or false");
        s.normalize_v = j.at("normalize_v").get<bool>();
    }
    if (j.contains("fd_step")) s.fd_step = positive(j.at("fd_step"), ptr(where, "fd_step"));
    if (j.contains("hessian_step")) s.hessian_step = positive(j.at("hessian_step"), ptr(where, "hessian_step"));
    if (j.contains("g_step")) s.g_step = positive(j.at("g_step"), ptr(where, "g_step"));
    if (j.contains("envelope_step")) s.envelope_step = positive(j.at("envelope_step"), ptr(where, "envelope_step"));
    if (j.contains("tolerances")) {
        const json& t = j.at("tolerances");
        if (!t.is_object()) config_error(ptr(where, "tolerances"), "expected an object of check name to tolerance");
        for (const auto& [name, value] : t.items()) {
            const double tol = number(value, ptr(ptr(where, "tolerances"), name));
            if (tol < 0.0) config_error(ptr(ptr(where, "tolerances"), name), "expected a nonnegative number");
            s.tolerances[name] = tol;
        }
    }
    if (j.contains("c")) s.c_override = positive(j.at("c"), ptr(where, "c"));
    if (j.contains("boundary_x")) s.boundary_x = number(j.at("boundary_x"), ptr(where, "boundary_x"));
    if (j.contains("boundary_max_n")) {
        s.boundary_max_n = positive(j.at("boundary_max_n"), ptr(where, "boundary_max_n"));
        if (s.boundary_max_n < 100.0) config_error(ptr(where, "boundary_max_n"), "must be at least 100");
    }
    return s;
}

inline json node_to_json(const TreeNodeSpec& n) {
    if (n.is_leaf()) return json{{"sigma0", n.sigma0}, {"psi", n.psi}};
    json kids = json::array();
    for (const auto& c : n.children) kids.push_back(node_to_json(c));
    return json{{"p", n.p}, {"children", kids}};
}

}  // namespace detail

/// Parses a problem description; every error names the offending JSON path.
inline ProblemConfig parse_config(const json& j) {
    using namespace detail;
    allow_keys(j, "", {"agents", "tree", "queries", "sweep"});
    ProblemConfig cfg;
    const json& agents = require(j, "", "agents");
    if (!agents.is_array() || agents.empty()) config_error("/agents", "expected a nonempty array");
    std::vector<UtilitySpec> specs;
    for (std::size_t i = 0; i < agents.size(); ++i) {
        try {
            specs.push_back(parse_agent(agents[i], ptr("/agents", i)));
        } catch (const DomainError& e) {
            config_error(ptr("/agents", i), e.what());
        }
    }
    cfg.agents = AgentSet(specs);

    cfg.tree = j.contains("tree") ? parse_node(j.at("tree"), "/tree") : TreeNodeSpec{};
    try {
        ScenarioTree check(cfg.tree);
    } catch (const ConfigError& e) {
        config_error("/tree", e.what());
    }

    if (j.contains("queries")) {
        const json& qs = j.at("queries");
        if (!qs.is_array()) config_error("/queries", "expected an array");
        for (std::size_t i = 0; i < qs.size(); ++i) {
            const std::string where = ptr("/queries", i);
            allow_keys(qs[i], where, {"what", "at", "node"});
            Query q;
            q.what = text(require(qs[i], where, "what"), ptr(where, "what"));
            q.at = qs[i].contains("at") ? text(qs[i].at("at"), ptr(where, "at")) : std::string();
            if (qs[i].contains("node")) q.node = text(qs[i].at("node"), ptr(where, "node"));
            cfg.queries.push_back(q);
        }
    }
    if (j.contains("sweep")) cfg.sweep = parse_sweep(j.at("sweep"), "/sweep");
    return cfg;
}

inline ProblemConfig parse_config_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    return parse_config(j);
}

inline ProblemConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

inline json to_json(const UtilitySpec& u) {
    if (u.kind() == UtilitySpec::Kind::exponential) return json{{"kind", "exponential"}, {"rate", u.terms()[0].rate}};
    json w = json::array(), r = json::array();
    for (const auto& t : u.terms()) {
        w.push_back(t.weight);
        r.push_back(t.rate);
    }
    return json{{"kind", "mixture"}, {"weights", w}, {"rates", r}};
}

inline json to_json(const SweepConfig& s) {
    json j{{"seed", s.seed},
           {"n_points", s.n_points},
           {"v_log_range", {s.v_log_range.first, s.v_log_range.second}},
           {"x_range", {s.x_range.first, s.x_range.second}},
           {"q_range", {s.q_range.first, s.q_range.second}},
           {"normalize_v", s.normalize_v},
           {"fd_step", s.fd_step},
           {"hessian_step", s.hessian_step},
           {"g_step", s.g_step},
           {"envelope_step", s.envelope_step},
           {"tolerances", s.tolerances},
           {"boundary_x", s.boundary_x},
           {"boundary_max_n", s.boundary_max_n}};
    if (s.c_override) j["c"] = *s.c_override;
    return j;
}

inline json to_json(const ProblemConfig& cfg) {
    json agents = json::array();
    for (const auto& u : cfg.agents.agents()) agents.push_back(to_json(u));
    json j{{"agents", agents}, {"tree", detail::node_to_json(cfg.tree)}};
    if (!cfg.queries.empty()) {
        json qs = json::array();
        for (const auto& q : cfg.queries) {
            json e{{"what", q.what}, {"at", q.at}};
            if (q.node) e["node"] = *q.node;
            qs.push_back(e);
        }
        j["queries"] = qs;
    }
    if (cfg.sweep) j["sweep"] = to_json(*cfg.sweep);
    return j;
}

/// "level:index".
inline NodeRef parse_node_ref(const std::string& s) {
    const auto colon = s.find(':');
    try {
        if (colon == std::string::npos) throw std::invalid_argument("colon");
        std::size_t used = 0;
        const int level = std::stoi(s.substr(0, colon), &used);
        if (used != colon) throw std::invalid_argument("level");
        const std::string rest = s.substr(colon + 1);
        const int index = std::stoi(rest, &used);
        if (used != rest.size()) throw std::invalid_argument("index");
        return {level, index};
    } catch (const std::exception&) {
        throw ConfigError("node '" + s + "': expected level:index, e.g. 0:0");
    }
}

/// Point grammar: semicolon-separated key=value pairs, vectors as comma lists.
/// Primal: "v=1,2;x=0;q=0.5"; dual: "u=-1,-0.5;y=1;q=". q may be omitted
/// when there are no assets and y defaults to 1.
inline std::variant<PrimalPoint, DualPoint> parse_point(const std::string& spec) {
    std::map<std::string, std::vector<double>> fields;
    std::stringstream ss(spec);
    std::string part;
    while (std::getline(ss, part, ';')) {
        if (part.find_first_not_of(" \t") == std::string::npos) continue;
        const auto eq = part.find('=');
        if (eq == std::string::npos) throw ConfigError("--at: '" + part + "' is not key=value");
        std::string key = part.substr(0, eq);
        key.erase(0, key.find_first_not_of(" \t"));
        key.erase(key.find_last_not_of(" \t") + 1);
        if (key != "v" && key != "x" && key != "q" && key != "u" && key != "y") {
            throw ConfigError("--at: unknown key '" + key + "' (expected v, x, q, u or y)");
        }
        if (fields.count(key)) throw ConfigError("--at: key '" + key + "' given twice");
        std::vector<double> values;
        std::stringstream vs(part.substr(eq + 1));
        std::string item;
        while (std::getline(vs, item, ',')) {
            if (item.find_first_not_of(" \t") == std::string::npos) continue;
            try {
                std::size_t used = 0;
                values.push_back(std::stod(item, &used));
                if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
            } catch (const std::exception&) {
                throw ConfigError("--at: '" + item + "' is not a number (key " + key + ")");
            }
        }
        fields[key] = values;
    }
    auto scalar = [&](const std::string& key, double fallback) {
        auto it = fields.find(key);
        if (it == fields.end()) return fallback;
        if (it->second.size() != 1) throw ConfigError("--at: " + key + " must be a single number");
        return it->second[0];
    };
    auto vector_of = [&](const std::string& key) {
        const auto& xs = fields[key];
        return Vector(Eigen::Map<const Vector>(xs.data(), static_cast<Index>(xs.size())));
    };
    const bool primal = fields.count("v") > 0;
    const bool dual = fields.count("u") > 0;
    if (primal == dual) throw ConfigError("--at: give exactly one of v=... (primal) or u=... (dual)");
    if (primal) {
        if (fields.count("y")) throw ConfigError("--at: y belongs to a dual point");
        if (!fields.count("x")) throw ConfigError("--at: primal point needs x=...");
        return PrimalPoint{vector_of("v"), scalar("x", 0.0), vector_of("q")};
    }
    if (fields.count("x")) throw ConfigError("--at: x belongs to a primal point");
    return DualPoint{vector_of("u"), scalar("y", 1.0), vector_of("q")};
}

}  // namespace saddlefield
