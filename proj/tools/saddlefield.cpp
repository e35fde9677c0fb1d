#include <iostream>
#include <iterator>
#include <optional>
#include <string>
#include <variant>

#include "CLI11.hpp"
#include "saddlefield/config.hpp"
#include "saddlefield/field.hpp"
#include "saddlefield/verification.hpp"

using namespace saddlefield;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitDomain = 2;
constexpr int kExitSolver = 3;
constexpr int kExitChecksFailed = 4;

const char* kGrammar = R"(
Point grammar (--at):
  primal  v=V1,...,VM;x=X[;q=Q1,...,QJ]
  dual    u=U1,...,UM[;y=Y][;q=Q1,...,QJ]     y defaults to 1
  Fields are separated by ';', components by ','. Whitespace is ignored.
  q may be omitted or left empty when the tree has no assets.

Node grammar (--node):
  LEVEL:INDEX   level 0 is the root, INDEX counts nodes left to right.

Quantities (--what):
  r          aggregate utility r(v,x), allocation and multiplier (primal point)
  grad       value and gradient in (v,x,q); of F_t when --node is given
  hess       value, gradient and Hessian; of F_t when --node is given
  conjugate  saddle conjugate at a dual point (g, v, x) or a primal point (f, u, y)
  field      F_t at --node (root by default) with expected utilities, and the
             Pareto allocation when the node is terminal
  invert     X_t and normalized weights V_t solving U_t(V,X,q) = u at y = 1
  lemma19    risk-tolerance and direct assemblies of A(F_t) with the spectral bound

Exit codes:
  0 success   1 malformed input or config   2 domain error
  3 solver failure   4 verification checks failed
)";

json vec(const Vector& v) {
    json out = json::array();
    for (Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

json mat(const Matrix& m) {
    json out = json::array();
    for (Index i = 0; i < m.rows(); ++i) out.push_back(vec(m.row(i).transpose()));
    return out;
}

ProblemConfig read_config(const std::string& path) {
    if (path == "-") {
        const std::string text{std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>()};
        return parse_config_text(text);
    }
    return load_config(path);
}

PrimalPoint need_primal(const std::variant<PrimalPoint, DualPoint>& p, const std::string& what) {
    if (const auto* a = std::get_if<PrimalPoint>(&p)) return *a;
    throw ConfigError("--at: '" + what + "' needs a primal point v=...;x=...");
}

DualPoint need_dual(const std::variant<PrimalPoint, DualPoint>& p, const std::string& what) {
    if (const auto* b = std::get_if<DualPoint>(&p)) return *b;
    throw ConfigError("--at: '" + what + "' needs a dual point u=...;y=...");
}

json pair_json(const SaddlePair& s) {
    return {{"f", s.f_value}, {"g", s.g_value},     {"v", vec(s.primal.v)},
            {"x", s.primal.x}, {"u", vec(s.dual.u)}, {"y", s.dual.y},
            {"q", vec(s.primal.q)}, {"iterations", s.iterations}, {"residual", s.residual}};
}

json derivatives_json(const PrimalDerivatives& d, bool hessian) {
    json out = {{"value", d.value}, {"gradient", vec(d.gradient)}};
    if (hessian) out["hessian"] = mat(d.hessian);
    return out;
}

json evaluate(const Problem& problem, const std::string& what, const std::string& at,
              const std::optional<std::string>& node_text) {
    if (at.empty()) throw ConfigError("--at is required for '" + what + "'");
    const auto point = parse_point(at);
    const auto& agents = problem.agents;
    const auto& tree = problem.tree;
    const std::optional<NodeRef> node =
        node_text ? std::optional<NodeRef>(parse_node_ref(*node_text)) : std::nullopt;

    json out = {{"what", what}, {"at", at}};
    if (node) out["node"] = *node_text;

    if (what == "r") {
        const auto a = need_primal(point, what);
        const auto d = r_hessian(agents, a.v, a.x);
        out["value"] = d.value;
        out["lambda"] = d.allocation.lambda;
        out["x_hat"] = vec(d.allocation.x_hat);
        out["dr_dv"] = vec(d.dr_dv);
        out["dr_dx"] = d.dr_dx;
        out["total_tolerance"] = d.allocation.total_tolerance;
    } else if (what == "grad" || what == "hess") {
        const auto a = need_primal(point, what);
        const PrimalDerivatives d = node ? static_cast<PrimalDerivatives>(field_at(tree, agents, a, *node))
                                         : AggregateFunction(agents, a.q.size())(a);
        out.update(derivatives_json(d, what == "hess"));
    } else if (what == "conjugate") {
        auto solve = [&](const auto& f) {
            if (const auto* a = std::get_if<PrimalPoint>(&point)) return conjugate_point_from_primal(f, *a);
            return conjugate_point_from_dual(f, std::get<DualPoint>(point));
        };
        const SaddlePair s = node ? solve(NodeField(tree, agents, *node))
                                  : solve(AggregateFunction(agents, 0));
        out.update(pair_json(s));
    } else if (what == "field") {
        const auto a = need_primal(point, what);
        const NodeRef n = node.value_or(NodeRef{0, 0});
        out.update(derivatives_json(field_at(tree, agents, a, n), true));
        if (tree.is_leaf(n)) out["allocation"] = vec(pareto_allocation_field(tree, agents, a, n));
        out["expected_utility"] = vec(expected_utility_field(tree, agents, a, n));
    } else if (what == "invert") {
        const auto b = need_dual(point, what);
        if (b.y != 1.0) throw DomainError("invert: y must be 1");
        const auto r = invert_field(tree, agents, b.u, b.q, node.value_or(NodeRef{0, 0}));
        out["X"] = r.X;
        out["V"] = vec(r.V);
        out["conjugate"] = pair_json(r.pair);
    } else if (what == "lemma19") {
        const auto a = need_primal(point, what);
        const auto r = lemma19_matrix(tree, agents, a, node.value_or(NodeRef{0, 0}));
        const auto s = spectral_bound_check(r.risk_tolerance_form, agents.c());
        out["risk_tolerance_form"] = mat(r.risk_tolerance_form);
        out["direct_form"] = mat(r.direct_form);
        out["max_abs_difference"] = r.max_abs_difference;
        out["c"] = agents.c();
        out["spectral"] = {{"within", s.within}, {"min_eigenvalue", s.min_eigenvalue},
                           {"max_eigenvalue", s.max_eigenvalue}};
    } else {
        throw ConfigError("--what: unknown quantity '" + what + "'");
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Aggregate utilities, saddle conjugates and scenario-tree fields."};
    app.footer(kGrammar);
    app.require_subcommand(1);

    std::string config_path;
    std::string what;
    std::string at;
    std::string node;
    auto* eval = app.add_subcommand("eval", "Evaluate one quantity, or every query in the config when --what is absent.");
    eval->add_option("--config", config_path, "Problem config (JSON file, '-' for stdin)")->required();
    eval->add_option("--what", what, "r|grad|hess|conjugate|field|invert|lemma19")
        ->check(CLI::IsMember({"r", "grad", "hess", "conjugate", "field", "invert", "lemma19"}));
    eval->add_option("--at", at, "Point, see grammar below");
    eval->add_option("--node", node, "Tree node LEVEL:INDEX");

    std::string suite = "all";
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> points;
    std::optional<double> tol;
    std::optional<double> c;
    auto* verify = app.add_subcommand("verify", "Run a verification suite and print its reports.");
    verify->add_option("--config", config_path, "Problem config (JSON file, '-' for stdin)")->required();
    verify->add_option("--suite", suite, "Suite name or 'all'")->capture_default_str();
    verify->add_option("--seed", seed, "Sampler seed");
    verify->add_option("--points", points, "Points per check");
    verify->add_option("--tol", tol, "Tolerance applied to every check");
    verify->add_option("--c", c, "Override the bound constant c");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        const ProblemConfig cfg = read_config(config_path);
        const Problem problem = cfg.problem();

        if (*eval) {
            json out;
            if (!what.empty()) {
                out = evaluate(problem, what, at, node.empty() ? std::nullopt : std::optional<std::string>(node));
            } else {
                if (!at.empty() || !node.empty()) throw ConfigError("--at and --node need --what");
                out = {{"results", json::array()}};
                for (const auto& q : cfg.queries) out["results"].push_back(evaluate(problem, q.what, q.at, q.node));
            }
            std::cout << out.dump(2) << "\n";
            return 0;
        }

        SweepConfig sweep = cfg.sweep.value_or(SweepConfig{});
        if (seed) sweep.seed = *seed;
        if (points) sweep.n_points = *points;
        if (tol) sweep.tolerance_override = *tol;
        if (c) sweep.c_override = *c;
        sweep.validate();
        const auto reports = run_suite(suite, sweep, problem);
        const bool ok = all_passed(reports);
        std::size_t failed = 0;
        for (const auto& r : reports) {
            if (!r.passed) {
                ++failed;
                std::cerr << "FAILED " << r.name << ": " << r.worst_case << "\n";
            }
        }
        const json out = {{"suite", suite},
                          {"seed", sweep.seed},
                          {"n_points", sweep.n_points},
                          {"passed", ok},
                          {"failed", failed},
                          {"reports", reports}};
        std::cout << out.dump(2) << "\n";
        return ok ? 0 : kExitChecksFailed;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DomainError& e) {
        std::cerr << "domain error: " << e.what() << "\n";
        return kExitDomain;
    } catch (const RangeError& e) {
        std::cerr << "range error: " << e.what() << "\n";
        return kExitDomain;
    } catch (const SolverError& e) {
        std::cerr << "solver error: " << e.what() << "\n";
        return kExitSolver;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitSolver;
    }
}
