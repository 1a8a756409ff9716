#include "ebsde/acceptance.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace ebsde;

namespace {

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<double> tol;
    std::optional<double> grid;
    std::optional<std::size_t> paths;
    std::optional<double> horizon;
    std::optional<double> mu;
    std::optional<double> lambda;
};

struct Session {
    std::string command;
    std::string config_path;
    fs::path out_dir;
    Overrides flags;
    ExperimentConfig cfg;
    json summary = json::object();
    json assertions = json::object();
    std::vector<std::string> files;
    bool all_passed = true;

    // a run key counts as set when it is in the config file or given as a flag
    bool set_in_config(const char* key) const {
        const json& run = cfg.raw.contains("run") ? cfg.raw["run"] : json();
        return run.is_object() && run.contains(key);
    }
    bool explicit_paths() const { return flags.paths || set_in_config("paths"); }
    bool explicit_horizon() const { return flags.horizon || set_in_config("horizon"); }
    bool explicit_h() const { return set_in_config("h"); }

    void write(const std::string& name, const std::string& content) {
        std::ofstream out(out_dir / name);
        out << content;
        files.push_back(name);
    }

    void check(const std::string& name, bool ok, json observed) {
        assertions[name] = {{"passed", ok}, {"observed", std::move(observed)}};
        all_passed = all_passed && ok;
    }
};

void apply_overrides(Session& s) {
    RunConfig& r = s.cfg.run;
    if (s.flags.seed) r.seed = *s.flags.seed;
    if (s.flags.tol) r.tol = *s.flags.tol;
    if (s.flags.grid) r.grid = *s.flags.grid;
    if (s.flags.paths) r.paths = *s.flags.paths;
    if (s.flags.horizon) r.horizon = *s.flags.horizon;
    if (s.flags.mu) r.mu = *s.flags.mu;
    if (s.flags.lambda) r.lambda = *s.flags.lambda;
    if (!(r.tol > 0.0) || !(r.grid > 0.0) || !(r.horizon > 0.0) || r.paths == 0)
        throw Error(ErrorCode::ConfigError, "cli", "--tol, --grid, --horizon and --paths must be positive");
}

ErgodicOptions ergodic_options(const RunConfig& r) {
    ErgodicOptions o;
    o.tol = r.tol;
    o.solve.grid.hx = r.grid;
    return o;
}

std::string remedy(ErrorCode code) {
    switch (code) {
        case ErrorCode::ConfigError: return "fix the config file against the schema in README.md";
        case ErrorCode::FlatCurve: return "lambda does not depend on mu here, so mu cannot be recovered; check (F2) with `check`";
        case ErrorCode::BracketFailure: return "the target lambda is outside the range of lambda(mu); check the slope bounds";
        case ErrorCode::NoConvergence:
        case ErrorCode::NonConvergence:
        case ErrorCode::PicardDiverged: return "refine the grid (--grid) or loosen --tol";
        case ErrorCode::SchemeMismatch: return "refine the grid (--grid)";
        case ErrorCode::SingularSigma: return "drift shifting needs an invertible sigma; drop run.xis";
        case ErrorCode::DegenerateLocalTime: return "the paths do not reach the boundary; increase --horizon";
        case ErrorCode::WeightDegeneracy: return "shorten --horizon or use smaller control effects";
        case ErrorCode::NotKolmogorov:
        case ErrorCode::NonConvexPotential: return "use a Kolmogorov model with a convex potential";
        case ErrorCode::StepTooLarge: return "reduce run.h";
        default: return "check the arguments";
    }
}

std::string csv_line(const std::vector<double>& xs) {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
    os << '\n';
    return os.str();
}

void check_lambda_assertions(Session& s, const ErgodicSolution& sol) {
    const json& a = s.cfg.run.assertions;
    if (a.contains("lambda")) {
        const double target = a["lambda"].value("value", 0.0), tol = a["lambda"].value("tol", s.cfg.run.tol);
        s.check("lambda", std::abs(sol.lambda - target) <= tol, sol.lambda);
    }
    if (a.contains("v_radial_power")) {
        // v(x) = coefficient |x|^power (times mu when per_unit_mu), compared after fixing v(x_ref)
        const json& spec = a["v_radial_power"];
        const double power = spec.value("power", 3.0);
        double coeff = spec.value("coefficient", 0.0);
        if (spec.value("per_unit_mu", false)) coeff *= sol.mu;
        const double tol = spec.value("tol", 5e-3);
        auto exact = [&](const Vec& x) { return coeff * std::pow(x.norm(), power); };
        const double shift = sol.v.values[sol.ref] - exact(sol.v.grid->nodes[sol.ref]);
        double err = 0.0;
        for (std::size_t i = 0; i < sol.v.values.size(); ++i)
            err = std::max(err, std::abs(sol.v.values[i] - shift - exact(sol.v.grid->nodes[i])));
        s.check("v_radial_power", err <= tol, err);
    }
}

void run_check(Session& s) {
    HypothesisOptions o;
    o.average.seed = s.cfg.run.seed;
    if (s.explicit_paths()) o.average.paths = s.cfg.run.paths;
    if (s.explicit_horizon()) o.average.T = s.cfg.run.horizon;
    if (s.explicit_h()) o.average.h = s.cfg.run.h;
    const HypothesisReport r = check_all(s.cfg.model, s.cfg.driver, s.cfg.domain, o);
    s.summary["hypotheses"] = to_json(r);
    std::ostringstream os;
    os << "flag,value\n";
    for (const auto& [k, v] : r.flags) os << k << ',' << (v ? 1 : 0) << '\n';
    s.write("flags.csv", os.str());
    const json& a = s.cfg.run.assertions;
    if (a.contains("flags"))
        for (const auto& [k, v] : a["flags"].items()) s.check("flag " + k, r.flag(k) == v.get<bool>(), r.flag(k));
}

ErgodicSolution solve_and_record(Session& s) {
    const ErgodicSolution sol =
        solve_ergodic(s.cfg.model, s.cfg.domain, s.cfg.driver, s.cfg.run.mu, s.cfg.run.scheme, ergodic_options(s.cfg.run));
    s.summary["solution"] = to_json(sol);
    std::ostringstream os;
    write_grid_function_csv(os, sol.v);
    s.write("solution.csv", os.str());
    return sol;
}

void run_solve(Session& s) {
    const ErgodicSolution sol = solve_and_record(s);
    check_lambda_assertions(s, sol);
}

void run_curve(Session& s) {
    std::vector<double> mus = s.cfg.run.mus;
    if (mus.empty())
        for (int i = 0; i <= 8; ++i) mus.push_back(-2.0 + 0.5 * i);
    const LambdaOfMuCurve c = lambda_of_mu(s.cfg.model, s.cfg.domain, s.cfg.driver, mus, ergodic_options(s.cfg.run),
                                           s.cfg.run.scheme);
    s.summary["curve"] = {{"mu", c.mu},
                          {"lambda", c.lambda},
                          {"non_increasing", c.non_increasing()},
                          {"continuity_modulus", c.continuity_modulus()},
                          {"slopes", c.slopes()}};
    std::ostringstream os;
    write_curve_csv(os, c);
    s.write("curve.csv", os.str());
    if (s.cfg.run.assertions.contains("non_increasing"))
        s.check("non_increasing", c.non_increasing() == s.cfg.run.assertions["non_increasing"].get<bool>(),
                c.non_increasing());
}

void run_invert(Session& s) {
    BoundaryCostOptions o;
    o.ergodic = ergodic_options(s.cfg.run);
    const BoundaryCostResult r = solve_boundary_cost(s.cfg.model, s.cfg.domain, s.cfg.driver, s.cfg.run.lambda, o);
    s.summary["inversion"] = {{"lambda_target", s.cfg.run.lambda},
                              {"mu_star", r.mu},
                              {"lambda_at_mu_star", r.solution.lambda},
                              {"evaluations", r.evaluations}};
    std::ostringstream os;
    os << "lo,hi,lambda_lo,lambda_hi\n";
    for (std::size_t i = 0; i < r.brackets.size(); ++i)
        os << csv_line({r.brackets[i].first, r.brackets[i].second, r.bracket_values[i].first, r.bracket_values[i].second});
    s.write("brackets.csv", os.str());
    const json& a = s.cfg.run.assertions;
    if (a.contains("mu"))
        s.check("mu", std::abs(r.mu - a["mu"].value("value", 0.0)) <= a["mu"].value("tol", s.cfg.run.tol), r.mu);
}

void run_verify(Session& s) {
    const ErgodicSolution sol = solve_and_record(s);
    check_lambda_assertions(s, sol);
    PdeResidualOptions po;
    if (s.cfg.run.exclusion_radius > 0.0) {
        po.exclusion_center = s.cfg.domain.centroid;
        po.exclusion_radius = s.cfg.run.exclusion_radius;
    }
    const PdeResidualReport pr = pde_residual(sol, s.cfg.model, s.cfg.domain, s.cfg.driver, po);
    s.summary["pde_residual"] = to_json(pr);
    BsdeResidualOptions bo;
    bo.paths = s.cfg.run.paths;
    bo.T = s.cfg.run.horizon;
    bo.h = s.cfg.run.h;
    bo.seed = s.cfg.run.seed;
    bo.x0 = s.cfg.run.x0;
    const BsdeResidualReport br = bsde_residual(sol, s.cfg.model, s.cfg.domain, s.cfg.driver, bo);
    s.summary["bsde_residual"] = to_json(br);
    std::ostringstream os;
    write_residuals_csv(os, br);
    s.write("residuals.csv", os.str());
    if (!s.cfg.run.xis.empty()) {
        std::ostringstream ds;
        ds << "xi,lambda,lambda_shifted,lambda_gap,eta,eta_shifted\n";
        for (double xi : s.cfg.run.xis) {
            const DriftShiftReport d =
                drift_shift_equivalence(s.cfg.model, s.cfg.domain, s.cfg.driver, xi, s.cfg.run.mu, ergodic_options(s.cfg.run));
            s.summary["drift_shift"].push_back(to_json(d));
            ds << csv_line({xi, d.lambda, d.lambda_shifted, d.lambda_gap, d.eta, d.eta_shifted});
        }
        s.write("drift_shift.csv", ds.str());
    }
    const json& a = s.cfg.run.assertions;
    if (a.contains("pde_residual_max")) {
        const double worst = std::max(pr.interior_max, pr.boundary_max);
        s.check("pde_residual_max", worst <= a["pde_residual_max"].get<double>(), worst);
    }
    if (a.contains("bsde_residual_z")) {
        const double z = std::abs(br.residual.mean) / std::max(br.residual.std_error, 1e-300);
        s.check("bsde_residual_z", z <= a["bsde_residual_z"].get<double>(), z);
    }
}

void run_control(Session& s) {
    if (!s.cfg.control) throw Error(ErrorCode::ConfigError, "cli", "`control` needs a control section");
    const ControlProblem& p = *s.cfg.control;
    validate(p, s.cfg.domain);
    const DriverSpec d = make_hamiltonian_driver(p);
    const double mu = s.cfg.run.mu;
    auto sol = std::make_shared<const ErgodicSolution>(
        solve_ergodic(s.cfg.model, s.cfg.domain, d, mu, s.cfg.run.scheme, ergodic_options(s.cfg.run)));
    s.summary["solution"] = to_json(*sol);
    CostOptions o;
    o.seed = s.cfg.run.seed;
    o.x0 = s.cfg.run.x0;
    if (s.explicit_paths()) o.paths = s.cfg.run.paths;
    if (s.explicit_horizon()) o.T = s.cfg.run.horizon;
    if (s.explicit_h()) o.h = s.cfg.run.h;
    json policies = s.cfg.policies;
    if (policies.empty()) {
        policies.push_back({{"kind", "optimal"}});
        for (std::size_t u = 0; u < p.size(); ++u) policies.push_back({{"kind", "constant"}, {"control", u}});
    }
    std::ostringstream os;
    os << "policy,horizon,I,I_se,J,J_se,J_defined\n";
    std::optional<PolicyEvaluation> optimal;
    std::vector<PolicyEvaluation> others;
    for (const json& pj : policies) {
        const Policy pol = parse_policy(pj, p, sol);
        const bool is_opt = pj.value("kind", "") == "optimal";
        const PolicyEvaluation ev = evaluate_policy(s.cfg.model, s.cfg.domain, p, pol, mu, sol->lambda, o, is_opt ? sol.get() : nullptr);
        s.summary["policies"].push_back(to_json(ev));
        for (std::size_t k = 0; k < ev.horizons.size(); ++k) {
            os << '"' << ev.policy << "\",";
            os << csv_line({ev.horizons[k], ev.I[k].mean, ev.I[k].std_error, ev.J[k].mean, ev.J[k].std_error,
                            ev.J_defined[k] ? 1.0 : 0.0});
        }
        if (is_opt) optimal = ev;
        else others.push_back(ev);
    }
    s.write("policies.csv", os.str());
    if (s.cfg.run.assertions.value("optimality", false)) {
        if (!optimal) throw Error(ErrorCode::ConfigError, "cli", "optimality assertion needs an optimal policy");
        const Estimate &I = optimal->I_final(), &J = optimal->J_final();
        s.check("optimal_I", std::abs(I.mean - sol->lambda) <= 3.0 * I.std_error + 5e-3, I.mean);
        s.check("optimal_J", optimal->J_defined.back() && std::abs(J.mean - mu) <= 3.0 * J.std_error + 1e-2, J.mean);
        for (const PolicyEvaluation& ev : others) {
            const double eI = 3.0 * std::hypot(ev.I_final().std_error, I.std_error) + 5e-3;
            const double eJ = 3.0 * std::hypot(ev.J_final().std_error, J.std_error) + 1e-2;
            s.check("dominated " + ev.policy,
                    ev.I_final().mean >= sol->lambda - eI && ev.J_defined.back() && ev.J_final().mean >= mu - eJ,
                    {ev.I_final().mean, ev.J_final().mean});
        }
    }
}

void run_reproduce(Session& s, int criterion) {
    AcceptanceOptions o;
    if (s.flags.seed) o.seed = *s.flags.seed;
    s.summary["seed"] = o.seed;
    std::ostringstream status;
    status << "criterion,passed,seconds\n";
    for (const auto& entry : acceptance_criteria()) {
        if (criterion != 0 && entry.first != criterion) continue;
        const CriterionResult r = run_criterion(entry.first, o);
        std::cout << status_line(r) << std::endl;
        s.summary["criteria"].push_back(to_json(r));
        for (const auto& [name, table] : r.tables) s.write(name, table);
        status << r.id << ',' << (r.passed ? 1 : 0) << ',' << r.seconds << '\n';
        s.check("criterion " + std::to_string(r.id), r.passed, r.summary);
    }
    s.write("criteria.csv", status.str());
}

json manifest(const Session& s, int criterion) {
    json m;
    m["command"] = s.command;
    m["config_path"] = s.config_path;
    m["config"] = s.cfg.raw;
    m["overrides"] = json::object();
    if (s.flags.seed) m["overrides"]["seed"] = *s.flags.seed;
    if (s.flags.tol) m["overrides"]["tol"] = *s.flags.tol;
    if (s.flags.grid) m["overrides"]["grid"] = *s.flags.grid;
    if (s.flags.paths) m["overrides"]["paths"] = *s.flags.paths;
    if (s.flags.horizon) m["overrides"]["horizon"] = *s.flags.horizon;
    if (s.flags.mu) m["overrides"]["mu"] = *s.flags.mu;
    if (s.flags.lambda) m["overrides"]["lambda"] = *s.flags.lambda;
    if (s.command == "reproduce") {
        m["seed"] = s.summary.value("seed", AcceptanceOptions{}.seed);
        if (criterion) m["criterion"] = criterion;
    } else {
        const RunConfig& r = s.cfg.run;
        m["effective_run"] = {{"seed", r.seed}, {"tol", r.tol},     {"grid", r.grid},   {"paths", r.paths},
                              {"horizon", r.horizon}, {"h", r.h}, {"mu", r.mu},       {"lambda", r.lambda},
                              {"scheme", to_string(r.scheme)}};
    }
    m["files"] = s.files;
    return m;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ergodic BSDE lab: hypothesis checks, ergodic solves, lambda(mu) curves, verification and control"};
    app.require_subcommand(1);
    Session s;
    s.out_dir = "ebsde_out";
    int criterion = 0;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        auto* opt = sub->add_option("--config", s.config_path, "experiment config (JSON)");
        if (needs_config) opt->required()->check(CLI::ExistingFile);
        sub->add_option("--out-dir", s.out_dir, "artifact directory");
        sub->add_option("--seed", s.flags.seed, "override run.seed");
        sub->add_option("--tol", s.flags.tol, "override run.tol");
        sub->add_option("--grid", s.flags.grid, "override run.grid (grid spacing)");
        sub->add_option("--paths", s.flags.paths, "override run.paths");
        sub->add_option("--horizon", s.flags.horizon, "override run.horizon");
        sub->add_option("--mu", s.flags.mu, "override run.mu");
        sub->add_option("--lambda", s.flags.lambda, "override run.lambda");
    };
    const std::vector<std::pair<std::string, std::string>> commands{
        {"check", "estimate the structural constants and hypothesis flags"},
        {"solve", "solve the ergodic problem at run.mu"},
        {"curve", "tabulate lambda(mu) over run.mus"},
        {"invert", "find mu with lambda(mu) = run.lambda"},
        {"verify", "PDE and pathwise residuals of the ergodic solution, drift-shift checks"},
        {"control", "evaluate control policies against the optimal feedback"}};
    for (const auto& [name, help] : commands) add_common(app.add_subcommand(name, help), true);
    auto* reproduce = app.add_subcommand("reproduce", "run the acceptance suite");
    add_common(reproduce, false);
    reproduce->add_option("--criterion", criterion, "single criterion (1-12)")->check(CLI::Range(1, 12));

    CLI11_PARSE(app, argc, argv);
    s.command = app.get_subcommands().front()->get_name();

    try {
        fs::create_directories(s.out_dir);
        if (s.command != "reproduce") {
            s.cfg = load_config(s.config_path);
            apply_overrides(s);
        }
        if (s.command == "check") run_check(s);
        else if (s.command == "solve") run_solve(s);
        else if (s.command == "curve") run_curve(s);
        else if (s.command == "invert") run_invert(s);
        else if (s.command == "verify") run_verify(s);
        else if (s.command == "control") run_control(s);
        else run_reproduce(s, criterion);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\nremedy: " << remedy(e.code()) << std::endl;
        json err = {{"error", {{"code", to_string(e.code())}, {"module", e.module()}, {"message", e.what()}}}};
        std::ofstream(s.out_dir / "summary.json") << err.dump(2) << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    }

    s.summary["assertions"] = s.assertions;
    s.summary["passed"] = s.all_passed;
    std::ofstream(s.out_dir / "summary.json") << s.summary.dump(2) << '\n';
    s.files.push_back("summary.json");
    std::ofstream(s.out_dir / "manifest.json") << manifest(s, criterion).dump(2) << '\n';

    for (const auto& [name, a] : s.assertions.items())
        std::cout << (a["passed"].get<bool>() ? "ok    " : "FAILED ") << name << " (observed " << a["observed"].dump() << ")\n";
    std::cout << s.command << ": " << (s.all_passed ? "all assertions passed" : "assertion failures") << ", artifacts in "
              << s.out_dir.string() << std::endl;
    return s.all_passed ? 0 : 1;
}
