#pragma once

#include "ebsde/control.hpp"

#include <fstream>
#include <sstream>

namespace ebsde {

using nlohmann::json;

struct RunConfig {
    double mu = 0.0;
    double lambda = 0.0;
    std::vector<double> mus;
    double tol = 1e-6;
    double grid = 1e-2;
    std::size_t paths = 1000;
    double horizon = 1.0;
    double h = 1e-2;
    std::uint64_t seed = 1;
    ErgodicScheme scheme = ErgodicScheme::direct;
    std::optional<Vec> x0;
    double exclusion_radius = 0.0;
    std::vector<double> xis;
    /// Expected values checked by the CLI; empty when nothing is asserted.
    json assertions = json::object();
};

struct ExperimentConfig {
    json raw;
    Domain domain;
    SdeModel model;
    DriverSpec driver;
    std::optional<ControlProblem> control;
    json policies = json::array();
    RunConfig run;
};

namespace detail {

[[noreturn]] inline void config_fail(const std::string& what) { throw Error(ErrorCode::ConfigError, "cli", what); }

inline const json& require(const json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) config_fail(where + ": missing key '" + key + "'");
    return j.at(key);
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        config_fail(where + ": key '" + key + "' has the wrong type");
    }
}

inline Vec to_vec(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty() || j.size() > static_cast<std::size_t>(kMaxDim))
        config_fail(where + ": expected a non-empty numeric array");
    Vec v(static_cast<int>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) config_fail(where + ": expected numbers");
        v[static_cast<int>(i)] = j[i].get<double>();
    }
    return v;
}

inline Mat to_mat(const json& j, int dim, const std::string& where) {
    if (!j.is_array() || static_cast<int>(j.size()) != dim) config_fail(where + ": expected a " + std::to_string(dim) + "x" + std::to_string(dim) + " matrix");
    Mat m(dim, dim);
    for (int r = 0; r < dim; ++r) {
        const Vec row = to_vec(j[r], where);
        if (row.size() != dim) config_fail(where + ": ragged matrix");
        m.row(r) = row.transpose();
    }
    return m;
}

inline Domain parse_domain(const json& j) {
    const std::string kind = get_or<std::string>(j, "kind", "", "domain");
    try {
        if (kind == "ball")
            return make_ball(get_or(j, "radius", 1.0, "domain"), get_or(j, "dim", 1, "domain"),
                             get_or(j, "quartic_weight", 0.0, "domain"));
        if (kind == "quadratic") {
            const json& a = require(j, "A", "domain");
            const int dim = static_cast<int>(a.size());
            const Mat A = to_mat(a, dim, "domain.A");
            Vec c = j.contains("center") ? to_vec(j["center"], "domain.center") : zeros(dim);
            return make_quadratic(A, c);
        }
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ConfigError) throw;
        config_fail(std::string("domain: ") + e.what());
    }
    config_fail("domain: unknown kind '" + kind + "' (ball, quadratic)");
}

inline SdeModel parse_model(const json& j, int dim) {
    const std::string kind = get_or<std::string>(j, "kind", "", "model");
    if (kind == "kolmogorov") {
        const std::string pot = get_or<std::string>(j, "potential", "quadratic", "model");
        const double scale = get_or(j, "scale", 1.0, "model");
        if (pot == "quadratic") return make_kolmogorov(dim, quadratic_potential(dim, scale), "Kolmogorov, quadratic U");
        if (pot == "quartic") return make_kolmogorov(dim, quartic_potential(dim, scale), "Kolmogorov, quartic U");
        config_fail("model: unknown potential '" + pot + "' (quadratic, quartic)");
    }
    if (kind == "linear") {
        const Mat B = to_mat(require(j, "drift_matrix", "model"), dim, "model.drift_matrix");
        const Vec c = j.contains("drift_offset") ? to_vec(j["drift_offset"], "model.drift_offset") : zeros(dim);
        const Mat S = to_mat(require(j, "sigma", "model"), dim, "model.sigma");
        if (c.size() != dim) config_fail("model.drift_offset: dimension mismatch");
        return make_model(dim, [B, c](const Vec& x) -> Vec { return B * x + c; }, [S](const Vec&) -> Mat { return S; },
                          true, "linear drift, constant sigma");
    }
    if (kind == "multiplicative") {
        const double a = get_or(j, "drift_scale", -1.0, "model");
        const double s = get_or(j, "sigma_scale", 1.0, "model");
        return make_model(dim, [a](const Vec& x) -> Vec { return a * x; },
                          [s](const Vec& x) -> Mat { return Mat(s * x.asDiagonal()); }, false,
                          "b = a x, sigma = s diag(x)");
    }
    config_fail("model: unknown kind '" + kind + "' (kolmogorov, linear, multiplicative)");
}

inline ScalarFn parse_g(const json& j, int dim) {
    if (j.is_null()) return zero_scalar();
    if (j.is_number()) {
        const double c = j.get<double>();
        return [c](const Vec&) { return c; };
    }
    if (!j.is_object()) config_fail("g: expected a number or {constant, linear}");
    const double c = get_or(j, "constant", 0.0, "g");
    const Vec a = j.contains("linear") ? to_vec(j["linear"], "g.linear") : zeros(dim);
    if (a.size() != dim) config_fail("g.linear: dimension mismatch");
    return [a, c](const Vec& x) { return c + a.dot(x); };
}

inline double g_lipschitz(const json& j) {
    if (j.is_object() && j.contains("linear")) return to_vec(j["linear"], "g.linear").norm();
    return 0.0;
}

inline std::function<double(const Vec&)> parse_running_cost(const json& j, int dim, const std::string& where) {
    const std::string kind = get_or<std::string>(j, "kind", "", where);
    const double c = get_or(j, "constant", 0.0, where);
    if (kind == "constant") {
        const double v = get_or(j, "value", c, where);
        return [v](const Vec&) { return v; };
    }
    if (kind == "affine") {
        const Vec a = j.contains("linear") ? to_vec(j["linear"], where + ".linear") : zeros(dim);
        if (a.size() != dim) config_fail(where + ".linear: dimension mismatch");
        return [a, c](const Vec& x) { return c + a.dot(x); };
    }
    if (kind == "quadratic") {
        const double q = get_or(j, "coeff", 1.0, where);
        return [q, c](const Vec& x) { return c + q * x.squaredNorm(); };
    }
    config_fail(where + ": unknown running cost kind '" + kind + "' (constant, affine, quadratic)");
}

inline ControlProblem parse_control(const json& j, int dim) {
    const json& list = require(j, "controls", "control");
    if (!list.is_array() || list.empty()) config_fail("control.controls: expected a non-empty array");
    ControlProblem p;
    p.dim = dim;
    std::vector<std::function<double(const Vec&)>> costs;
    for (std::size_t i = 0; i < list.size(); ++i) {
        const std::string where = "control.controls[" + std::to_string(i) + "]";
        p.labels.push_back(get_or<std::string>(list[i], "label", "u" + std::to_string(i), where));
        const Vec r = to_vec(require(list[i], "R", where), where + ".R");
        if (r.size() != dim) config_fail(where + ".R: dimension mismatch");
        p.R.push_back(r);
        costs.push_back(parse_running_cost(require(list[i], "L", where), dim, where + ".L"));
    }
    p.L = [costs](const Vec& x, std::size_t u) { return costs[u](x); };
    double mr = 0.0;
    for (const Vec& r : p.R) mr = std::max(mr, r.norm());
    p.M_R = get_or(j, "M_R", mr, "control");
    p.M_L = get_or(j, "M_L", 0.0, "control");
    p.K_L_x = get_or(j, "K_L_x", 0.0, "control");
    p.g = parse_g(j.contains("g") ? j["g"] : json(), dim);
    return p;
}

inline DriverSpec parse_driver(const json& j, int dim, const std::optional<ControlProblem>& control) {
    const std::string kind = get_or<std::string>(j, "kind", "", "driver");
    DriverSpec d;
    if (kind == "zero") {
        d = zero_driver();
    } else if (kind == "constant") {
        d = constant_driver(get_or(j, "kappa", 0.0, "driver"));
    } else if (kind == "cos_sin") {
        d = cos_sin_driver(get_or(j, "a", 1.0, "driver"), get_or(j, "b", 0.0, "driver"),
                           get_or(j, "x_abs_max", 1.0, "driver"));
    } else if (kind == "hamiltonian") {
        if (!control) config_fail("driver: kind 'hamiltonian' needs a control section");
        return make_hamiltonian_driver(*control);
    } else {
        config_fail("driver: unknown kind '" + kind + "' (zero, constant, cos_sin, hamiltonian)");
    }
    if (j.contains("g")) d.g = parse_g(j["g"], dim);
    return d;
}

inline ErgodicScheme parse_scheme(const std::string& s) {
    if (s == "direct") return ErgodicScheme::direct;
    if (s == "vanishing_discount") return ErgodicScheme::vanishing_discount;
    config_fail("run.scheme: expected direct or vanishing_discount");
}

inline RunConfig parse_run(const json& j) {
    RunConfig r;
    if (j.is_null()) return r;
    if (!j.is_object()) config_fail("run: expected an object");
    r.mu = get_or(j, "mu", r.mu, "run");
    r.lambda = get_or(j, "lambda", r.lambda, "run");
    r.mus = get_or(j, "mus", r.mus, "run");
    r.tol = get_or(j, "tol", r.tol, "run");
    r.grid = get_or(j, "grid", r.grid, "run");
    r.paths = get_or(j, "paths", r.paths, "run");
    r.horizon = get_or(j, "horizon", r.horizon, "run");
    r.h = get_or(j, "h", r.h, "run");
    r.seed = get_or(j, "seed", r.seed, "run");
    r.scheme = parse_scheme(get_or<std::string>(j, "scheme", "direct", "run"));
    if (j.contains("x0")) r.x0 = to_vec(j["x0"], "run.x0");
    r.exclusion_radius = get_or(j, "exclusion_radius", r.exclusion_radius, "run");
    r.xis = get_or(j, "xis", r.xis, "run");
    if (j.contains("assertions")) {
        if (!j["assertions"].is_object()) config_fail("run.assertions: expected an object");
        r.assertions = j["assertions"];
    }
    if (!(r.tol > 0.0) || !(r.grid > 0.0) || !(r.h > 0.0) || !(r.horizon > 0.0) || r.paths == 0)
        config_fail("run: tol, grid, h, horizon and paths must be positive");
    return r;
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
    if (!j.is_object()) detail::config_fail("top level: expected an object");
    static const std::vector<std::string> known{"domain", "model", "driver", "control", "policies", "run", "description"};
    for (const auto& [key, value] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            detail::config_fail("top level: unknown section '" + key + "'");
    ExperimentConfig c;
    c.raw = j;
    c.domain = detail::parse_domain(detail::require(j, "domain", "top level"));
    c.model = detail::parse_model(detail::require(j, "model", "top level"), c.domain.dim);
    if (j.contains("control")) c.control = detail::parse_control(j["control"], c.domain.dim);
    c.driver = detail::parse_driver(detail::require(j, "driver", "top level"), c.domain.dim, c.control);
    if (j.contains("policies")) {
        if (!j["policies"].is_array()) detail::config_fail("policies: expected an array");
        c.policies = j["policies"];
    }
    c.run = detail::parse_run(j.contains("run") ? j["run"] : json());
    if (c.run.x0 && c.run.x0->size() != c.domain.dim) detail::config_fail("run.x0: dimension mismatch");
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) detail::config_fail("cannot open config file " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        detail::config_fail(std::string("invalid JSON: ") + e.what());
    }
    return parse_config(j);
}

/// Policy from its JSON form: constant, threshold_x, threshold_z or optimal.
inline Policy parse_policy(const json& j, const ControlProblem& p, std::shared_ptr<const ErgodicSolution> sol) {
    const std::string kind = detail::get_or<std::string>(j, "kind", "", "policy");
    try {
        if (kind == "constant") return constant_policy(p, detail::get_or<std::size_t>(j, "control", 0, "policy"));
        const double thr = detail::get_or(j, "threshold", 0.0, "policy");
        const auto below = detail::get_or<std::size_t>(j, "below", 0, "policy");
        const auto above = detail::get_or<std::size_t>(j, "above", 1, "policy");
        const int axis = detail::get_or(j, "axis", 0, "policy");
        if (axis < 0 || axis >= p.dim) detail::config_fail("policy: axis out of range");
        if (kind == "threshold_x") return threshold_x_policy(p, thr, below, above, axis);
        if (kind == "threshold_z" || kind == "optimal") {
            if (!sol) detail::config_fail("policy: '" + kind + "' needs an ergodic solution");
            if (kind == "optimal") return optimal_feedback(p, sol);
            return threshold_z_policy(p, sol, thr, below, above, axis);
        }
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ConfigError) throw;
        detail::config_fail(std::string("policy: ") + e.what());
    }
    detail::config_fail("policy: unknown kind '" + kind + "' (constant, threshold_x, threshold_z, optimal)");
}

}  // namespace ebsde
