#pragma once

#include "ebsde/config.hpp"
#include "ebsde/verification.hpp"

#include <chrono>
#include <iomanip>
#include <map>
#include <sstream>

namespace ebsde {

struct CriterionResult {
    int id = 0;
    std::string title;
    bool passed = false;
    std::string summary;
    json details = json::object();
    /// CSV tables keyed by file name.
    std::map<std::string, std::string> tables;
    double seconds = 0.0;
};

struct AcceptanceOptions {
    std::uint64_t seed = 20240611;
};

namespace acceptance {

inline Vec v1(double a) { return Vec::Constant(1, a); }

inline SdeModel ou() { return make_kolmogorov(1, quadratic_potential(1), "b = -x, sigma = sqrt 2"); }

inline SdeModel degenerate() {
    return make_model(1, [](const Vec& x) -> Vec { return -x; },
                      [](const Vec& x) -> Mat { return Mat::Constant(1, 1, x[0]); }, false, "b = -x, sigma = x");
}

// Truncated standard Gaussian on [-1, 1] in closed form.
inline double gibbs_mass() { return std::sqrt(2.0 * M_PI) * std::erf(1.0 / std::sqrt(2.0)); }
inline double gibbs_local_time_rate() { return 2.0 * std::exp(-0.5) / gibbs_mass(); }
inline double gibbs_second_moment() { return 1.0 - gibbs_local_time_rate(); }
inline double gibbs_bin_density(double a, double b) {
    return std::sqrt(M_PI / 2.0) * (std::erf(b / std::sqrt(2.0)) - std::erf(a / std::sqrt(2.0))) / gibbs_mass() / (b - a);
}

inline std::string fmt(double x, int digits = 6) {
    std::ostringstream os;
    os << std::setprecision(digits) << x;
    return os.str();
}

inline double elapsed(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline CriterionResult closed_form(const AcceptanceOptions&) {
    CriterionResult r{1, "closed-form degenerate example"};
    const Domain iv = make_ball(1.0, 1);
    ErgodicOptions o;
    o.solve.grid.hx = 1e-3;
    bool ok = true;
    double worst_lambda = 0.0, worst_v = 0.0, worst_time = 0.0;
    std::ostringstream table;
    table << "mu,lambda,v_error,seconds\n";
    for (double mu : {-1.0, 0.0, 1.0}) {
        const auto t0 = std::chrono::steady_clock::now();
        const ErgodicSolution s = solve_ergodic(degenerate(), iv, zero_driver(), mu, ErgodicScheme::direct, o);
        const double secs = elapsed(t0);
        const double vref = s.v.values[s.ref];
        const double xref = s.v.grid->nodes[s.ref][0];
        const double aref = -mu * std::pow(std::abs(xref), 3) / 3.0;
        double err = 0.0;
        for (std::size_t i = 0; i < s.v.values.size(); ++i) {
            const double x = s.v.grid->nodes[i][0];
            err = std::max(err, std::abs((s.v.values[i] - vref) - (-mu * std::pow(std::abs(x), 3) / 3.0 - aref)));
        }
        ok = ok && std::abs(s.lambda) <= 1e-3 && err <= 5e-3 && secs < 10.0;
        worst_lambda = std::max(worst_lambda, std::abs(s.lambda));
        worst_v = std::max(worst_v, err);
        worst_time = std::max(worst_time, secs);
        table << mu << ',' << std::setprecision(17) << s.lambda << ',' << err << ',' << secs << '\n';
        r.details["runs"].push_back({{"mu", mu}, {"lambda", s.lambda}, {"v_error", err}, {"seconds", secs}});
    }
    r.passed = ok;
    r.summary = "max|lambda| " + fmt(worst_lambda) + " (<= 1e-3), max v error " + fmt(worst_v) + " (<= 5e-3), slowest solve " +
                fmt(worst_time, 3) + " s (< 10)";
    r.tables["closed_form.csv"] = table.str();
    return r;
}

inline CriterionResult gibbs_histogram(const AcceptanceOptions& a) {
    CriterionResult r{2, "occupation histogram against the Gibbs density"};
    const auto t0 = std::chrono::steady_clock::now();
    const Domain iv = make_ball(1.0, 1);
    const SdeModel m = ou();
    const double T = 2e4, h = 1e-3;
    const int bins = 40;
    const std::size_t n = checked_steps(T, h);
    Histogram hist = make_histogram(-1.0, 1.0, bins);
    PathRng rng(a.seed + 2, 0);
    Vec x = zeros(1);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec xi = rng.normal_vector(1);
        x = step_reflected(m, iv, x, h, xi, ReflectionScheme::bridge, rng.uniform_open()).x;
        accumulate(hist, -1.0, x[0]);
    }
    normalize(hist);
    double err = 0.0;
    std::ostringstream table;
    table << "bin_center,empirical_density,gibbs_density\n" << std::setprecision(17);
    for (int b = 0; b < bins; ++b) {
        const double lo = hist.centers[b] - 0.5 * hist.width, hi = hist.centers[b] + 0.5 * hist.width;
        const double exact = gibbs_bin_density(lo, hi);
        err = std::max(err, std::abs(hist.density(b) - exact));
        table << hist.centers[b] << ',' << hist.density(b) << ',' << exact << '\n';
    }
    r.seconds = elapsed(t0);
    r.passed = err < 0.02 && r.seconds < 60.0;
    r.summary = "max bin density error " + fmt(err) + " (< 0.02), " + fmt(r.seconds, 3) + " s (< 60)";
    r.details = {{"T", T}, {"h", h}, {"bins", bins}, {"max_bin_error", err}, {"seed", a.seed + 2}};
    r.tables["gibbs_histogram.csv"] = table.str();
    return r;
}

inline CriterionResult local_time_rate(const AcceptanceOptions& a) {
    CriterionResult r{3, "local-time rate against -E[L phi]"};
    const auto t0 = std::chrono::steady_clock::now();
    const Domain iv = make_ball(1.0, 1);
    const double oracle = gibbs_local_time_rate();
    const double quadrature = -expected_Lphi(ou(), iv, -1.0).mean;
    KRateOptions o;
    o.T = 20.0;
    o.h = 1e-3;
    o.paths = 2000;
    o.seed = a.seed + 3;
    const Estimate k = expected_K_rate(ou(), iv, o);
    r.seconds = elapsed(t0);
    const bool quad_ok = std::abs(quadrature - oracle) < 1e-8;
    r.passed = quad_ok && std::abs(k.mean - quadrature) <= 3.0 * k.std_error && r.seconds < 120.0;
    r.summary = "E[K_T]/T " + fmt(k.mean) + " +- " + fmt(k.std_error, 3) + " vs quadrature " + fmt(quadrature) +
                " (closed form " + fmt(oracle) + "), " + fmt(r.seconds, 3) + " s";
    r.details = {{"estimate", to_json(k)}, {"quadrature", quadrature}, {"closed_form", oracle},
                 {"T", o.T}, {"h", o.h}, {"paths", o.paths}, {"seed", o.seed}};
    return r;
}

inline CriterionResult discount_bound(const AcceptanceOptions&) {
    CriterionResult r{4, "discounted solution with psi = 1"};
    const Domain iv = make_ball(1.0, 1);
    bool ok = true;
    double worst = 0.0;
    for (double alpha : {0.5, 0.1, 0.02}) {
        const DiscountedSolution s = solve_discounted(ou(), iv, constant_driver(1.0), alpha, 0.0);
        const double scaled = alpha * s.v.max_abs();
        ok = ok && scaled >= 1.0 - 1e-6 && scaled <= 1.0 + 1e-6;
        worst = std::max(worst, std::abs(scaled - 1.0));
        r.details["runs"].push_back({{"alpha", alpha}, {"alpha_max_abs_v", scaled}});
    }
    r.passed = ok;
    r.summary = "max |alpha max|v| - 1| = " + fmt(worst, 3) + " (<= 1e-6)";
    return r;
}

inline CriterionResult lipschitz_bound(const AcceptanceOptions&) {
    CriterionResult r{5, "Lipschitz bound for psi = cos x"};
    const Domain iv = make_ball(1.0, 1);
    const DriverSpec d = cos_sin_driver(1.0, 0.0);
    const double eta = estimate_eta(ou(), iv);
    const double K_sigma = estimate_model_lipschitz(ou(), iv).K_sigma;
    const double bound = d.K_psi_x / (-eta - d.K_psi_z * K_sigma) * 1.05;
    bool ok = -eta - d.K_psi_z * K_sigma > 0.0;
    double worst = 0.0;
    for (double alpha : {0.5, 0.1, 0.02}) {
        const double lip = lipschitz_diagnostic(solve_discounted(ou(), iv, d, alpha, 0.0).v);
        ok = ok && lip <= bound;
        worst = std::max(worst, lip);
        r.details["runs"].push_back({{"alpha", alpha}, {"lipschitz", lip}});
    }
    r.passed = ok;
    r.summary = "largest difference quotient " + fmt(worst) + " vs bound " + fmt(bound);
    r.details["bound"] = bound;
    r.details["eta"] = eta;
    return r;
}

// Kolmogorov test model for the boundary-cost criteria: quartic blend of phi
// keeps L phi strictly negative.
struct SlopeModel {
    Domain domain = make_ball(1.0, 1, 0.5);
    SdeModel model = ou();
    DriverSpec driver = cos_sin_driver(1.0, 0.2);
};

inline CriterionResult monotone_curve(const AcceptanceOptions&) {
    CriterionResult r{6, "monotone lambda(mu) with the slope bound"};
    const SlopeModel t;
    const HypothesisReport h = check_all(t.model, t.driver, t.domain);
    const LambdaOfMuCurve c = lambda_of_mu(t.model, t.domain, t.driver, {-2.0, -1.0, 0.0, 1.0, 2.0});
    const double l0 = c.lambda[2];
    double worst = 0.0;
    for (std::size_t i = 0; i < c.mu.size(); ++i)
        worst = std::max(worst, std::abs(c.lambda[i] - l0 - c.mu[i] * h.E_nu_Lphi.mean));
    r.passed = c.non_increasing() && worst <= 2.0 * h.M_psi;
    r.summary = std::string(c.non_increasing() ? "non-increasing" : "NOT non-increasing") +
                ", max |lambda - lambda(0) - mu E[L phi]| " + fmt(worst) + " (<= 2 M_psi = " + fmt(2 * h.M_psi) + ")";
    r.details = {{"mu", c.mu}, {"lambda", c.lambda}, {"E_nu_Lphi", h.E_nu_Lphi.mean}, {"M_psi", h.M_psi}};
    std::ostringstream os;
    write_curve_csv(os, c);
    r.tables["lambda_of_mu.csv"] = os.str();
    return r;
}

inline CriterionResult round_trip(const AcceptanceOptions&) {
    CriterionResult r{7, "boundary-cost round trip"};
    const SlopeModel t;
    const HypothesisReport h = check_all(t.model, t.driver, t.domain);
    auto grid = make_grid(t.domain, GridSpec{});
    const double lambda0 = solve_ergodic(t.model, t.domain, t.driver, 0.5, ErgodicScheme::direct, {}, grid).lambda;
    BoundaryCostOptions o;
    o.E_nu_Lphi = h.E_nu_Lphi.mean;
    o.c_slope = h.c_slope;
    const BoundaryCostResult b = solve_boundary_cost(t.model, t.domain, t.driver, lambda0, o);
    const double gap = std::abs(b.solution.lambda - lambda0);
    std::vector<double> mus;
    for (int i = 0; i <= 16; ++i) mus.push_back(-2.0 + 0.25 * i);
    const LambdaOfMuCurve c = lambda_of_mu(t.model, t.domain, t.driver, mus);
    double smin = std::numeric_limits<double>::infinity(), smax = -smin;
    for (double s : c.slopes()) {
        smin = std::min(smin, s);
        smax = std::max(smax, s);
    }
    const bool f2p = h.flag("F2'");
    const bool slopes_ok = h.c_slope > 0.0 && smin >= h.c_slope && smax <= h.C_slope;
    const bool mu_ok = std::abs(b.mu - 0.5) <= 2e-3 / h.c_slope;
    r.passed = f2p && gap < 2e-3 && mu_ok && slopes_ok;
    r.summary = "mu* " + fmt(b.mu, 8) + ", |lambda(mu*) - lambda0| " + fmt(gap, 3) + " (< 2e-3), slopes in [" + fmt(smin) +
                ", " + fmt(smax) + "] within [" + fmt(h.c_slope) + ", " + fmt(h.C_slope) + "], F2' " + (f2p ? "holds" : "fails");
    r.details = {{"lambda0", lambda0}, {"mu_star", b.mu}, {"lambda_gap", gap}, {"evaluations", b.evaluations},
                 {"slope_min", smin}, {"slope_max", smax}, {"c_slope", h.c_slope}, {"C_slope", h.C_slope}};
    return r;
}

inline CriterionResult bsde_pathwise(const AcceptanceOptions& a) {
    CriterionResult r{8, "pathwise residual of the exact cubic"};
    const Domain iv = make_ball(1.0, 1);
    const double mu = 1.0;
    const ScalarFn v = [mu](const Vec& x) { return -mu * std::pow(std::abs(x[0]), 3) / 3.0; };
    // zeta = sigma^T v' = x * (-mu x |x|)
    const VectorFn zeta = [mu](const Vec& x) -> Vec { return v1(-mu * x[0] * x[0] * std::abs(x[0])); };
    std::vector<Estimate> means;
    bool ok = true;
    for (double h : {1e-2, 1e-3}) {
        BsdeResidualOptions o;
        o.paths = 4000;
        o.T = 5.0;
        o.h = h;
        o.seed = a.seed + 8;
        o.x0 = v1(1.0);
        const BsdeResidualReport rep = bsde_residual(v, zeta, 0.0, mu, degenerate(), iv, zero_driver(), o);
        ok = ok && std::abs(rep.residual.mean) <= 3.0 * rep.residual.std_error;
        means.push_back(rep.residual);
        r.details["runs"].push_back({{"h", h}, {"residual", to_json(rep.residual)}});
    }
    const bool shrinks = std::abs(means[1].mean) <= 0.5 * std::abs(means[0].mean);
    r.passed = ok && shrinks;
    r.summary = "mean residual " + fmt(means[0].mean, 3) + " +- " + fmt(means[0].std_error, 3) + " (h=1e-2), " +
                fmt(means[1].mean, 3) + " +- " + fmt(means[1].std_error, 3) + " (h=1e-3)" +
                (shrinks ? "" : ", magnitude did not halve");
    return r;
}

inline ControlProblem switching_problem() {
    ControlProblem p;
    p.dim = 1;
    p.labels = {"quadratic", "linear"};
    p.R = {v1(0.3), v1(-0.3)};
    p.L = [](const Vec& x, std::size_t u) { return u == 0 ? x[0] * x[0] : 0.3 * (1.0 - x[0]); };
    p.g = [](const Vec& x) { return 0.5 * x[0]; };
    p.M_R = 0.3;
    p.M_L = 1.0;
    p.K_L_x = 2.0;
    return p;
}

inline CriterionResult control_optimality(const AcceptanceOptions& a) {
    CriterionResult r{9, "optimal feedback against heuristic policies"};
    const SlopeModel t;
    const ControlProblem p = switching_problem();
    const DriverSpec d = make_hamiltonian_driver(p);
    const double mu = 0.5;
    auto sol = std::make_shared<const ErgodicSolution>(solve_ergodic(t.model, t.domain, d, mu));
    CostOptions o;
    o.T = 200.0;
    o.h = 2e-3;
    o.paths = 128;
    o.seed = a.seed + 9;
    const PolicyEvaluation opt = evaluate_policy(t.model, t.domain, p, optimal_feedback(p, sol), mu, sol->lambda, o, sol.get());
    const Estimate& I = opt.I_final();
    const Estimate& J = opt.J_final();
    const bool opt_ok = std::abs(I.mean - sol->lambda) <= 3.0 * I.std_error + 5e-3 && opt.J_defined.back() &&
                        std::abs(J.mean - mu) <= 3.0 * J.std_error + 1e-2;
    std::ostringstream table;
    table << "policy,I,I_se,J,J_se,J_defined\n" << std::setprecision(10);
    auto row = [&](const PolicyEvaluation& ev) {
        table << '"' << ev.policy << "\"," << ev.I_final().mean << ',' << ev.I_final().std_error << ',' << ev.J_final().mean
              << ',' << ev.J_final().std_error << ',' << (ev.J_defined.back() ? 1 : 0) << '\n';
        r.details["policies"].push_back(to_json(ev));
    };
    row(opt);
    const std::vector<Policy> heuristics{constant_policy(p, 0), constant_policy(p, 1), threshold_x_policy(p, 0.0, 0, 1),
                                         threshold_x_policy(p, 0.5, 0, 1), threshold_z_policy(p, sol, 0.0, 0, 1)};
    bool heur_ok = true;
    int failures = 0;
    for (const Policy& pol : heuristics) {
        const PolicyEvaluation ev = evaluate_policy(t.model, t.domain, p, pol, mu, sol->lambda, o);
        row(ev);
        const double eI = 3.0 * std::hypot(ev.I_final().std_error, I.std_error) + 5e-3;
        const double eJ = 3.0 * std::hypot(ev.J_final().std_error, J.std_error) + 1e-2;
        const bool ok = ev.I_final().mean >= sol->lambda - eI && ev.J_defined.back() && ev.J_final().mean >= mu - eJ;
        if (!ok) ++failures;
        heur_ok = heur_ok && ok;
    }
    r.passed = opt_ok && heur_ok;
    r.summary = "optimal I " + fmt(I.mean) + " +- " + fmt(I.std_error, 3) + " vs lambda " + fmt(sol->lambda) + ", J " +
                fmt(J.mean) + " +- " + fmt(J.std_error, 3) + " vs mu " + fmt(mu) + ", heuristic violations " +
                std::to_string(failures) + "/5";
    r.details["lambda"] = sol->lambda;
    r.details["mu"] = mu;
    r.tables["control_policies.csv"] = table.str();
    return r;
}

inline CriterionResult drift_shift(const AcceptanceOptions&) {
    CriterionResult r{10, "drift-shift equivalence"};
    const SlopeModel t;
    bool ok = true;
    double worst_lambda = 0.0, worst_eta = 0.0;
    for (double xi : {0.0, 0.5}) {
        const DriftShiftReport s = drift_shift_equivalence(t.model, t.domain, t.driver, xi, 0.3);
        ok = ok && s.lambda_gap < 2e-3 && s.eta_gap < 1e-6;
        worst_lambda = std::max(worst_lambda, s.lambda_gap);
        worst_eta = std::max(worst_eta, s.eta_gap);
        r.details["runs"].push_back(to_json(s));
    }
    r.passed = ok;
    r.summary = "max lambda gap " + fmt(worst_lambda, 3) + " (< 2e-3), max |eta~ - (eta - xi)| " + fmt(worst_eta, 3);
    return r;
}

inline CriterionResult penalization(const AcceptanceOptions& a) {
    CriterionResult r{11, "penalized moments approach the reflected ones"};
    const Domain iv = make_ball(1.0, 1);
    PenalizedOptions o;
    o.T = 40.0;
    o.h = 1e-3;
    o.paths = 20;
    o.burn_in = 2.0;
    o.seed = a.seed + 11;
    const double m1_ref = 0.0, m2_ref = gibbs_second_moment();
    std::vector<double> gaps;
    std::vector<double> ses;
    double final1 = 0.0;
    std::ostringstream table;
    table << "n,first,first_se,second,second_se\n" << std::setprecision(10);
    for (double n : {1.0, 4.0, 16.0, 64.0}) {
        const MomentEstimate m = penalized_moments(ou(), iv, n, o);
        gaps.push_back(std::abs(m.second.mean - m2_ref));
        ses.push_back(m.second.std_error);
        final1 = std::abs(m.first.mean - m1_ref);
        table << n << ',' << m.first.mean << ',' << m.first.std_error << ',' << m.second.mean << ',' << m.second.std_error << '\n';
    }
    bool trend = true;
    for (std::size_t i = 0; i + 1 < gaps.size(); ++i) trend = trend && gaps[i + 1] <= gaps[i] + 3.0 * std::hypot(ses[i], ses[i + 1]);
    trend = trend && gaps.back() < gaps.front();
    r.passed = trend && gaps.back() < 0.02 && final1 < 0.02;
    r.summary = "second-moment gaps " + fmt(gaps[0], 3) + ", " + fmt(gaps[1], 3) + ", " + fmt(gaps[2], 3) + ", " +
                fmt(gaps[3], 3) + " against " + fmt(m2_ref) + " (final < 0.02), first-moment gap " + fmt(final1, 3);
    r.details = {{"second_moment_gaps", gaps}, {"reflected_second_moment", m2_ref}, {"first_moment_gap", final1}};
    r.tables["penalized_moments.csv"] = table.str();
    return r;
}

inline CriterionResult large_deviation(const AcceptanceOptions& a) {
    CriterionResult r{12, "large-deviation bound"};
    const Domain iv = make_ball(1.0, 1);
    const KolmogorovConstants kc = estimate_kolmogorov_constants(ou(), iv);
    const double eps = 0.2;
    const double rate = gibbs_local_time_rate();
    const C2Field phi = phi_field(iv);
    const SdeModel m = ou();
    const std::function<double(const Vec&)> minus_Lphi = [&](const Vec& x) { return -generator_apply(m, phi, x); };
    DeviationOptions o;
    o.h = 1e-3;
    o.paths = 2000;
    o.seed = a.seed + 12;
    bool ok = true;
    std::ostringstream table;
    table << "T,frequency,std_error,bound\n" << std::setprecision(10);
    std::string parts;
    for (double T : {5.0, 10.0, 20.0}) {
        const Estimate f = lower_deviation_frequency(m, iv, minus_Lphi, rate - eps, T, o);
        const double bound = std::exp(-kc.c * eps * eps * T / (kc.delta * kc.delta));
        ok = ok && f.mean <= bound + 3.0 * f.std_error;
        table << T << ',' << f.mean << ',' << f.std_error << ',' << bound << '\n';
        parts += (parts.empty() ? "" : ", ") + ("T=" + fmt(T, 3) + ": " + fmt(f.mean, 4) + " <= " + fmt(bound, 4));
        r.details["runs"].push_back({{"T", T}, {"frequency", to_json(f)}, {"bound", bound}});
    }
    r.passed = ok;
    r.summary = "P(A_T) " + parts + " (c " + fmt(kc.c) + ", delta " + fmt(kc.delta) + ")";
    return r;
}

}  // namespace acceptance

inline const std::vector<std::pair<int, CriterionResult (*)(const AcceptanceOptions&)>>& acceptance_criteria() {
    using namespace acceptance;
    static const std::vector<std::pair<int, CriterionResult (*)(const AcceptanceOptions&)>> all{
        {1, closed_form},     {2, gibbs_histogram},     {3, local_time_rate}, {4, discount_bound},
        {5, lipschitz_bound}, {6, monotone_curve},      {7, round_trip},      {8, bsde_pathwise},
        {9, control_optimality}, {10, drift_shift},     {11, penalization},   {12, large_deviation}};
    return all;
}

/// Runs one criterion; module errors become a failed result.
inline CriterionResult run_criterion(int id, const AcceptanceOptions& opts = {}) {
    for (const auto& [n, fn] : acceptance_criteria()) {
        if (n != id) continue;
        const auto t0 = std::chrono::steady_clock::now();
        CriterionResult r;
        try {
            r = fn(opts);
        } catch (const std::exception& e) {
            r.id = id;
            r.passed = false;
            r.summary = std::string("error: ") + e.what();
        }
        r.seconds = acceptance::elapsed(t0);
        return r;
    }
    throw Error(ErrorCode::InvalidArgument, "cli", "criterion must be between 1 and 12");
}

inline std::string status_line(const CriterionResult& r) {
    std::ostringstream os;
    os << "criterion " << r.id << " " << (r.passed ? "PASS" : "FAIL") << " [" << r.title << "] " << r.summary << " ("
       << std::fixed << std::setprecision(1) << r.seconds << " s)";
    return os.str();
}

inline json to_json(const CriterionResult& r) {
    return {{"criterion", r.id}, {"title", r.title},      {"passed", r.passed},
            {"summary", r.summary}, {"details", r.details}, {"seconds", r.seconds}};
}

}  // namespace ebsde
