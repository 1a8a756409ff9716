#pragma once

#include "ebsde/discounted.hpp"
#include "ebsde/hypotheses.hpp"

#include <ostream>

namespace ebsde {

enum class ErgodicScheme { vanishing_discount, direct };

inline const char* to_string(ErgodicScheme s) { return s == ErgodicScheme::direct ? "direct" : "vanishing_discount"; }

struct ErgodicOptions {
    GridSolveOptions solve;
    /// Tolerance on lambda.
    double tol = 1e-6;
    int max_halvings = 40;
    /// First discount; |eta| / 4 when unset.
    std::optional<double> alpha0;
    /// Dissipativity constant; estimated when unset and needed.
    std::optional<double> eta;
};

struct ErgodicDiagnostics {
    std::string scheme;
    std::vector<double> alphas;
    std::vector<double> lambda_estimates;
    double extrapolation_error = 0.0;
    int iterations = 0;
    double residual = 0.0;
    std::vector<double> viscosities;
};

struct ErgodicSolution {
    GridFunction v;
    MatrixFn sigma;
    std::vector<Vec> zeta;
    double lambda = 0.0;
    double mu = 0.0;
    std::size_t ref = 0;
    ErgodicDiagnostics diagnostics;

    double value_at(const Vec& x) const { return v.value_at(x); }
    Vec zeta_at(const Vec& x) const { return sigma(x).transpose() * v.gradient_at(x); }
};

namespace detail {

inline std::size_t reference_node(const Grid& g, const Domain& d) { return static_cast<std::size_t>(g.nearest_node(d.centroid)); }

inline ErgodicSolution package(const SdeModel& model, GridFunction v, double lambda, double mu, std::size_t ref) {
    ErgodicSolution s;
    s.sigma = model.sigma;
    for (std::size_t i = 0; i < v.values.size(); ++i) s.zeta.push_back(model.sigma(v.grid->nodes[i]).transpose() * v.gradient[i]);
    s.v = std::move(v);
    s.lambda = lambda;
    s.mu = mu;
    s.ref = ref;
    return s;
}

inline ErgodicSolution solve_vanishing_discount(const SdeModel& model, const Domain& domain, const DriverSpec& driver,
                                                double mu, const ErgodicOptions& opts, std::shared_ptr<const Grid> grid) {
    double alpha0;
    if (opts.alpha0) {
        alpha0 = *opts.alpha0;
    } else {
        const double eta = opts.eta ? *opts.eta : estimate_eta(model, domain);
        alpha0 = std::abs(eta) > 1e-8 ? std::abs(eta) / 4.0 : 0.25;
    }
    const std::size_t ref = reference_node(*grid, domain);
    ErgodicDiagnostics diag;
    diag.scheme = to_string(ErgodicScheme::vanishing_discount);
    std::vector<double> prev_bar;
    double prev_lambda = 0.0;
    for (int k = 0; k <= opts.max_halvings; ++k) {
        const double alpha = alpha0 * std::pow(0.5, k);
        const DiscountedSolution ds = solve_discounted(model, domain, driver, alpha, mu, opts.solve, grid);
        diag.iterations += ds.info.iterations;
        diag.viscosities = ds.info.viscosities;
        const double at_ref = ds.v.values[ref];
        const double lambda = alpha * at_ref;
        std::vector<double> bar(ds.v.values.size());
        for (std::size_t i = 0; i < bar.size(); ++i) bar[i] = ds.v.values[i] - at_ref;
        diag.alphas.push_back(alpha);
        diag.lambda_estimates.push_back(lambda);
        if (k > 0 && std::abs(lambda - prev_lambda) < 0.5 * opts.tol) {
            std::vector<double> vx(bar.size());
            for (std::size_t i = 0; i < bar.size(); ++i) vx[i] = 2.0 * bar[i] - prev_bar[i];
            diag.extrapolation_error = std::abs(lambda - prev_lambda);
            GridProblem prob(model, domain, driver, grid);
            GridFunction f = finish(prob, grid, Eigen::Map<const Eigen::VectorXd>(vx.data(), static_cast<Eigen::Index>(vx.size())), mu);
            auto s = package(model, std::move(f), 2.0 * lambda - prev_lambda, mu, ref);
            s.diagnostics = diag;
            return s;
        }
        prev_lambda = lambda;
        prev_bar = std::move(bar);
    }
    throw Error(ErrorCode::NoConvergence, "ergodic_solver", "discount sequence exhausted before lambda settled");
}

}  // namespace detail

inline ErgodicSolution solve_ergodic_direct(const SdeModel& model, const Domain& domain, const DriverSpec& driver,
                                            double mu, const ErgodicOptions& opts, std::shared_ptr<const Grid> grid) {
    detail::GridProblem prob(model, domain, driver, grid);
    const std::size_t ref = detail::reference_node(*grid, domain);
    const std::size_t n = grid->size();
    ErgodicDiagnostics diag;
    diag.scheme = to_string(ErgodicScheme::direct);
    SolveInfo info;
    const Eigen::VectorXd u = detail::solve_with_viscosity(prob, 0.0, mu, true, ref, opts.solve, info);
    diag.iterations = info.iterations;
    diag.residual = info.residual;
    diag.viscosities = info.viscosities;
    GridFunction f = detail::finish(prob, grid, u, mu);
    auto s = detail::package(model, std::move(f), u[static_cast<Eigen::Index>(n)], mu, ref);
    s.diagnostics = diag;
    return s;
}

/// Ergodic pair (v, lambda) for a fixed boundary constant mu, normalized by v(x_ref) = 0.
inline ErgodicSolution solve_ergodic(const SdeModel& model, const Domain& domain, const DriverSpec& driver, double mu,
                                     ErgodicScheme scheme = ErgodicScheme::direct, const ErgodicOptions& opts = {},
                                     std::shared_ptr<const Grid> grid = nullptr) {
    if (!grid) grid = make_grid(domain, opts.solve.grid);
    if (scheme == ErgodicScheme::direct) return solve_ergodic_direct(model, domain, driver, mu, opts, grid);
    return detail::solve_vanishing_discount(model, domain, driver, mu, opts, grid);
}

struct SchemeComparison {
    ErgodicSolution vanishing_discount;
    ErgodicSolution direct;
    double lambda_gap = 0.0;
    double v_gap = 0.0;
};

/// Runs both schemes; SchemeMismatch when lambda differs by more than 5 tol.
inline SchemeComparison cross_check_schemes(const SdeModel& model, const Domain& domain, const DriverSpec& driver,
                                            double mu, const ErgodicOptions& opts = {}) {
    auto grid = make_grid(domain, opts.solve.grid);
    SchemeComparison c{solve_ergodic(model, domain, driver, mu, ErgodicScheme::vanishing_discount, opts, grid),
                       solve_ergodic(model, domain, driver, mu, ErgodicScheme::direct, opts, grid)};
    c.lambda_gap = std::abs(c.vanishing_discount.lambda - c.direct.lambda);
    for (std::size_t i = 0; i < c.direct.v.values.size(); ++i)
        c.v_gap = std::max(c.v_gap, std::abs(c.direct.v.values[i] - c.vanishing_discount.v.values[i]));
    if (c.lambda_gap > 5.0 * opts.tol)
        throw Error(ErrorCode::SchemeMismatch, "ergodic_solver",
                    "vanishing-discount and direct lambda disagree; refine the grid");
    return c;
}

struct LambdaOfMuCurve {
    std::vector<double> mu;
    std::vector<double> lambda;
    double tol = 0.0;

    bool non_increasing() const {
        for (std::size_t i = 0; i + 1 < mu.size(); ++i)
            if (lambda[i + 1] > lambda[i] + tol) return false;
        return true;
    }
    double continuity_modulus() const {
        double m = 0.0;
        for (std::size_t i = 0; i + 1 < mu.size(); ++i)
            m = std::max(m, std::abs(lambda[i + 1] - lambda[i]) / std::abs(mu[i + 1] - mu[i]));
        return m;
    }
    /// Finite-difference slopes -(lambda_{i+1} - lambda_i) / (mu_{i+1} - mu_i).
    std::vector<double> slopes() const {
        std::vector<double> s;
        for (std::size_t i = 0; i + 1 < mu.size(); ++i) s.push_back(-(lambda[i + 1] - lambda[i]) / (mu[i + 1] - mu[i]));
        return s;
    }
};

inline LambdaOfMuCurve lambda_of_mu(const SdeModel& model, const Domain& domain, const DriverSpec& driver,
                                    std::vector<double> mus, const ErgodicOptions& opts = {},
                                    ErgodicScheme scheme = ErgodicScheme::direct) {
    std::sort(mus.begin(), mus.end());
    auto grid = make_grid(domain, opts.solve.grid);
    LambdaOfMuCurve c;
    c.mu = mus;
    c.tol = opts.tol;
    c.lambda.resize(mus.size());
    for (std::size_t i = 0; i < mus.size(); ++i)
        c.lambda[i] = solve_ergodic(model, domain, driver, mus[i], scheme, opts, grid).lambda;
    return c;
}

inline void write_curve_csv(std::ostream& os, const LambdaOfMuCurve& c) {
    os << "mu,lambda,tol\n";
    os.precision(17);
    for (std::size_t i = 0; i < c.mu.size(); ++i) os << c.mu[i] << ',' << c.lambda[i] << ',' << c.tol << '\n';
}

struct BoundaryCostOptions {
    ErgodicOptions ergodic;
    /// Slope information for the initial bracket; estimated when both are unset.
    std::optional<double> E_nu_Lphi;
    std::optional<double> c_slope;
    int max_expansions = 30;
    int max_bisections = 200;
};

struct BoundaryCostResult {
    ErgodicSolution solution;
    double mu = 0.0;
    /// Successive brackets (lo, hi) including the initial one.
    std::vector<std::pair<double, double>> brackets;
    std::vector<std::pair<double, double>> bracket_values;
    int evaluations = 0;
};

/// Boundary constant mu* with lambda(mu*) = lambda_target, by bisection on an
/// expanding bracket using that lambda is non-increasing in mu.
inline BoundaryCostResult solve_boundary_cost(const SdeModel& model, const Domain& domain, const DriverSpec& driver,
                                              double lambda_target, const BoundaryCostOptions& opts = {}) {
    auto grid = make_grid(domain, opts.ergodic.solve.grid);
    BoundaryCostResult out;
    const double tol = opts.ergodic.tol;
    auto lam = [&](double mu) {
        ++out.evaluations;
        return solve_ergodic(model, domain, driver, mu, ErgodicScheme::direct, opts.ergodic, grid).lambda;
    };
    const double l0 = lam(0.0);
    double slope = 0.0;
    if (opts.E_nu_Lphi) slope = std::max(slope, std::abs(*opts.E_nu_Lphi));
    if (opts.c_slope) slope = std::max(slope, *opts.c_slope);
    if (!opts.E_nu_Lphi && !opts.c_slope) slope = std::abs(lam(1.0) - l0);
    if (slope < tol) slope = 1.0;
    double B = std::max(1.0, (std::abs(lambda_target - l0) + 2.0 * driver.M_psi) / slope);
    double llo = 0.0, lhi = 0.0;
    bool straddle = false;
    for (int e = 0; e <= opts.max_expansions; ++e) {
        llo = lam(-B);
        lhi = lam(B);
        out.brackets.emplace_back(-B, B);
        out.bracket_values.emplace_back(llo, lhi);
        if (llo >= lambda_target - tol && lhi <= lambda_target + tol) {
            straddle = true;
            break;
        }
        B *= 2.0;
    }
    if (!straddle)
        throw Error(ErrorCode::BracketFailure, "ergodic_solver", "lambda(mu) never straddles the target lambda");
    if (std::abs(llo - lhi) / (2.0 * B) < tol)
        throw Error(ErrorCode::FlatCurve, "ergodic_solver",
                    "lambda(mu) is flat over the bracket; mu is not identifiable from lambda");
    double lo = -B, hi = B;
    for (int it = 0; it < opts.max_bisections; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double lm = lam(mid);
        if (std::abs(lm - lambda_target) <= 0.5 * tol || hi - lo < 1e-12 * (1.0 + B)) {
            out.mu = mid;
            break;
        }
        if (lm > lambda_target) {
            lo = mid;
            llo = lm;
        } else {
            hi = mid;
            lhi = lm;
        }
        out.brackets.emplace_back(lo, hi);
        out.bracket_values.emplace_back(llo, lhi);
        out.mu = 0.5 * (lo + hi);
    }
    out.solution = solve_ergodic(model, domain, driver, out.mu, ErgodicScheme::direct, opts.ergodic, grid);
    return out;
}

struct LambdaMonteCarloOptions {
    double T = 100.0;
    double h = 1e-2;
    std::size_t paths = 200;
    std::uint64_t seed = 1;
    ReflectionScheme scheme = ReflectionScheme::bridge;
};

/// Long-run average of psi(X, zeta(X)) dt + (g(X) - mu) dK per unit time.
inline Estimate lambda_monte_carlo(const ErgodicSolution& sol, const SdeModel& model, const Domain& domain,
                                   const DriverSpec& driver, const LambdaMonteCarloOptions& opts = {}) {
    const std::size_t n = checked_steps(opts.T, opts.h);
    std::optional<GibbsSampler> sampler;
    if (model.potential) sampler.emplace(model, domain);
    const double burn = default_burn_in(estimate_eta(model, domain, 9));
    std::vector<double> out(opts.paths);
    parallel_for(opts.paths, [&](std::size_t p) {
        PathRng rng(opts.seed, p);
        Vec x = stationary_start(model, domain, rng, burn, opts.h, opts.scheme, sampler ? &*sampler : nullptr);
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += driver.psi(x, sol.zeta_at(x)) * opts.h;
            const Vec xi = rng.normal_vector(model.dim);
            const StepResult r = step_reflected(model, domain, x, opts.h, xi, opts.scheme, rng.uniform_open());
            if (r.dK > 0.0) acc += (driver.g(r.contact) - sol.mu) * r.dK;
            x = r.x;
        }
        out[p] = acc / opts.T;
    });
    return estimate_from(out);
}

inline nlohmann::json to_json(const ErgodicSolution& s) {
    nlohmann::json j;
    j["lambda"] = s.lambda;
    j["mu"] = s.mu;
    j["x_ref"] = std::vector<double>(s.v.grid->nodes[s.ref].data(), s.v.grid->nodes[s.ref].data() + s.v.grid->dim);
    j["grid_nodes"] = s.v.values.size();
    j["grid_spacing"] = s.v.grid->h;
    j["diagnostics"] = {{"scheme", s.diagnostics.scheme},
                        {"alphas", s.diagnostics.alphas},
                        {"lambda_estimates", s.diagnostics.lambda_estimates},
                        {"extrapolation_error", s.diagnostics.extrapolation_error},
                        {"iterations", s.diagnostics.iterations},
                        {"residual", s.diagnostics.residual},
                        {"viscosities", s.diagnostics.viscosities}};
    return j;
}

}  // namespace ebsde
