#pragma once

#include "ebsde/ergodic.hpp"

#include <ostream>

namespace ebsde {

struct PdeResidualOptions {
    /// Nodes closer than exclusion_radius to exclusion_center are skipped in the interior check.
    std::optional<Vec> exclusion_center;
    double exclusion_radius = 0.0;
};

struct PdeResidualReport {
    double interior_max = 0.0;
    double boundary_max = 0.0;
    std::size_t interior_nodes = 0;
    std::size_t boundary_nodes = 0;
    Vec worst_interior;
};

namespace detail {

// One-sided derivative along step direction s (node offsets 2 and 4 when
// available, else 1 and 2), second order.
inline std::optional<double> one_sided(const Grid& g, const std::vector<double>& v, std::size_t id, int axis, int s) {
    const int slot = 2 * axis + (s > 0 ? 1 : 0);
    auto walk = [&](int from, int steps) {
        int cur = from;
        for (int k = 0; k < steps && cur >= 0; ++k) cur = g.nbr[cur][slot];
        return cur;
    };
    const int a2 = walk(static_cast<int>(id), 2), a4 = walk(static_cast<int>(id), 4);
    if (a2 >= 0 && a4 >= 0) return s * (-3.0 * v[id] + 4.0 * v[a2] - v[a4]) / (4.0 * g.h);
    const int a1 = walk(static_cast<int>(id), 1);
    if (a1 >= 0 && a2 >= 0) return s * (-3.0 * v[id] + 4.0 * v[a1] - v[a2]) / (2.0 * g.h);
    return std::nullopt;
}

}  // namespace detail

/// Residuals of L v + psi(x, grad v^T sigma) = lambda and grad v . grad phi + g = mu
/// with stencils of width 2h, so they do not coincide with the solver's.
inline PdeResidualReport pde_residual(const ErgodicSolution& sol, const SdeModel& model, const Domain& domain,
                                      const DriverSpec& driver, const PdeResidualOptions& opts = {}) {
    const Grid& g = *sol.v.grid;
    const std::vector<double>& v = sol.v.values;
    const double h = g.h;
    PdeResidualReport r;
    r.worst_interior = zeros(g.dim);
    for (std::size_t id = 0; id < g.size(); ++id) {
        const auto [ti, tj] = g.tensor[id];
        if (g.boundary[id]) {
            const Vec& nrm = g.normal[id];
            Vec grad = zeros(g.dim);
            bool ok = true;
            for (int k = 0; k < g.dim && ok; ++k) {
                if (std::abs(nrm[k]) < 1e-14) continue;
                const auto d = detail::one_sided(g, v, id, k, nrm[k] > 0 ? 1 : -1);
                if (d) grad[k] = *d;
                else ok = false;
            }
            if (!ok) continue;
            const Vec gp = domain.grad_phi(g.boundary_point[id]);
            const double res = std::abs(grad.dot(gp) + driver.g(g.boundary_point[id]) - sol.mu);
            r.boundary_max = std::max(r.boundary_max, res);
            ++r.boundary_nodes;
            continue;
        }
        const Vec& x = g.nodes[id];
        if (opts.exclusion_center && (x - *opts.exclusion_center).norm() < opts.exclusion_radius) continue;
        Vec grad(g.dim);
        Mat hess = Mat::Zero(g.dim, g.dim);
        bool ok = true;
        for (int k = 0; k < g.dim && ok; ++k) {
            const int p = k == 0 ? g.node_at(ti + 2, tj) : g.node_at(ti, tj + 2);
            const int m = k == 0 ? g.node_at(ti - 2, tj) : g.node_at(ti, tj - 2);
            if (p < 0 || m < 0) {
                ok = false;
                break;
            }
            grad[k] = (v[p] - v[m]) / (4.0 * h);
            hess(k, k) = (v[p] - 2.0 * v[id] + v[m]) / (4.0 * h * h);
        }
        if (ok && g.dim == 2) {
            const int pp = g.node_at(ti + 2, tj + 2), mm = g.node_at(ti - 2, tj - 2);
            const int pm = g.node_at(ti + 2, tj - 2), mp = g.node_at(ti - 2, tj + 2);
            if (pp < 0 || mm < 0 || pm < 0 || mp < 0) ok = false;
            else hess(0, 1) = hess(1, 0) = (v[pp] + v[mm] - v[pm] - v[mp]) / (16.0 * h * h);
        }
        if (!ok) continue;
        const Mat s = model.sigma(x);
        const double Lv = 0.5 * (s * s.transpose()).cwiseProduct(hess).sum() + model.drift(x).dot(grad);
        const double res = std::abs(Lv + driver.psi(x, s.transpose() * grad) - sol.lambda);
        if (res > r.interior_max) {
            r.interior_max = res;
            r.worst_interior = x;
        }
        ++r.interior_nodes;
    }
    return r;
}

struct BsdeResidualOptions {
    std::size_t paths = 1000;
    double T = 1.0;
    double h = 1e-2;
    std::uint64_t seed = 1;
    ReflectionScheme scheme = ReflectionScheme::bridge;
    /// Start point; the domain centroid when unset.
    std::optional<Vec> x0;
    int checkpoints = 10;
};

struct BsdeResidualReport {
    Estimate residual;
    double variance = 0.0;
    std::vector<double> checkpoint_times;
    /// Partial residuals over [0, t] at each checkpoint.
    std::vector<Estimate> partial;
    /// Largest |mean| / standard error among the partial residuals.
    double max_partial_z = 0.0;
    std::vector<double> per_path;
};

/// Pathwise residual of Y_0 - Y_T - sum (psi - lambda) h - sum (g - mu) dK + sum Z dW
/// with Y = v(X) and Z = zeta(X) along simulated reflected paths.
inline BsdeResidualReport bsde_residual(const ScalarFn& v, const VectorFn& zeta, double lambda, double mu,
                                        const SdeModel& model, const Domain& domain, const DriverSpec& driver,
                                        const BsdeResidualOptions& opts = {}) {
    const std::size_t n = checked_steps(opts.T, opts.h);
    const Vec x0 = opts.x0 ? *opts.x0 : domain.centroid;
    if (!domain.contains(x0))
        throw Error(ErrorCode::InvalidArgument, "verification", "start point outside the closed domain");
    const int m = std::max(1, opts.checkpoints);
    std::vector<std::size_t> marks;
    for (int c = 1; c <= m; ++c) marks.push_back(std::max<std::size_t>(1, n * c / m));
    std::vector<std::vector<double>> partial(marks.size(), std::vector<double>(opts.paths));
    std::vector<double> total(opts.paths);
    const double sh = std::sqrt(opts.h);
    parallel_for(opts.paths, [&](std::size_t p) {
        PathRng rng(opts.seed, p);
        Vec x = x0;
        const double v0 = v(x0);
        double acc = 0.0;
        std::size_t next = 0;
        for (std::size_t i = 1; i <= n; ++i) {
            const Vec xi = rng.normal_vector(model.dim);
            const Vec z = zeta(x);
            acc -= (driver.psi(x, z) - lambda) * opts.h;
            acc += z.dot(xi) * sh;
            const StepResult s = step_reflected(model, domain, x, opts.h, xi, opts.scheme, rng.uniform_open());
            if (s.dK > 0.0) acc -= (driver.g(s.contact) - mu) * s.dK;
            x = s.x;
            if (next < marks.size() && i == marks[next]) {
                partial[next][p] = v0 - v(x) + acc;
                ++next;
            }
        }
        total[p] = v0 - v(x) + acc;
    });
    BsdeResidualReport r;
    r.residual = estimate_from(total);
    r.variance = r.residual.std_error * r.residual.std_error * static_cast<double>(opts.paths);
    for (std::size_t c = 0; c < marks.size(); ++c) {
        r.checkpoint_times.push_back(static_cast<double>(marks[c]) * opts.h);
        const Estimate e = estimate_from(partial[c]);
        r.partial.push_back(e);
        if (e.std_error > 0.0) r.max_partial_z = std::max(r.max_partial_z, std::abs(e.mean) / e.std_error);
        else if (e.mean != 0.0) r.max_partial_z = std::numeric_limits<double>::infinity();
    }
    r.per_path = std::move(total);
    return r;
}

inline BsdeResidualReport bsde_residual(const ErgodicSolution& sol, const SdeModel& model, const Domain& domain,
                                        const DriverSpec& driver, const BsdeResidualOptions& opts = {}) {
    return bsde_residual([&sol](const Vec& x) { return sol.value_at(x); },
                         [&sol](const Vec& x) { return sol.zeta_at(x); }, sol.lambda, sol.mu, model, domain, driver,
                         opts);
}

inline void write_residuals_csv(std::ostream& os, const BsdeResidualReport& r) {
    os << "path,residual\n";
    os.precision(17);
    for (std::size_t i = 0; i < r.per_path.size(); ++i) os << i << ',' << r.per_path[i] << '\n';
}

struct ShiftedProblem {
    SdeModel model;
    DriverSpec driver;
};

/// b - xi x and psi(x, z) + xi z sigma^{-1}(x) x: the same PDE, a more dissipative drift.
inline ShiftedProblem shift_drift(const SdeModel& model, const DriverSpec& driver, const Domain& domain, double xi,
                                  int density = 33) {
    double s = 0.0;
    for (const Vec& p : domain_samples(domain, density)) {
        const Mat sg = model.sigma(p);
        Eigen::JacobiSVD<Mat> svd(sg);
        if (svd.singularValues().minCoeff() <= 1e-10)
            throw Error(ErrorCode::SingularSigma, "verification", "drift shift needs sigma invertible on the closure");
        s = std::max(s, Vec(sg.fullPivLu().solve(p)).norm());
    }
    ShiftedProblem out{model, driver};
    const VectorFn b = model.drift;
    const MatrixFn sigma = model.sigma;
    out.model.drift = [b, xi](const Vec& x) -> Vec { return b(x) - xi * x; };
    out.model.potential.reset();
    out.model.description = model.description + " (drift shifted)";
    const DriverFn psi = driver.psi;
    out.driver.psi = [psi, sigma, xi](const Vec& x, const Vec& z) {
        return psi(x, z) + xi * z.dot(Vec(sigma(x).fullPivLu().solve(x)));
    };
    const DriverSpec base = driver;
    out.driver.dpsi_dz = [base, sigma, xi](const Vec& x, const Vec& z) -> Vec {
        return base.grad_z(x, z) + xi * Vec(sigma(x).fullPivLu().solve(x));
    };
    out.driver.K_psi_z = driver.K_psi_z + xi * s;
    out.driver.psi_bounded = xi == 0.0 && driver.psi_bounded;
    out.driver.description = driver.description + " (drift shifted)";
    return out;
}

struct DriftShiftReport {
    double xi = 0.0;
    double lambda = 0.0;
    double lambda_shifted = 0.0;
    double lambda_gap = 0.0;
    double v_gap = 0.0;
    double eta = 0.0;
    double eta_shifted = 0.0;
    /// |eta_shifted - (eta - xi)|
    double eta_gap = 0.0;
    double K_psi_z_shifted = 0.0;
};

inline DriftShiftReport drift_shift_equivalence(const SdeModel& model, const Domain& domain, const DriverSpec& driver,
                                                double xi, double mu = 0.0, const ErgodicOptions& opts = {},
                                                int density = 33) {
    const ShiftedProblem sp = shift_drift(model, driver, domain, xi, density);
    auto grid = make_grid(domain, opts.solve.grid);
    const ErgodicSolution a = solve_ergodic(model, domain, driver, mu, ErgodicScheme::direct, opts, grid);
    const ErgodicSolution b = solve_ergodic(sp.model, domain, sp.driver, mu, ErgodicScheme::direct, opts, grid);
    DriftShiftReport r;
    r.xi = xi;
    r.lambda = a.lambda;
    r.lambda_shifted = b.lambda;
    r.lambda_gap = std::abs(a.lambda - b.lambda);
    for (std::size_t i = 0; i < a.v.values.size(); ++i)
        r.v_gap = std::max(r.v_gap, std::abs(a.v.values[i] - b.v.values[i]));
    r.eta = estimate_eta(model, domain, density);
    r.eta_shifted = estimate_eta(sp.model, domain, density);
    r.eta_gap = std::abs(r.eta_shifted - (r.eta - xi));
    r.K_psi_z_shifted = sp.driver.K_psi_z;
    return r;
}

inline nlohmann::json to_json(const PdeResidualReport& r) {
    return {{"interior_max", r.interior_max},
            {"boundary_max", r.boundary_max},
            {"interior_nodes", r.interior_nodes},
            {"boundary_nodes", r.boundary_nodes}};
}

inline nlohmann::json to_json(const BsdeResidualReport& r) {
    nlohmann::json j;
    j["residual"] = to_json(r.residual);
    j["variance"] = r.variance;
    j["checkpoint_times"] = r.checkpoint_times;
    std::vector<double> means, ses;
    for (const Estimate& e : r.partial) {
        means.push_back(e.mean);
        ses.push_back(e.std_error);
    }
    j["partial_means"] = means;
    j["partial_std_errors"] = ses;
    j["max_partial_z"] = r.max_partial_z;
    return j;
}

inline nlohmann::json to_json(const DriftShiftReport& r) {
    return {{"xi", r.xi},
            {"lambda", r.lambda},
            {"lambda_shifted", r.lambda_shifted},
            {"lambda_gap", r.lambda_gap},
            {"v_gap", r.v_gap},
            {"eta", r.eta},
            {"eta_shifted", r.eta_shifted},
            {"eta_gap", r.eta_gap},
            {"K_psi_z_shifted", r.K_psi_z_shifted}};
}

}  // namespace ebsde
