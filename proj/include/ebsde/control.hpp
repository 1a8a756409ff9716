#pragma once

#include "ebsde/ergodic.hpp"

#include <memory>
#include <sstream>

namespace ebsde {

/// Finite control grid with running cost L(x, u), drift direction R(u) and
/// boundary cost g.
struct ControlProblem {
    int dim = 1;
    std::vector<std::string> labels;
    std::vector<Vec> R;
    std::function<double(const Vec& x, std::size_t u)> L;
    ScalarFn g;
    double M_R = 0.0;
    double M_L = 0.0;
    /// Lipschitz constant of L in x, uniform in u.
    double K_L_x = 0.0;

    std::size_t size() const { return R.size(); }
};

/// Throws InvalidArgument when the grid is empty or a declared bound fails on samples.
inline void validate(const ControlProblem& p, const Domain& domain, int density = 17) {
    if (p.R.empty() || !p.L) throw Error(ErrorCode::InvalidArgument, "control", "control grid is empty");
    if (!p.labels.empty() && p.labels.size() != p.R.size())
        throw Error(ErrorCode::InvalidArgument, "control", "one label per control point");
    for (const Vec& r : p.R) {
        if (r.size() != p.dim) throw Error(ErrorCode::InvalidArgument, "control", "R(u) has the wrong dimension");
        if (r.norm() > p.M_R * (1 + 1e-12) + 1e-12)
            throw Error(ErrorCode::InvalidArgument, "control", "|R(u)| exceeds M_R");
    }
    for (const Vec& x : domain_samples(domain, density))
        for (std::size_t u = 0; u < p.size(); ++u)
            if (std::abs(p.L(x, u)) > p.M_L * (1 + 1e-12) + 1e-12)
                throw Error(ErrorCode::InvalidArgument, "control", "|L(x, u)| exceeds M_L");
}

struct HamiltonianValue {
    double value = 0.0;
    std::size_t argmin = 0;
};

/// min over the grid of L(x, u) + z R(u); ties go to the lowest index.
inline HamiltonianValue hamiltonian(const ControlProblem& p, const Vec& x, const Vec& z) {
    HamiltonianValue h{std::numeric_limits<double>::infinity(), 0};
    for (std::size_t u = 0; u < p.size(); ++u) {
        const double v = p.L(x, u) + z.dot(p.R[u]);
        if (v < h.value) {
            h.value = v;
            h.argmin = u;
        }
    }
    return h;
}

inline DriverSpec make_hamiltonian_driver(const ControlProblem& p) {
    auto shared = std::make_shared<const ControlProblem>(p);
    DriverSpec d;
    d.psi = [shared](const Vec& x, const Vec& z) { return hamiltonian(*shared, x, z).value; };
    d.dpsi_dz = [shared](const Vec& x, const Vec& z) -> Vec { return shared->R[hamiltonian(*shared, x, z).argmin]; };
    d.g = p.g;
    d.K_psi_x = p.K_L_x;
    d.K_psi_z = p.M_R;
    d.M_psi = p.M_L;
    d.psi_bounded = false;
    d.description = "Hamiltonian of a finite control problem";
    return d;
}

struct Policy {
    std::string name;
    std::size_t controls = 0;
    std::function<std::size_t(const Vec& x)> rule;

    std::size_t operator()(const Vec& x) const {
        const std::size_t u = rule(x);
        if (u >= controls) throw Error(ErrorCode::InvalidArgument, "control", "policy left the control grid");
        return u;
    }
};

inline Policy constant_policy(const ControlProblem& p, std::size_t u) {
    if (u >= p.size()) throw Error(ErrorCode::InvalidArgument, "control", "control index out of range");
    return {"constant " + std::to_string(u), p.size(), [u](const Vec&) { return u; }};
}

namespace detail {

inline std::string threshold_name(const char* var, int axis, double threshold, std::size_t below, std::size_t above) {
    std::ostringstream os;
    os << "threshold " << var << axis << " < " << threshold << " ? " << below << " : " << above;
    return os.str();
}

}  // namespace detail

inline Policy threshold_x_policy(const ControlProblem& p, double threshold, std::size_t below, std::size_t above,
                                 int axis = 0) {
    if (below >= p.size() || above >= p.size())
        throw Error(ErrorCode::InvalidArgument, "control", "control index out of range");
    return {detail::threshold_name("x", axis, threshold, below, above), p.size(),
            [=](const Vec& x) { return x[axis] < threshold ? below : above; }};
}

inline Policy threshold_z_policy(const ControlProblem& p, std::shared_ptr<const ErgodicSolution> sol, double threshold,
                                 std::size_t below, std::size_t above, int axis = 0) {
    if (below >= p.size() || above >= p.size())
        throw Error(ErrorCode::InvalidArgument, "control", "control index out of range");
    return {detail::threshold_name("z", axis, threshold, below, above), p.size(),
            [=](const Vec& x) { return sol->zeta_at(x)[axis] < threshold ? below : above; }};
}

/// u = argmin_u L(x, u) + zeta(x) R(u) with zeta from an ergodic solution.
inline Policy optimal_feedback(const ControlProblem& p, std::shared_ptr<const ErgodicSolution> sol) {
    auto shared = std::make_shared<const ControlProblem>(p);
    return {"optimal feedback", p.size(),
            [shared, sol](const Vec& x) { return hamiltonian(*shared, x, sol->zeta_at(x)).argmin; }};
}

inline Policy custom_policy(const ControlProblem& p, std::string name, std::function<std::size_t(const Vec&)> rule) {
    return {std::move(name), p.size(), std::move(rule)};
}

/// Dynamics under P^rho: Girsanov turns sigma dW into sigma R(rho) dt + sigma dW^rho.
inline SdeModel controlled_model(const SdeModel& model, const ControlProblem& p, const Policy& policy) {
    SdeModel m = model;
    auto shared = std::make_shared<const ControlProblem>(p);
    const VectorFn b = model.drift;
    const MatrixFn sigma = model.sigma;
    m.drift = [b, sigma, shared, policy](const Vec& x) -> Vec { return b(x) + sigma(x) * shared->R[policy(x)]; };
    m.potential.reset();
    m.description = model.description + " under " + policy.name;
    return m;
}

struct CostOptions {
    double T = 100.0;
    double h = 1e-2;
    std::size_t paths = 64;
    std::uint64_t seed = 1;
    /// Start point; the domain centroid when unset.
    std::optional<Vec> x0;
    ReflectionScheme scheme = ReflectionScheme::bridge;
};

struct PolicyEvaluation {
    std::string policy;
    /// Horizons T/4, T/2, T.
    std::vector<double> horizons;
    std::vector<Estimate> I;
    std::vector<Estimate> J;
    std::vector<Estimate> K;
    /// J is undefined at horizons where E[K] is within 3 standard errors of 0.
    std::vector<bool> J_defined;
    /// max |L(X, rho) + zeta(X) R(rho) - psi(X, zeta(X))| along the paths when a solution is supplied.
    std::optional<double> equality_gap;

    const Estimate& I_final() const { return I.back(); }
    const Estimate& J_final() const { return J.back(); }
};

/// Simulates the controlled reflected paths once and returns both ergodic costs
///   I = E[int L ds + int (g - mu) dK] / t,
///   J = E[int (L - lambda) ds + int g dK] / E[K_t]
/// at horizons T/4, T/2 and T.
inline PolicyEvaluation evaluate_policy(const SdeModel& model, const Domain& domain, const ControlProblem& p,
                                        const Policy& policy, double mu, double lambda, const CostOptions& opts = {},
                                        const ErgodicSolution* sol = nullptr) {
    const std::size_t n = checked_steps(opts.T, opts.h);
    if (n < 4) throw Error(ErrorCode::InvalidArgument, "control", "horizon needs at least four steps");
    const SdeModel cm = controlled_model(model, p, policy);
    const Vec x0 = opts.x0 ? *opts.x0 : domain.centroid;
    const std::array<std::size_t, 3> marks{n / 4, n / 2, n};
    const std::size_t P = opts.paths;
    std::vector<std::array<double, 3>> aI(P), aJ(P), aK(P);
    std::vector<double> gap(P, 0.0);
    const DriverSpec hd = make_hamiltonian_driver(p);
    parallel_for(P, [&](std::size_t q) {
        PathRng rng(opts.seed, q);
        Vec x = x0;
        double run = 0.0, bnd = 0.0, k = 0.0;
        std::size_t next = 0;
        for (std::size_t i = 1; i <= n; ++i) {
            const std::size_t u = policy(x);
            run += p.L(x, u) * opts.h;
            if (sol && i % 64 == 1) {
                const Vec z = sol->zeta_at(x);
                gap[q] = std::max(gap[q], std::abs(p.L(x, u) + z.dot(p.R[u]) - hd.psi(x, z)));
            }
            const Vec xi = rng.normal_vector(model.dim);
            const StepResult s = step_reflected(cm, domain, x, opts.h, xi, opts.scheme, rng.uniform_open());
            if (s.dK > 0.0) {
                bnd += p.g(s.contact) * s.dK;
                k += s.dK;
            }
            x = s.x;
            if (next < 3 && i == marks[next]) {
                const double t = static_cast<double>(i) * opts.h;
                aI[q][next] = (run + bnd - mu * k) / t;
                aJ[q][next] = run - lambda * t + bnd;
                aK[q][next] = k;
                ++next;
            }
        }
    });
    PolicyEvaluation ev;
    ev.policy = policy.name;
    for (std::size_t m = 0; m < 3; ++m) {
        ev.horizons.push_back(static_cast<double>(marks[m]) * opts.h);
        std::vector<double> i_s(P), k_s(P), d_s(P);
        for (std::size_t q = 0; q < P; ++q) {
            i_s[q] = aI[q][m];
            k_s[q] = aK[q][m];
        }
        ev.I.push_back(estimate_from(i_s));
        const Estimate K = estimate_from(k_s);
        ev.K.push_back(K);
        Estimate J;
        J.samples = P;
        const bool defined = K.mean > 3.0 * K.std_error && K.mean > 0.0;
        if (defined) {
            double num = 0.0;
            for (std::size_t q = 0; q < P; ++q) num += aJ[q][m];
            J.mean = num / static_cast<double>(P) / K.mean;
            for (std::size_t q = 0; q < P; ++q) d_s[q] = (aJ[q][m] - J.mean * aK[q][m]) / K.mean;
            J.std_error = estimate_from(d_s).std_error;
        }
        ev.J.push_back(J);
        ev.J_defined.push_back(defined);
    }
    if (sol) ev.equality_gap = *std::max_element(gap.begin(), gap.end());
    return ev;
}

inline Estimate cost_I(const SdeModel& model, const Domain& domain, const ControlProblem& p, const Policy& policy,
                       double mu, const CostOptions& opts = {}) {
    return evaluate_policy(model, domain, p, policy, mu, 0.0, opts).I_final();
}

inline Estimate cost_J(const SdeModel& model, const Domain& domain, const ControlProblem& p, const Policy& policy,
                       double lambda, const CostOptions& opts = {}) {
    const PolicyEvaluation ev = evaluate_policy(model, domain, p, policy, 0.0, lambda, opts);
    if (!ev.J_defined.back())
        throw Error(ErrorCode::DegenerateLocalTime, "control",
                    "expected local time is indistinguishable from 0; lengthen the horizon");
    return ev.J_final();
}

struct GirsanovReport {
    Estimate weighted_I;
    Estimate shifted_I;
    Estimate mean_weight;
    double ess = 0.0;
    double ess_fraction = 0.0;
    bool estimates_agree = false;
    bool weights_unbiased = false;
};

/// Re-estimates cost_I under the uncontrolled measure with the exponential
/// weights exp(int R dW - 1/2 int |R|^2 ds) and compares with the drift-shifted
/// estimate. Both runs share the per-path noise streams.
inline GirsanovReport girsanov_weight_check(const SdeModel& model, const Domain& domain, const ControlProblem& p,
                                            const Policy& policy, double mu, const CostOptions& opts = {}) {
    const std::size_t n = checked_steps(opts.T, opts.h);
    const Vec x0 = opts.x0 ? *opts.x0 : domain.centroid;
    const std::size_t P = opts.paths;
    std::vector<double> w(P), wa(P);
    const double sh = std::sqrt(opts.h);
    parallel_for(P, [&](std::size_t q) {
        PathRng rng(opts.seed, q);
        Vec x = x0;
        double logw = 0.0, a = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t u = policy(x);
            const Vec& r = p.R[u];
            a += p.L(x, u) * opts.h;
            const Vec xi = rng.normal_vector(model.dim);
            logw += r.dot(xi) * sh - 0.5 * r.squaredNorm() * opts.h;
            const StepResult s = step_reflected(model, domain, x, opts.h, xi, opts.scheme, rng.uniform_open());
            if (s.dK > 0.0) a += (p.g(s.contact) - mu) * s.dK;
            x = s.x;
        }
        w[q] = std::exp(logw);
        wa[q] = w[q] * a / opts.T;
    });
    GirsanovReport r;
    r.mean_weight = estimate_from(w);
    r.weighted_I = estimate_from(wa);
    double s1 = 0.0, s2 = 0.0;
    for (double x : w) {
        s1 += x;
        s2 += x * x;
    }
    r.ess = s2 > 0.0 ? s1 * s1 / s2 : 0.0;
    r.ess_fraction = r.ess / static_cast<double>(P);
    if (r.ess_fraction < 0.05)
        throw Error(ErrorCode::WeightDegeneracy, "control",
                    "effective sample size below 5% of paths; shorten the horizon or reduce M_R");
    r.shifted_I = cost_I(model, domain, p, policy, mu, opts);
    const double se = std::hypot(r.weighted_I.std_error, r.shifted_I.std_error);
    r.estimates_agree = std::abs(r.weighted_I.mean - r.shifted_I.mean) <= 3.0 * se + 1e-12;
    r.weights_unbiased = std::abs(r.mean_weight.mean - 1.0) <= 3.0 * r.mean_weight.std_error + 1e-12;
    return r;
}

inline nlohmann::json to_json(const PolicyEvaluation& ev) {
    nlohmann::json j;
    j["policy"] = ev.policy;
    j["horizons"] = ev.horizons;
    for (std::size_t m = 0; m < ev.horizons.size(); ++m) {
        j["I"].push_back(to_json(ev.I[m]));
        j["K"].push_back(to_json(ev.K[m]));
        if (ev.J_defined[m]) j["J"].push_back(to_json(ev.J[m]));
        else j["J"].push_back(nullptr);
    }
    if (ev.equality_gap) j["equality_gap"] = *ev.equality_gap;
    return j;
}

inline nlohmann::json to_json(const GirsanovReport& r) {
    return {{"weighted_I", to_json(r.weighted_I)},   {"shifted_I", to_json(r.shifted_I)},
            {"mean_weight", to_json(r.mean_weight)}, {"ess", r.ess},
            {"ess_fraction", r.ess_fraction},        {"estimates_agree", r.estimates_agree},
            {"weights_unbiased", r.weights_unbiased}};
}

}  // namespace ebsde
