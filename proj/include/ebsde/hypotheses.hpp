#pragma once

#include "ebsde/driver.hpp"
#include "ebsde/dynamics.hpp"
#include "ebsde/geometry.hpp"

#include <json.hpp>

#include <limits>
#include <map>
#include <optional>

namespace ebsde {

namespace detail {

inline std::vector<Vec> distinct_samples(const Domain& d, int density) {
    std::vector<Vec> out;
    for (const Vec& p : domain_samples(d, density)) {
        bool dup = false;
        for (const Vec& q : out)
            if ((p - q).norm() < 1e-12) {
                dup = true;
                break;
            }
        if (!dup) out.push_back(p);
    }
    return out;
}

inline bool sigma_is_constant(const SdeModel& model, const std::vector<Vec>& pts) {
    if (model.sigma_constant) return true;
    const Mat s0 = model.sigma(pts.front());
    for (const Vec& p : pts)
        if ((model.sigma(p) - s0).norm() > 1e-12 * (1.0 + s0.norm())) return false;
    return true;
}

}  // namespace detail

/// sup over sampled pairs of <x-y, b(x)-b(y)>/|x-y|^2 + |sigma(x)-sigma(y)|_F^2 / (2|x-y|^2).
inline double estimate_eta(const SdeModel& model, const Domain& domain, int density = 33) {
    if (density < 8) throw Error(ErrorCode::InvalidArgument, "hypotheses", "eta needs at least 8 grid points per axis");
    const auto pts = detail::distinct_samples(domain, density);
    std::vector<Vec> b(pts.size());
    std::vector<Mat> s(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        b[i] = model.drift(pts[i]);
        s[i] = model.sigma(pts[i]);
    }
    double eta = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j) {
            const Vec dx = pts[i] - pts[j];
            const double r2 = dx.squaredNorm();
            const double val = dx.dot(b[i] - b[j]) / r2 + 0.5 * (s[i] - s[j]).squaredNorm() / r2;
            eta = std::max(eta, val);
        }
    return eta;
}

struct ModelLipschitz {
    double K_b = 0.0;
    double K_sigma = 0.0;
};

inline ModelLipschitz estimate_model_lipschitz(const SdeModel& model, const Domain& domain, int density = 33) {
    const auto pts = detail::distinct_samples(domain, density);
    ModelLipschitz out;
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j) {
            const double r = (pts[i] - pts[j]).norm();
            out.K_b = std::max(out.K_b, (model.drift(pts[i]) - model.drift(pts[j])).norm() / r);
            out.K_sigma = std::max(out.K_sigma, (model.sigma(pts[i]) - model.sigma(pts[j])).norm() / r);
        }
    return out;
}

struct ThetaEstimate {
    double theta = 0.0;
    /// max(alpha, 0) as used inside theta.
    double alpha = 0.0;
    double diameter = 0.0;
};

/// Upper estimate of theta for constant sigma. The beta term is bounded by its
/// worst case K_psi_z |(grad phi(x) + grad phi(y))^T sigma|. With xi > 0 the
/// shifted pair b - xi x, psi + xi z sigma^{-1} x is used, whose beta carries
/// the extra explicit part xi/2 sigma^{-1}(x + y).
inline ThetaEstimate estimate_theta(const SdeModel& model, const DriverSpec& driver, const Domain& domain,
                                    int density = 33, double xi = 0.0) {
    const auto pts = detail::distinct_samples(domain, density);
    if (!detail::sigma_is_constant(model, pts))
        throw Error(ErrorCode::SigmaNotConstant, "hypotheses", "theta is defined for constant sigma only");
    const GeometricConstants gc = geometric_constants(domain, density);
    ThetaEstimate out;
    out.alpha = std::max(gc.alpha_nonconvex, 0.0);
    out.diameter = gc.diameter;
    const double a = out.alpha;
    const Mat s = model.sigma(pts.front());
    const Mat ss = s * s.transpose();
    const std::size_t n = pts.size();
    std::vector<Vec> b(n), gp(n);
    std::vector<double> single(n);
    for (std::size_t i = 0; i < n; ++i) {
        b[i] = model.drift(pts[i]) - xi * pts[i];
        gp[i] = domain.grad_phi(pts[i]);
        single[i] = -0.5 * a * (domain.hess_phi(pts[i]).cwiseProduct(ss)).sum() - a * gp[i].dot(b[i]);
    }
    double theta = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const Vec dx = pts[i] - pts[j];
            const Vec sg = gp[i] + gp[j];
            double val = 2.0 * dx.dot(b[i] - b[j]) / dx.squaredNorm();
            val += a * driver.K_psi_z * (s.transpose() * sg).norm();
            val -= 0.5 * a * xi * sg.dot(pts[i] + pts[j]);
            val += single[i] + single[j];
            val += a * a * sg.dot(ss * sg);
            theta = std::max(theta, val);
        }
    out.theta = theta;
    return out;
}

struct KolmogorovConstants {
    double delta = 0.0;
    double c = 0.0;
};

/// Smallest sampled eigenvalue of the Hessian of U (no sign check).
inline double min_hessian_eigenvalue_scan(const SdeModel& model, const Domain& domain, int density = 33) {
    if (!model.potential) throw Error(ErrorCode::NotKolmogorov, "hypotheses", "model has no potential");
    double c = std::numeric_limits<double>::infinity();
    for (const Vec& p : domain_samples(domain, density)) c = std::min(c, min_eigenvalue(model.potential->hess(p)));
    return c;
}

inline KolmogorovConstants estimate_kolmogorov_constants(const SdeModel& model, const Domain& domain,
                                                         int density = 33) {
    if (!model.potential) throw Error(ErrorCode::NotKolmogorov, "hypotheses", "model has no potential");
    KolmogorovConstants out;
    double hi = -std::numeric_limits<double>::infinity(), lo = std::numeric_limits<double>::infinity();
    for (const Vec& p : domain_samples(domain, density)) {
        const double v = model.potential->grad(p).dot(p);
        hi = std::max(hi, v);
        lo = std::min(lo, v);
    }
    out.delta = hi - lo;
    out.c = min_hessian_eigenvalue_scan(model, domain, density);
    if (out.c <= 0.0)
        throw Error(ErrorCode::NonConvexPotential, "hypotheses", "sampled Hessian of U has a non-positive eigenvalue");
    return out;
}

struct ErgodicAverageOptions {
    double T = 200.0;
    double h = 1e-2;
    std::size_t paths = 16;
    std::uint64_t seed = 1;
    int quadrature_points = 2001;
};

/// E^nu[L phi]: Gibbs quadrature for Kolmogorov models, otherwise a long-run
/// time average started from the centroid after a burn-in.
inline Estimate expected_Lphi(const SdeModel& model, const Domain& domain, double eta,
                              const ErgodicAverageOptions& opts = {}) {
    const C2Field f = phi_field(domain);
    if (model.potential) {
        const DensityGrid g = invariant_density(model, domain, opts.quadrature_points);
        Estimate e;
        e.mean = g.expectation([&](const Vec& x) { return generator_apply(model, f, x); });
        e.samples = g.points.size();
        return e;
    }
    const std::size_t n = checked_steps(opts.T, opts.h);
    const double burn_in = default_burn_in(eta);
    std::vector<double> avg(opts.paths);
    parallel_for(opts.paths, [&](std::size_t p) {
        PathRng rng(opts.seed, p);
        Vec x = stationary_start(model, domain, rng, burn_in, opts.h, ReflectionScheme::bridge, nullptr);
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            s += generator_apply(model, f, x);
            const Vec xi = rng.normal_vector(model.dim);
            x = step_reflected(model, domain, x, opts.h, xi, ReflectionScheme::bridge, rng.uniform_open()).x;
        }
        avg[p] = s / static_cast<double>(n);
    });
    return estimate_from(avg);
}

struct DriverCheck {
    bool lipschitz_ok = true;
    bool bound_ok = true;
    double observed_K_x = 0.0;
    double observed_K_z = 0.0;
    double observed_M = 0.0;
};

/// Samples psi on domain points and z in [-z_max, z_max]^d and compares
/// against the declared constants.
inline DriverCheck check_driver(const DriverSpec& driver, const Domain& domain, int density = 17, double z_max = 3.0) {
    const auto xs = detail::distinct_samples(domain, density);
    Box zbox{Vec::Constant(domain.dim, -z_max), Vec::Constant(domain.dim, z_max)};
    const auto zs = box_grid(zbox, domain.dim == 1 ? 33 : 9);
    DriverCheck out;
    const Vec z0 = zeros(domain.dim);
    for (const Vec& x : xs) {
        const double v0 = std::abs(driver.psi(x, z0));
        out.observed_M = std::max(out.observed_M, v0);
        for (const Vec& z : zs) {
            if (driver.psi_bounded) out.observed_M = std::max(out.observed_M, std::abs(driver.psi(x, z)));
        }
    }
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (std::size_t j = i + 1; j < xs.size(); ++j)
            for (std::size_t k = 0; k < zs.size(); k += 3) {
                const double r = (xs[i] - xs[j]).norm();
                out.observed_K_x =
                    std::max(out.observed_K_x, std::abs(driver.psi(xs[i], zs[k]) - driver.psi(xs[j], zs[k])) / r);
            }
    for (const Vec& x : xs)
        for (std::size_t a = 0; a < zs.size(); ++a)
            for (std::size_t b = a + 1; b < zs.size(); ++b) {
                const double r = (zs[a] - zs[b]).norm();
                out.observed_K_z = std::max(out.observed_K_z, std::abs(driver.psi(x, zs[a]) - driver.psi(x, zs[b])) / r);
            }
    const double tol = 1e-9;
    out.lipschitz_ok = out.observed_K_x <= driver.K_psi_x * (1 + 1e-6) + tol &&
                       out.observed_K_z <= driver.K_psi_z * (1 + 1e-6) + tol;
    out.bound_ok = out.observed_M <= driver.M_psi * (1 + 1e-6) + tol;
    return out;
}

struct HypothesisOptions {
    int grid_density = 33;
    ErgodicAverageOptions average;
};

struct HypothesisReport {
    double eta = 0.0;
    double K_b = 0.0;
    double K_sigma = 0.0;
    double K_psi_x = 0.0;
    double K_psi_z = 0.0;
    double M_psi = 0.0;
    std::optional<double> theta;
    std::optional<double> delta;
    std::optional<double> c_convexity;
    Estimate E_nu_Lphi;
    double sup_Lphi = 0.0;
    double inf_Lphi = 0.0;
    double grad_phi_sigma_sup = 0.0;
    double grad_phi_sup = 0.0;
    double diameter = 0.0;
    double alpha_nonconvex = 0.0;
    bool sigma_nonsingular = false;
    bool sigma_constant = false;
    /// Bounds on -(d lambda / d mu) that hold under (F2').
    double c_slope = 0.0;
    double C_slope = 0.0;
    std::optional<double> suggested_xi;
    std::map<std::string, bool> flags;
    std::vector<std::string> notes;

    bool flag(const std::string& key) const {
        auto it = flags.find(key);
        return it != flags.end() && it->second;
    }
};

inline HypothesisReport check_all(const SdeModel& model, const DriverSpec& driver, const Domain& domain,
                                  const HypothesisOptions& opts = {}) {
    HypothesisReport r;
    const int dens = opts.grid_density;
    const auto pts = detail::distinct_samples(domain, dens);

    // domain
    const double btol = 1e-7 * (1.0 + domain.diameter_hint());
    bool g1 = true;
    for (const Vec& p : pts)
        if (std::abs(domain.phi(p)) <= btol) g1 = g1 && std::abs(domain.grad_phi(p).norm() - 1.0) <= 1e-6;
    for (const Vec& p : box_grid(domain.bounding_box, dens)) {
        const Vec q = project(domain, p);
        g1 = g1 && domain.phi(q) >= -btol;
    }
    const GeometricConstants gc = geometric_constants(domain, dens);
    r.diameter = gc.diameter;
    r.alpha_nonconvex = gc.alpha_nonconvex;
    double grad_lip = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j)
            grad_lip = std::max(grad_lip, (domain.grad_phi(pts[i]) - domain.grad_phi(pts[j])).norm() /
                                              (pts[i] - pts[j]).norm());
    r.flags["G1"] = g1;
    r.flags["G2"] = domain.convex;
    r.flags["G2'"] = true;
    r.flags["G3"] = true;
    r.flags["G4"] = std::isfinite(grad_lip);

    // model
    r.eta = estimate_eta(model, domain, std::max(dens, 8));
    const ModelLipschitz ml = estimate_model_lipschitz(model, domain, dens);
    r.K_b = ml.K_b;
    r.K_sigma = ml.K_sigma;
    r.flags["H1"] = std::isfinite(r.K_b) && std::isfinite(r.K_sigma);
    r.sigma_constant = detail::sigma_is_constant(model, pts);
    r.sigma_nonsingular = true;
    for (const Vec& p : pts) {
        Eigen::JacobiSVD<Mat> svd(model.sigma(p));
        if (svd.singularValues().minCoeff() <= 1e-10) r.sigma_nonsingular = false;
    }

    // driver
    r.K_psi_x = driver.K_psi_x;
    r.K_psi_z = driver.K_psi_z;
    r.M_psi = driver.M_psi;
    const DriverCheck dc = check_driver(driver, domain, std::min(dens, 17));
    r.flags["H2"] = dc.lipschitz_ok && dc.bound_ok;
    if (!dc.lipschitz_ok) r.notes.push_back("declared Lipschitz constants of psi are violated on samples");
    if (!dc.bound_ok) r.notes.push_back("declared bound M_psi is violated on samples");
    r.flags["H3"] = r.eta + r.K_psi_z * r.K_sigma < 0.0;
    r.flags["F1"] = driver.g_c2_lip;

    if (r.sigma_constant) {
        const ThetaEstimate th = estimate_theta(model, driver, domain, dens);
        r.theta = th.theta;
        r.flags["H3'"] = th.theta < 0.0;
    } else {
        r.flags["H3'"] = false;
    }

    if (model.potential) {
        r.c_convexity = min_hessian_eigenvalue_scan(model, domain, dens);
        double hi = -1e300, lo = 1e300;
        for (const Vec& p : pts) {
            const double v = model.potential->grad(p).dot(p);
            hi = std::max(hi, v);
            lo = std::min(lo, v);
        }
        r.delta = hi - lo;
        r.flags["H4"] = *r.c_convexity > 0.0;
    } else {
        r.flags["H4"] = false;
    }

    // boundary functionals
    const C2Field f = phi_field(domain);
    r.sup_Lphi = -1e300;
    r.inf_Lphi = 1e300;
    for (const Vec& p : pts) {
        const double l = generator_apply(model, f, p);
        r.sup_Lphi = std::max(r.sup_Lphi, l);
        r.inf_Lphi = std::min(r.inf_Lphi, l);
        r.grad_phi_sigma_sup = std::max(r.grad_phi_sigma_sup, (model.sigma(p).transpose() * domain.grad_phi(p)).norm());
        r.grad_phi_sup = std::max(r.grad_phi_sup, domain.grad_phi(p).norm());
    }
    r.E_nu_Lphi = expected_Lphi(model, domain, r.eta, opts.average);

    r.flags["F2.1"] = driver.psi_bounded;
    r.flags["F2.2"] = r.E_nu_Lphi.mean + 3.0 * r.E_nu_Lphi.std_error < 0.0;
    r.flags["F2"] = r.flags["F2.1"] && r.flags["F2.2"];
    bool f2p = true;
    for (const Vec& p : pts) f2p = f2p && -generator_apply(model, f, p) > r.grad_phi_sigma_sup * r.K_psi_z;
    r.flags["F2'"] = f2p;
    r.c_slope = -r.sup_Lphi - r.grad_phi_sigma_sup * r.K_psi_z;
    r.C_slope = -r.inf_Lphi + r.grad_phi_sigma_sup * r.K_psi_z;
    if (r.delta && r.c_convexity && *r.c_convexity > 0.0) {
        const double lhs = (*r.delta / std::sqrt(2.0 * *r.c_convexity) + std::sqrt(2.0) * r.grad_phi_sup) * r.K_psi_z;
        r.flags["F2''"] = lhs < -(r.E_nu_Lphi.mean + 3.0 * r.E_nu_Lphi.std_error);
    } else {
        r.flags["F2''"] = false;
    }

    // drift-shift fallback
    if (!r.flags["H3"] && r.sigma_nonsingular) {
        double s = 0.0;
        for (const Vec& p : pts) s = std::max(s, Vec(model.sigma(p).fullPivLu().solve(p)).norm());
        if (r.K_sigma * s < 1.0) {
            const double excess = r.eta + r.K_psi_z * r.K_sigma;
            r.suggested_xi = 1.5 * std::max(excess, 0.0) / (1.0 - r.K_sigma * s) + 0.1;
            r.notes.push_back("(H3) fails; shifting the drift by -xi x and psi by xi z sigma^{-1} x restores it");
        }
    }
    if (r.flags["F2"] && !r.flags["F2'"] && !r.flags["F2''"])
        r.notes.push_back("only (F2) holds: the boundary cost mu exists but may not be unique");
    return r;
}

inline nlohmann::json to_json(const Estimate& e) {
    return {{"mean", e.mean}, {"std_error", e.std_error}, {"samples", e.samples}};
}

inline nlohmann::json to_json(const HypothesisReport& r) {
    nlohmann::json j;
    j["eta"] = r.eta;
    j["K_b"] = r.K_b;
    j["K_sigma"] = r.K_sigma;
    j["K_psi_x"] = r.K_psi_x;
    j["K_psi_z"] = r.K_psi_z;
    j["M_psi"] = r.M_psi;
    j["theta"] = r.theta ? nlohmann::json(*r.theta) : nlohmann::json(nullptr);
    j["delta"] = r.delta ? nlohmann::json(*r.delta) : nlohmann::json(nullptr);
    j["c_convexity"] = r.c_convexity ? nlohmann::json(*r.c_convexity) : nlohmann::json(nullptr);
    j["E_nu_Lphi"] = to_json(r.E_nu_Lphi);
    j["sup_Lphi"] = r.sup_Lphi;
    j["inf_Lphi"] = r.inf_Lphi;
    j["grad_phi_sigma_sup"] = r.grad_phi_sigma_sup;
    j["diameter"] = r.diameter;
    j["alpha_nonconvex"] = r.alpha_nonconvex;
    j["sigma_constant"] = r.sigma_constant;
    j["sigma_nonsingular"] = r.sigma_nonsingular;
    j["c_slope"] = r.c_slope;
    j["C_slope"] = r.C_slope;
    j["suggested_xi"] = r.suggested_xi ? nlohmann::json(*r.suggested_xi) : nlohmann::json(nullptr);
    j["flags"] = r.flags;
    j["notes"] = r.notes;
    return j;
}

}  // namespace ebsde
