#pragma once

#include "ebsde/core.hpp"

#include <Eigen/Eigenvalues>

#include <limits>
#include <string>

namespace ebsde {

struct Box {
    Vec lo;
    Vec hi;

    int dim() const { return static_cast<int>(lo.size()); }
    double diagonal() const { return (hi - lo).norm(); }
    Vec center() const { return 0.5 * (lo + hi); }
};

/// Bounded domain G = {phi > 0} with boundary {phi = 0}. The defining
/// function must satisfy |grad phi| = 1 on the boundary; grad phi is then the
/// inward unit normal there.
struct Domain {
    std::string kind;
    int dim = 1;
    ScalarFn phi;
    VectorFn grad_phi;
    MatrixFn hess_phi;
    Box bounding_box;
    bool convex = true;
    Vec centroid;
    /// Optional closed form for the nearest boundary point of any x.
    VectorFn nearest_boundary_closed_form;

    double diameter_hint() const { return bounding_box.diagonal(); }
    double boundary_tol() const { return 1e-9 * diameter_hint(); }
    bool contains(const Vec& x) const { return phi(x) >= -boundary_tol(); }
};

/// Ball of radius r centred at the origin. With quartic_weight w in [0, 1] the
/// defining function is (1-w)(r^2-|x|^2)/(2r) + w(r^4-|x|^4)/(4r^3); both
/// parts have unit gradient on the sphere, so the blend does too.
inline Domain make_ball(double radius, int dim, double quartic_weight = 0.0) {
    if (!(radius > 0.0) || dim < 1 || dim > kMaxDim || quartic_weight < 0.0 || quartic_weight > 1.0)
        throw Error(ErrorCode::InvalidArgument, "geometry", "ball needs radius > 0, 1 <= dim <= kMaxDim, weight in [0,1]");
    const double r = radius, w = quartic_weight;
    Domain d;
    d.kind = "ball";
    d.dim = dim;
    d.phi = [r, w](const Vec& x) {
        const double s = x.squaredNorm();
        return (1.0 - w) * (r * r - s) / (2.0 * r) + w * (r * r * r * r - s * s) / (4.0 * r * r * r);
    };
    d.grad_phi = [r, w](const Vec& x) -> Vec {
        const double s = x.squaredNorm();
        return -((1.0 - w) / r + w * s / (r * r * r)) * x;
    };
    d.hess_phi = [r, w, dim](const Vec& x) -> Mat {
        const double s = x.squaredNorm();
        Mat h = -((1.0 - w) / r + w * s / (r * r * r)) * identity(dim);
        h -= (2.0 * w / (r * r * r)) * (x * x.transpose());
        return h;
    };
    d.bounding_box = {Vec::Constant(dim, -r), Vec::Constant(dim, r)};
    d.convex = true;
    d.centroid = zeros(dim);
    d.nearest_boundary_closed_form = [r, dim](const Vec& x) -> Vec {
        const double n = x.norm();
        if (n == 0.0) {
            Vec e = zeros(dim);
            e[0] = r;
            return e;
        }
        return (r / n) * x;
    };
    return d;
}

/// Ellipsoid {(x-c)^T A (x-c) < 1} for symmetric positive definite A. With
/// q = 1 - (x-c)^T A (x-c), the defining function is q / rho where
/// rho^2 = |grad q|^2 + kappa q^2; rho never vanishes and equals |grad q| on
/// the boundary, which gives |grad phi| = 1 there.
inline Domain make_quadratic(const Mat& A, Vec center = Vec()) {
    const int dim = static_cast<int>(A.rows());
    if (dim < 1 || dim > kMaxDim || A.cols() != A.rows())
        throw Error(ErrorCode::InvalidArgument, "geometry", "quadratic domain needs a square matrix");
    if (center.size() == 0) center = zeros(dim);
    if (center.size() != dim) throw Error(ErrorCode::InvalidArgument, "geometry", "center dimension mismatch");
    Eigen::SelfAdjointEigenSolver<Mat> eig(A);
    if (eig.eigenvalues().minCoeff() <= 0.0)
        throw Error(ErrorCode::InvalidArgument, "geometry", "quadratic domain matrix must be positive definite");
    const double kappa = 4.0 * eig.eigenvalues().maxCoeff();
    const Mat A2 = A * A;

    struct Parts {
        double q, rho;
        Vec gq, grho;
        Mat hq, hrho;
    };
    auto parts = [A, A2, kappa, center, dim](const Vec& xin) {
        const Vec x = xin - center;
        Parts p;
        p.q = 1.0 - x.dot(A * x);
        p.gq = -2.0 * (A * x);
        p.hq = -2.0 * A;
        const double s = 4.0 * x.dot(A2 * x) + kappa * p.q * p.q;
        const Vec gs = 8.0 * (A2 * x) + 2.0 * kappa * p.q * p.gq;
        const Mat hs = 8.0 * A2 + 2.0 * kappa * (p.gq * p.gq.transpose() + p.q * p.hq);
        p.rho = std::sqrt(s);
        p.grho = gs / (2.0 * p.rho);
        p.hrho = hs / (2.0 * p.rho) - (gs * gs.transpose()) / (4.0 * p.rho * p.rho * p.rho);
        (void)dim;
        return p;
    };

    Domain d;
    d.kind = "quadratic";
    d.dim = dim;
    d.phi = [parts](const Vec& x) {
        const Parts p = parts(x);
        return p.q / p.rho;
    };
    d.grad_phi = [parts](const Vec& x) -> Vec {
        const Parts p = parts(x);
        return p.gq / p.rho - (p.q / (p.rho * p.rho)) * p.grho;
    };
    d.hess_phi = [parts](const Vec& x) -> Mat {
        const Parts p = parts(x);
        const double r = p.rho, r2 = r * r, r3 = r2 * r;
        Mat h = p.hq / r - (p.gq * p.grho.transpose() + p.grho * p.gq.transpose()) / r2 - (p.q / r2) * p.hrho +
                (2.0 * p.q / r3) * (p.grho * p.grho.transpose());
        return h;
    };
    // Semi-axis along coordinate i is sqrt((A^{-1})_ii) for the bounding box.
    const Mat Ainv = A.inverse();
    Vec half(dim);
    for (int i = 0; i < dim; ++i) half[i] = std::sqrt(Ainv(i, i));
    d.bounding_box = {center - half, center + half};
    d.convex = true;
    d.centroid = center;
    return d;
}

namespace detail {

/// Point where the ray from the centroid through x crosses the boundary.
inline Vec radial_boundary_point(const Domain& d, const Vec& x) {
    Vec dir = x - d.centroid;
    double n = dir.norm();
    if (n == 0.0) {
        dir = zeros(d.dim);
        dir[0] = 1.0;
        n = 1.0;
    }
    dir /= n;
    double lo = 0.0, hi = 2.0 * d.bounding_box.diagonal() + n;
    for (int i = 0; i < 200 && hi - lo > 1e-15 * (1.0 + hi); ++i) {
        const double mid = 0.5 * (lo + hi);
        if (d.phi(d.centroid + mid * dir) > 0.0) lo = mid;
        else hi = mid;
    }
    return d.centroid + 0.5 * (lo + hi) * dir;
}

/// Damped Newton on the KKT system p - x - t grad phi(p) = 0, phi(p) = 0.
inline Vec newton_nearest_boundary(const Domain& d, const Vec& x, int max_iterations = 100) {
    const int n = d.dim;
    Vec p = radial_boundary_point(d, x);
    Vec g = d.grad_phi(p);
    double t = (p - x).dot(g) / std::max(g.squaredNorm(), 1e-300);

    auto residual = [&](const Vec& pp, double tt, Eigen::VectorXd& r) {
        r.resize(n + 1);
        const Vec gp = d.grad_phi(pp);
        r.head(n) = pp - x - tt * gp;
        r[n] = d.phi(pp);
    };
    Eigen::VectorXd r;
    residual(p, t, r);
    const double scale = 1.0 + x.norm() + d.bounding_box.diagonal();
    for (int it = 0; it < max_iterations; ++it) {
        if (r.norm() < 1e-13 * scale) return p;
        Eigen::MatrixXd J(n + 1, n + 1);
        const Vec gp = d.grad_phi(p);
        const Mat hp = d.hess_phi(p);
        J.topLeftCorner(n, n) = Eigen::MatrixXd::Identity(n, n) - t * hp;
        J.topRightCorner(n, 1) = -gp;
        J.bottomLeftCorner(1, n) = gp.transpose();
        J(n, n) = 0.0;
        const Eigen::VectorXd step = J.fullPivLu().solve(-r);
        double damping = 1.0;
        bool accepted = false;
        for (int k = 0; k < 40; ++k) {
            Vec pn = p + damping * step.head(n);
            const double tn = t + damping * step[n];
            Eigen::VectorXd rn;
            residual(pn, tn, rn);
            if (rn.norm() < r.norm() || rn.norm() < 1e-13 * scale) {
                p = pn;
                t = tn;
                r = rn;
                accepted = true;
                break;
            }
            damping *= 0.5;
        }
        if (!accepted) break;
    }
    if (r.norm() < 1e-9 * scale) return p;
    throw Error(ErrorCode::NonConvergence, "geometry",
                "boundary projection did not converge; the defining function may be ill-conditioned");
}

}  // namespace detail

/// Nearest point of the boundary to x (x may be inside or outside).
inline Vec nearest_boundary_point(const Domain& d, const Vec& x) {
    if (d.nearest_boundary_closed_form) return d.nearest_boundary_closed_form(x);
    return detail::newton_nearest_boundary(d, x);
}

/// Euclidean projection onto the closure of the domain.
inline Vec project(const Domain& d, const Vec& x) {
    if (d.phi(x) >= 0.0) return x;
    return nearest_boundary_point(d, x);
}

/// Distance to the closure of the domain (zero inside).
inline double distance_to_domain(const Domain& d, const Vec& x) {
    if (d.phi(x) >= 0.0) return 0.0;
    return (x - nearest_boundary_point(d, x)).norm();
}

/// Inward unit normal grad phi / |grad phi| at a boundary point.
inline Vec inward_normal(const Domain& d, const Vec& x) {
    const double tol = 1e-7 * (1.0 + d.diameter_hint());
    if (std::abs(d.phi(x)) > tol)
        throw Error(ErrorCode::NotOnBoundary, "geometry", "inward_normal requires |phi(x)| <= tol");
    const Vec g = d.grad_phi(x);
    return g / g.norm();
}

/// Tensor grid of nested_grid_size(density) points per axis over the bounding box.
inline std::vector<Vec> box_grid(const Box& box, int density) {
    const int dim = box.dim();
    const int m = nested_grid_size(std::max(2, density));
    std::vector<Vec> pts;
    std::vector<int> idx(dim, 0);
    while (true) {
        Vec p(dim);
        for (int k = 0; k < dim; ++k) p[k] = box.lo[k] + (box.hi[k] - box.lo[k]) * idx[k] / double(m - 1);
        pts.push_back(p);
        int k = 0;
        while (k < dim && ++idx[k] == m) idx[k++] = 0;
        if (k == dim) break;
    }
    return pts;
}

/// Sample of the closed domain: grid points inside plus boundary projections of
/// grid points outside. Nested in the density.
inline std::vector<Vec> domain_samples(const Domain& d, int density) {
    std::vector<Vec> out;
    for (const Vec& p : box_grid(d.bounding_box, density)) {
        if (d.phi(p) >= 0.0) out.push_back(p);
        else out.push_back(nearest_boundary_point(d, p));
    }
    return out;
}

struct GeometricConstants {
    double diameter = 0.0;
    /// Largest Hessian eigenvalue of phi over the sampled convex hull.
    double alpha_nonconvex = -std::numeric_limits<double>::infinity();
};

inline double max_eigenvalue(const Mat& m) {
    if (m.rows() == 1) return m(0, 0);
    Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    return eig.eigenvalues().maxCoeff();
}

inline double min_eigenvalue(const Mat& m) {
    if (m.rows() == 1) return m(0, 0);
    Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    return eig.eigenvalues().minCoeff();
}

/// Grid estimates of the diameter and of sup over co(G) of the largest Hessian
/// eigenvalue of phi. Both are lower estimates of the true suprema.
inline GeometricConstants geometric_constants(const Domain& d, int sample_density) {
    if (sample_density < 2)
        throw Error(ErrorCode::InvalidArgument, "geometry", "sample_density must be >= 2");
    const auto pts = domain_samples(d, sample_density);
    GeometricConstants gc;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (std::size_t j = i + 1; j < pts.size(); ++j) gc.diameter = std::max(gc.diameter, (pts[i] - pts[j]).norm());
        gc.alpha_nonconvex = std::max(gc.alpha_nonconvex, max_eigenvalue(d.hess_phi(pts[i])));
    }
    if (!d.convex) {
        // co(G) is the hull of the boundary; midpoints of boundary samples cover it coarsely.
        std::vector<Vec> bnd;
        for (const Vec& p : pts)
            if (std::abs(d.phi(p)) <= 1e-9 * (1.0 + d.diameter_hint())) bnd.push_back(p);
        for (std::size_t i = 0; i < bnd.size(); ++i)
            for (std::size_t j = i + 1; j < bnd.size(); ++j)
                gc.alpha_nonconvex = std::max(gc.alpha_nonconvex, max_eigenvalue(d.hess_phi(0.5 * (bnd[i] + bnd[j]))));
    }
    return gc;
}

}  // namespace ebsde
