#pragma once

#include "ebsde/core.hpp"

#include <string>

namespace ebsde {

/// psi(x, z) with z the row vector grad(v)^T sigma, stored as a column Vec.
using DriverFn = std::function<double(const Vec& x, const Vec& z)>;
/// Gradient of psi in z.
using DriverGradFn = std::function<Vec(const Vec& x, const Vec& z)>;

struct DriverSpec {
    DriverFn psi;
    /// Optional exact z-gradient; finite differences are used when absent.
    DriverGradFn dpsi_dz;
    ScalarFn g;
    double K_psi_x = 0.0;
    double K_psi_z = 0.0;
    /// Bound on |psi(., 0)|; also a bound on |psi| when psi_bounded is set.
    double M_psi = 0.0;
    bool psi_bounded = false;
    /// g declared twice differentiable with Lipschitz second derivatives.
    bool g_c2_lip = true;
    std::string description;

    Vec grad_z(const Vec& x, const Vec& z) const {
        if (dpsi_dz) return dpsi_dz(x, z);
        Vec out(z.size());
        Vec zp = z, zm = z;
        for (int k = 0; k < z.size(); ++k) {
            const double e = 1e-6 * (1.0 + std::abs(z[k]));
            zp[k] = z[k] + e;
            zm[k] = z[k] - e;
            out[k] = (psi(x, zp) - psi(x, zm)) / (2.0 * e);
            zp[k] = zm[k] = z[k];
        }
        return out;
    }
};

inline ScalarFn zero_scalar() {
    return [](const Vec&) { return 0.0; };
}

inline DriverSpec zero_driver() {
    DriverSpec d;
    d.psi = [](const Vec&, const Vec&) { return 0.0; };
    d.dpsi_dz = [](const Vec&, const Vec& z) -> Vec { return Vec::Zero(z.size()); };
    d.g = zero_scalar();
    d.psi_bounded = true;
    d.description = "psi = 0, g = 0";
    return d;
}

inline DriverSpec constant_driver(double kappa) {
    DriverSpec d = zero_driver();
    d.psi = [kappa](const Vec&, const Vec&) { return kappa; };
    d.M_psi = std::abs(kappa);
    d.description = "psi constant";
    return d;
}

/// psi(x, z) = a cos(x_0) + b sin(z_0): bounded by |a| + |b|, K_psi_x = |a| sup|sin x_0|, K_psi_z = |b|.
inline DriverSpec cos_sin_driver(double a, double b, double x_abs_max = 1.0) {
    DriverSpec d;
    d.psi = [a, b](const Vec& x, const Vec& z) { return a * std::cos(x[0]) + b * std::sin(z[0]); };
    d.dpsi_dz = [b](const Vec&, const Vec& z) -> Vec {
        Vec out = Vec::Zero(z.size());
        out[0] = b * std::cos(z[0]);
        return out;
    };
    d.g = zero_scalar();
    d.K_psi_x = std::abs(a) * (x_abs_max >= M_PI / 2 ? 1.0 : std::sin(x_abs_max));
    d.K_psi_z = std::abs(b);
    d.M_psi = std::abs(a) + std::abs(b);
    d.psi_bounded = true;
    d.description = "psi = a cos(x0) + b sin(z0)";
    return d;
}

}  // namespace ebsde
