#include "ebsde/discounted.hpp"
#include "ebsde/hypotheses.hpp"

#include <catch_amalgamated.hpp>

#include <random>

using namespace ebsde;
using Catch::Approx;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }

SdeModel ou(int dim) { return make_kolmogorov(dim, quadratic_potential(dim)); }

SdeModel brownian(int dim) {
    return make_model(dim, [dim](const Vec&) -> Vec { return zeros(dim); },
                      [dim](const Vec&) -> Mat { return identity(dim); }, true);
}

DriverSpec cos_x() { return cos_sin_driver(1.0, 0.0); }

// E int_0^T e^{-alpha t} cos X_t dt for dX = -X dt + sqrt 2 dW mirrored at +-1.
double mc_cos_oracle(double x0, double alpha, double T, double h, int paths, unsigned seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> nd;
    const int n = static_cast<int>(std::lround(T / h));
    double total = 0.0;
    for (int p = 0; p < paths; ++p) {
        double x = x0, acc = 0.0;
        for (int i = 0; i < n; ++i) {
            const double t = i * h;
            // trapezoid in time on each step
            const double f0 = std::exp(-alpha * t) * std::cos(x);
            x += -x * h + std::sqrt(2.0 * h) * nd(gen);
            while (std::abs(x) > 1.0) x = x > 0 ? 2.0 - x : -2.0 - x;
            acc += 0.5 * (f0 + std::exp(-alpha * (t + h)) * std::cos(x)) * h;
        }
        total += acc;
    }
    return total / paths;
}

}  // namespace

TEST_CASE("zero and constant drivers") {
    const Domain iv = make_ball(1.0, 1);
    const DiscountedSolution z = solve_discounted(ou(1), iv, zero_driver(), 0.7, 0.0);
    CHECK(z.v.max_abs() < 1e-12);
    for (double kappa : {1.0, -2.5}) {
        const DiscountedSolution c = solve_discounted(ou(1), iv, constant_driver(kappa), 0.5, 0.0);
        for (double v : c.v.values) CHECK(v == Approx(kappa / 0.5).epsilon(1e-10));
    }
    const Domain disc = make_ball(1.0, 2);
    GridSolveOptions o;
    o.grid.hx = 0.05;
    const DiscountedSolution c2 = solve_discounted(ou(2), disc, constant_driver(1.0), 1.0, 0.0, o);
    for (double v : c2.v.values) CHECK(v == Approx(1.0).epsilon(1e-10));
    REQUIRE_THROWS_AS(solve_discounted(ou(1), iv, zero_driver(), 0.0, 0.0), Error);
}

TEST_CASE("bounded driver bounds alpha v") {
    const Domain iv = make_ball(1.0, 1);
    const DriverSpec d = cos_sin_driver(1.0, 0.3);
    for (double alpha : {0.05, 0.5, 2.0}) {
        const DiscountedSolution s = solve_discounted(ou(1), iv, d, alpha, 0.0);
        CHECK(alpha * s.v.max_abs() <= d.M_psi + 1e-8);
    }
}

TEST_CASE("constant shift of psi adds kappa / alpha") {
    const Domain iv = make_ball(1.0, 1);
    DriverSpec d = cos_sin_driver(1.0, 0.3);
    DriverSpec e = d;
    e.psi = [d](const Vec& x, const Vec& z) { return d.psi(x, z) + 0.4; };
    const double alpha = 0.8;
    const DiscountedSolution a = solve_discounted(ou(1), iv, d, alpha, 0.2);
    const DiscountedSolution b = solve_discounted(ou(1), iv, e, alpha, 0.2);
    for (std::size_t i = 0; i < a.v.values.size(); ++i)
        CHECK(b.v.values[i] - a.v.values[i] == Approx(0.4 / alpha).epsilon(1e-9));
}

TEST_CASE("Neumann data against the closed form for Brownian motion on an interval") {
    // v''/2 = alpha v, -x v'(x) = mu at x = +-1: v = -mu cosh(kx) / (k sinh k), k = sqrt(2 alpha)
    const Domain iv = make_ball(1.0, 1);
    const double alpha = 0.5, mu = 1.0, k = std::sqrt(2.0 * alpha);
    GridSolveOptions o;
    o.grid.hx = 1e-3;
    const DiscountedSolution s = solve_discounted(brownian(1), iv, zero_driver(), alpha, mu, o);
    double err = 0.0;
    for (std::size_t i = 0; i < s.v.values.size(); ++i) {
        const double x = s.v.grid->nodes[i][0];
        err = std::max(err, std::abs(s.v.values[i] + mu * std::cosh(k * x) / (k * std::sinh(k))));
    }
    CHECK(err < 1e-5);
    CHECK(s.v.gradient_at(v1(1.0))[0] == Approx(-mu).epsilon(1e-9));
}

TEST_CASE("Neumann data against the closed form on the disc") {
    // radial solution -mu I0(k r) / (k I1(k))
    const Domain disc = make_ball(1.0, 2);
    const double alpha = 0.5, mu = 1.0, k = std::sqrt(2.0 * alpha);
    GridSolveOptions o;
    o.grid.hx = 0.02;
    const DiscountedSolution s = solve_discounted(brownian(2), disc, zero_driver(), alpha, mu, o);
    const double scale = mu * std::cyl_bessel_i(0.0, k) / (k * std::cyl_bessel_i(1.0, k));
    double err = 0.0;
    for (std::size_t i = 0; i < s.v.values.size(); ++i) {
        const double r = s.v.grid->nodes[i].norm();
        err = std::max(err, std::abs(s.v.values[i] + mu * std::cyl_bessel_i(0.0, k * r) / (k * std::cyl_bessel_i(1.0, k))));
    }
    CHECK(err < 0.03 * scale);
}

TEST_CASE("cos x driver against Monte Carlo") {
    const Domain iv = make_ball(1.0, 1);
    const DiscountedSolution s = solve_discounted(ou(1), iv, cos_x(), 1.0, 0.0);
    for (double x0 : {-0.9, -0.4, 0.0, 0.5, 1.0}) {
        const double mc = mc_cos_oracle(x0, 1.0, 9.0, 2e-3, 800, 11u + static_cast<unsigned>(10 * (x0 + 1)));
        CHECK(s.v.value_at(v1(x0)) == Approx(mc).margin(0.015));
    }
}

TEST_CASE("Lipschitz diagnostic obeys the K_psi_x / |eta| bound") {
    const Domain iv = make_ball(1.0, 1);
    const DiscountedSolution s = solve_discounted(ou(1), iv, cos_x(), 0.3, 0.0);
    const double eta = estimate_eta(ou(1), iv);
    CHECK(lipschitz_diagnostic(s.v) <= cos_x().K_psi_x / std::abs(eta) * 1.05);
    CHECK(lipschitz_diagnostic(s.v) > 0.0);
}

TEST_CASE("grid refinement is stable") {
    const Domain iv = make_ball(1.0, 1);
    const DriverSpec d = cos_sin_driver(1.0, 0.3);
    GridSolveOptions coarse, fine;
    coarse.grid.hx = 1e-2;
    fine.grid.hx = 5e-3;
    const DiscountedSolution a = solve_discounted(ou(1), iv, d, 0.5, 0.3, coarse);
    const DiscountedSolution b = solve_discounted(ou(1), iv, d, 0.5, 0.3, fine);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.v.values.size(); ++i)
        diff = std::max(diff, std::abs(a.v.values[i] - b.v.value_at(a.v.grid->nodes[i])));
    CHECK(diff <= 0.02 * b.v.max_abs());
}

TEST_CASE("Newton and Picard agree") {
    const Domain iv = make_ball(1.0, 1);
    const DriverSpec d = cos_sin_driver(1.0, 0.5);
    GridSolveOptions n, p;
    p.method = NonlinearMethod::picard;
    const DiscountedSolution a = solve_discounted(ou(1), iv, d, 0.5, 0.1, n);
    const DiscountedSolution b = solve_discounted(ou(1), iv, d, 0.5, 0.1, p);
    for (std::size_t i = 0; i < a.v.values.size(); ++i) CHECK(a.v.values[i] == Approx(b.v.values[i]).margin(1e-7));
}

TEST_CASE("2-d solution respects the symmetry of the data") {
    const Domain disc = make_ball(1.0, 2);
    DriverSpec d = zero_driver();
    d.psi = [](const Vec& x, const Vec&) { return std::cos(x[0]) + std::cos(x[1]); };
    d.M_psi = 2.0;
    GridSolveOptions o;
    o.grid.hx = 0.04;
    const DiscountedSolution s = solve_discounted(ou(2), disc, d, 0.5, 0.2, o);
    const Grid& g = *s.v.grid;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto [ti, tj] = g.tensor[i];
        const int swapped = g.node_at(tj, ti);
        const int mirrored = g.node_at(g.extent[0] - 1 - ti, tj);
        REQUIRE(swapped >= 0);
        REQUIRE(mirrored >= 0);
        CHECK(s.v.values[i] == Approx(s.v.values[swapped]).margin(1e-9));
        CHECK(s.v.values[i] == Approx(s.v.values[mirrored]).margin(1e-9));
    }
    CHECK(0.5 * s.v.max_abs() <= 2.0 + 0.2 * 10.0);
}

TEST_CASE("degenerate diffusion absorbed at the origin needs no added viscosity") {
    const Domain iv = make_ball(1.0, 1);
    const SdeModel m = make_model(1, [](const Vec& x) -> Vec { return -x; },
                                  [](const Vec& x) -> Mat { return Mat::Constant(1, 1, x[0]); });
    const DiscountedSolution s = solve_discounted(m, iv, cos_x(), 1.0, 0.0);
    REQUIRE(s.info.viscosities.size() == 1);
    CHECK(s.info.viscosities[0] == 0.0);
    // the origin is a fixed point: v(0) = cos(0) / alpha
    CHECK(s.v.value_at(v1(0.0)) == Approx(1.0).margin(1e-12));
    CHECK(s.v.max_abs() <= 1.0 + 1e-9);
}
