#include "ebsde/ergodic.hpp"

#include <catch_amalgamated.hpp>

#include <sstream>

using namespace ebsde;
using Catch::Approx;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }

SdeModel ou(int dim) { return make_kolmogorov(dim, quadratic_potential(dim)); }

SdeModel brownian(int dim) {
    return make_model(dim, [dim](const Vec&) -> Vec { return zeros(dim); },
                      [dim](const Vec&) -> Mat { return identity(dim); }, true);
}

SdeModel degenerate() {
    return make_model(1, [](const Vec& x) -> Vec { return -x; },
                      [](const Vec& x) -> Mat { return Mat::Constant(1, 1, x[0]); });
}

// Composite Simpson of f(x) exp(-x^2/2) over [-1, 1] divided by the mass.
double gibbs_mean(const std::function<double(double)>& f) {
    const int n = 20000;
    const double h = 2.0 / n;
    double num = 0.0, den = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double x = -1.0 + i * h;
        const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        const double m = std::exp(-0.5 * x * x);
        num += w * f(x) * m;
        den += w * m;
    }
    return num / den;
}

}  // namespace

TEST_CASE("constant driver gives lambda = kappa and flat v") {
    const Domain iv = make_ball(1.0, 1);
    for (auto scheme : {ErgodicScheme::direct, ErgodicScheme::vanishing_discount}) {
        const ErgodicSolution s = solve_ergodic(ou(1), iv, constant_driver(0.7), 0.0, scheme);
        CHECK(s.lambda == Approx(0.7).margin(1e-6));
        CHECK(s.v.max_abs() < 1e-5);
    }
}

TEST_CASE("Brownian motion on an interval: v = lambda x^2, lambda = -mu / 2") {
    const Domain iv = make_ball(1.0, 1);
    for (double mu : {-1.0, 0.5, 2.0}) {
        const ErgodicSolution s = solve_ergodic(brownian(1), iv, zero_driver(), mu);
        CHECK(s.lambda == Approx(-mu / 2).margin(1e-8));
        CHECK(s.value_at(v1(0.0)) == Approx(0.0).margin(1e-12));
        CHECK(s.value_at(v1(0.6)) == Approx(-mu / 2 * 0.36).margin(1e-6));
        CHECK(s.zeta_at(v1(1.0))[0] == Approx(-mu).margin(1e-8));
    }
}

TEST_CASE("lambda is the Gibbs average of psi minus mu times the local-time rate") {
    const Domain iv = make_ball(1.0, 1);
    const double Epsi = gibbs_mean([](double x) { return std::cos(x); });
    const double rate = gibbs_mean([](double x) { return 1.0 - x * x; });
    for (double mu : {-1.0, 0.0, 1.5}) {
        const ErgodicSolution s = solve_ergodic(ou(1), iv, cos_sin_driver(1.0, 0.0), mu);
        CHECK(s.lambda == Approx(Epsi - mu * rate).margin(1e-4));
    }
}

TEST_CASE("both schemes agree") {
    const Domain iv = make_ball(1.0, 1);
    ErgodicOptions o;
    o.tol = 1e-6;
    const SchemeComparison c = cross_check_schemes(ou(1), iv, cos_sin_driver(1.0, 0.3), 0.4, o);
    CHECK(c.lambda_gap <= 5 * o.tol);
    CHECK(c.v_gap < 1e-3);
    CHECK(c.vanishing_discount.diagnostics.alphas.front() == Approx(0.25));
    CHECK(c.vanishing_discount.diagnostics.alphas.size() >= 2);
}

TEST_CASE("vanishing discount reports non-convergence") {
    const Domain iv = make_ball(1.0, 1);
    ErgodicOptions o;
    o.max_halvings = 2;
    try {
        solve_ergodic(ou(1), iv, cos_sin_driver(1.0, 0.3), 0.4, ErgodicScheme::vanishing_discount, o);
        FAIL("expected NoConvergence");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NoConvergence);
    }
}

TEST_CASE("lambda(mu) is non-increasing with slope inside the bounds") {
    const Domain blend = make_ball(1.0, 1, 0.5);
    const DriverSpec d = cos_sin_driver(1.0, 0.2);
    std::vector<double> mus;
    for (int i = 0; i <= 10; ++i) mus.push_back(-2.0 + 0.4 * i);
    const LambdaOfMuCurve c = lambda_of_mu(ou(1), blend, d, mus);
    CHECK(c.non_increasing());
    const double cs = 0.5 - 0.2 * std::sqrt(2.0), Cs = 1.0 + 0.2 * std::sqrt(2.0);
    for (double s : c.slopes()) {
        CHECK(s >= cs - 1e-6);
        CHECK(s <= Cs + 1e-6);
    }
    CHECK(c.continuity_modulus() <= Cs + 1e-6);
    std::ostringstream os;
    write_curve_csv(os, c);
    CHECK(os.str().rfind("mu,lambda,tol\n", 0) == 0);
}

TEST_CASE("boundary cost inversion") {
    const Domain iv = make_ball(1.0, 1);
    const BoundaryCostResult r = solve_boundary_cost(brownian(1), iv, zero_driver(), 0.3);
    CHECK(r.mu == Approx(-0.6).margin(1e-5));
    CHECK(r.solution.lambda == Approx(0.3).margin(1e-6));
    for (std::size_t i = 1; i < r.brackets.size(); ++i) {
        CHECK(r.brackets[i].first >= r.brackets[i - 1].first);
        CHECK(r.brackets[i].second <= r.brackets[i - 1].second);
    }

    const Domain blend = make_ball(1.0, 1, 0.5);
    BoundaryCostOptions o;
    o.E_nu_Lphi = -0.70887;
    const BoundaryCostResult k = solve_boundary_cost(ou(1), blend, cos_sin_driver(1.0, 0.2), -0.5, o);
    CHECK(k.solution.lambda == Approx(-0.5).margin(1e-6));
}

TEST_CASE("degenerate model: cubic solution, flat curve and bracket failure") {
    // b = -x, sigma = x: v = A - mu |x|^3 / 3 and lambda = 0 for every mu
    const Domain iv = make_ball(1.0, 1);
    for (double mu : {-1.0, 1.0, 3.0}) {
        const ErgodicSolution s = solve_ergodic(degenerate(), iv, zero_driver(), mu);
        CHECK(std::abs(s.lambda) < 1e-6);
        double err = 0.0;
        for (std::size_t i = 0; i < s.v.values.size(); ++i) {
            const double x = s.v.grid->nodes[i][0];
            err = std::max(err, std::abs(s.v.values[i] + mu * std::abs(x * x * x) / 3.0));
        }
        CHECK(err < 1e-3 * std::abs(mu));
    }
    try {
        solve_boundary_cost(degenerate(), iv, zero_driver(), 0.0);
        FAIL("expected FlatCurve");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::FlatCurve);
    }
    BoundaryCostOptions o;
    o.max_expansions = 6;
    try {
        solve_boundary_cost(degenerate(), iv, zero_driver(), 1.0, o);
        FAIL("expected BracketFailure");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::BracketFailure);
    }
}

TEST_CASE("singular chain falls back to vanishing viscosity") {
    // no noise and no drift: the viscous limit averages psi over the interval
    const Domain iv = make_ball(1.0, 1);
    const SdeModel still = make_model(1, [](const Vec&) -> Vec { return zeros(1); },
                                      [](const Vec&) -> Mat { return Mat::Zero(1, 1); }, true);
    const ErgodicSolution s = solve_ergodic(still, iv, cos_sin_driver(1.0, 0.0), 0.0);
    CHECK(s.diagnostics.viscosities.size() == 2);
    CHECK(s.lambda == Approx(std::sin(1.0)).margin(1e-3));
}
TEST_CASE("lambda matches a long-run Monte Carlo average") {
    const Domain iv = make_ball(1.0, 1);
    const DriverSpec d = cos_sin_driver(1.0, 0.3);
    const ErgodicSolution s = solve_ergodic(ou(1), iv, d, 0.5);
    LambdaMonteCarloOptions o;
    o.T = 50.0;
    o.h = 2e-3;
    o.paths = 64;
    const Estimate e = lambda_monte_carlo(s, ou(1), iv, d, o);
    CHECK(std::abs(e.mean - s.lambda) < 4.0 * e.std_error + 0.01);
}

TEST_CASE("2-d ergodic solve on the disc") {
    // v = c r^2: Delta v / 2 = 2c = lambda and -r v_r = -2c = mu on the circle, so lambda = -mu
    const Domain disc = make_ball(1.0, 2);
    ErgodicOptions o;
    o.solve.grid.hx = 0.025;
    const ErgodicSolution s = solve_ergodic(brownian(2), disc, zero_driver(), 1.0, ErgodicScheme::direct, o);
    CHECK(s.lambda == Approx(-1.0).margin(0.05));
}
