#include "ebsde/hypotheses.hpp"

#include <catch_amalgamated.hpp>

using namespace ebsde;
using Catch::Approx;

namespace {

SdeModel ou(int dim) { return make_kolmogorov(dim, quadratic_potential(dim)); }

SdeModel brownian(int dim, double s = 1.0) {
    return make_model(dim, [dim](const Vec&) -> Vec { return zeros(dim); },
                      [s, dim](const Vec&) -> Mat { return s * identity(dim); }, true);
}

SdeModel degenerate() {
    return make_model(1, [](const Vec& x) -> Vec { return -x; },
                      [](const Vec& x) -> Mat { return Mat::Constant(1, 1, x[0]); });
}

}  // namespace

TEST_CASE("eta on reference models") {
    const Domain iv = make_ball(1.0, 1);
    CHECK(estimate_eta(ou(1), iv) == Approx(-1.0).margin(1e-9));
    CHECK(estimate_eta(brownian(1), iv) == Approx(0.0).margin(1e-12));
    const SdeModel mult = make_model(1, [](const Vec& x) -> Vec { return -x; },
                                     [](const Vec& x) -> Mat { return Mat::Constant(1, 1, x[0]); });
    CHECK(estimate_eta(mult, iv) == Approx(-0.5).margin(1e-9));
    CHECK(estimate_eta(ou(2), make_ball(1.0, 2)) == Approx(-1.0).margin(1e-9));
    REQUIRE_THROWS_AS(estimate_eta(ou(1), iv, 4), Error);
}

TEST_CASE("eta estimate does not decrease with sampling density") {
    const Domain iv = make_ball(1.0, 1);
    const SdeModel m = make_model(1, [](const Vec& x) -> Vec { return Vec::Constant(1, std::sin(3.0 * x[0])); },
                                  [](const Vec&) -> Mat { return identity(1); }, true);
    double last = -1e300;
    for (int d : {9, 17, 33, 65}) {
        const double e = estimate_eta(m, iv, d);
        CHECK(e >= last - 1e-12);
        last = e;
    }
    CHECK(last <= 3.0 + 1e-12);
}

TEST_CASE("model Lipschitz constants") {
    const Domain iv = make_ball(1.0, 1);
    const ModelLipschitz l = estimate_model_lipschitz(degenerate(), iv);
    const SdeModel cubic = make_model(1, [](const Vec& x) -> Vec { return -x.array().cube().matrix(); },
                                      [](const Vec&) -> Mat { return identity(1); }, true);
    // largest chord slope of x^3 on the 33-point grid of [-1, 1]
    CHECK(estimate_model_lipschitz(cubic, iv).K_b == Approx(16.0 * (1.0 - std::pow(15.0 / 16.0, 3))).epsilon(1e-9));
    CHECK(l.K_b == Approx(1.0).epsilon(1e-9));
    CHECK(l.K_sigma == Approx(1.0).epsilon(1e-9));
}

TEST_CASE("theta for a convex ball and its drift shift") {
    const Domain iv = make_ball(1.0, 1);
    const DriverSpec psi = cos_sin_driver(1.0, 0.2);
    const ThetaEstimate t = estimate_theta(ou(1), psi, iv);
    CHECK(t.alpha == 0.0);
    CHECK(t.diameter == Approx(2.0));
    CHECK(t.theta == Approx(2.0 * estimate_eta(ou(1), iv)).margin(1e-9));
    for (double xi : {0.25, 0.5, 1.0}) {
        const ThetaEstimate s = estimate_theta(ou(1), psi, iv, 33, xi);
        CHECK(s.theta == Approx(t.theta - 2.0 * xi).margin(1e-9));
    }
    REQUIRE_THROWS_AS(estimate_theta(degenerate(), psi, iv), Error);
}

TEST_CASE("Kolmogorov constants") {
    const Domain iv = make_ball(1.0, 1);
    const KolmogorovConstants k = estimate_kolmogorov_constants(ou(1), iv);
    CHECK(k.delta == Approx(1.0));
    CHECK(k.c == Approx(1.0));
    const SdeModel quartic = make_kolmogorov(1, quartic_potential(1));
    CHECK(min_hessian_eigenvalue_scan(quartic, iv) == Approx(0.0).margin(1e-12));
    try {
        estimate_kolmogorov_constants(quartic, iv);
        FAIL("expected NonConvexPotential");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NonConvexPotential);
    }
    try {
        estimate_kolmogorov_constants(brownian(1), iv);
        FAIL("expected NotKolmogorov");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NotKolmogorov);
    }
}

TEST_CASE("E_nu[L phi] by quadrature") {
    // phi = (1 - x^2)/2, L phi = x^2 - 1 under b = -x, sigma = sqrt 2
    const Domain iv = make_ball(1.0, 1);
    const double N = std::sqrt(2.0 * M_PI) * std::erf(1.0 / std::sqrt(2.0));
    const Estimate e = expected_Lphi(ou(1), iv, -1.0);
    CHECK(e.mean == Approx(-2.0 * std::exp(-0.5) / N).epsilon(1e-8));
    const Domain blend = make_ball(1.0, 1, 0.5);
    CHECK(expected_Lphi(ou(1), blend, -1.0).mean == Approx(-0.70887).margin(2e-5));
}

TEST_CASE("degenerate model fails the averaged boundary condition") {
    const Domain iv = make_ball(1.0, 1);
    HypothesisOptions o;
    o.average.T = 20.0;
    o.average.paths = 4;
    const HypothesisReport r = check_all(degenerate(), zero_driver(), iv, o);
    CHECK(r.E_nu_Lphi.mean == Approx(0.0).margin(1e-12));
    CHECK_FALSE(r.flag("F2.2"));
    CHECK_FALSE(r.flag("F2"));
    CHECK_FALSE(r.sigma_nonsingular);
    CHECK_FALSE(r.sigma_constant);
    CHECK(r.flag("G1"));
    CHECK(r.flag("G2"));
    CHECK_FALSE(r.flag("H4"));
    CHECK_FALSE(r.flag("H3'"));
}

TEST_CASE("Kolmogorov model with zero driver satisfies the Gibbs-side conditions") {
    const Domain iv = make_ball(1.0, 1);
    const HypothesisReport r = check_all(ou(1), zero_driver(), iv);
    CHECK(r.flag("F2"));
    CHECK(r.flag("F2''"));
    CHECK(r.flag("F2'"));
    CHECK(r.flag("H3"));
    CHECK(r.flag("H3'"));
    CHECK(r.flag("H4"));
    CHECK(r.flag("H2"));
    CHECK(*r.delta == Approx(1.0));
    CHECK(r.sup_Lphi == Approx(0.0).margin(1e-12));
    CHECK(r.inf_Lphi == Approx(-1.0));
}

TEST_CASE("blended boundary function gives strict slope bounds") {
    const Domain blend = make_ball(1.0, 1, 0.5);
    const HypothesisReport r = check_all(ou(1), cos_sin_driver(1.0, 0.2), blend);
    CHECK(r.flag("F2'"));
    CHECK(r.flag("F2''"));
    CHECK(r.sup_Lphi == Approx(-0.5).margin(1e-9));
    CHECK(r.inf_Lphi == Approx(-1.0).margin(1e-9));
    CHECK(r.grad_phi_sigma_sup == Approx(std::sqrt(2.0)).margin(1e-9));
    CHECK(r.c_slope == Approx(0.5 - 0.2 * std::sqrt(2.0)).margin(1e-9));
    CHECK(r.C_slope == Approx(1.0 + 0.2 * std::sqrt(2.0)).margin(1e-9));
}

TEST_CASE("declared driver constants are checked") {
    const Domain iv = make_ball(1.0, 1);
    DriverSpec d = cos_sin_driver(1.0, 0.5);
    CHECK(check_driver(d, iv).lipschitz_ok);
    CHECK(check_driver(d, iv).bound_ok);
    d.K_psi_z = 0.1;
    CHECK_FALSE(check_driver(d, iv).lipschitz_ok);
    d = cos_sin_driver(1.0, 0.5);
    d.M_psi = 1.0;
    CHECK_FALSE(check_driver(d, iv).bound_ok);
}

TEST_CASE("drift shift is suggested when dissipativity fails") {
    const Domain iv = make_ball(1.0, 1);
    HypothesisOptions o;
    o.average.T = 10.0;
    o.average.paths = 2;
    const HypothesisReport r = check_all(brownian(1), cos_sin_driver(0.0, 0.5), iv, o);
    CHECK_FALSE(r.flag("H3"));
    REQUIRE(r.suggested_xi.has_value());
    CHECK(*r.suggested_xi > 0.0);
    // Shifted eta = eta - xi must be negative.
    CHECK(r.eta - *r.suggested_xi < 0.0);
    const nlohmann::json j = to_json(r);
    CHECK(j.contains("flags"));
    CHECK(j["flags"]["H3"] == false);
}
