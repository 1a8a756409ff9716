#include "ebsde/verification.hpp"

#include <catch_amalgamated.hpp>

#include <sstream>

using namespace ebsde;
using Catch::Approx;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }

SdeModel ou(int dim) { return make_kolmogorov(dim, quadratic_potential(dim)); }

SdeModel degenerate() {
    return make_model(1, [](const Vec& x) -> Vec { return -x; },
                      [](const Vec& x) -> Mat { return Mat::Constant(1, 1, x[0]); });
}

SdeModel frozen() {
    return make_model(1, [](const Vec&) -> Vec { return zeros(1); },
                      [](const Vec&) -> Mat { return Mat::Zero(1, 1); }, true);
}

ErgodicSolution exact_cubic(const SdeModel& m, double mu, double hx) {
    const Domain iv = make_ball(1.0, 1);
    auto grid = make_grid(iv, GridSpec{hx});
    GridFunction f = sample_on_grid(
        grid, [mu](const Vec& x) { return -mu * std::abs(x[0] * x[0] * x[0]) / 3.0; },
        [mu](const Vec& x) -> Vec { return Vec::Constant(1, -mu * x[0] * std::abs(x[0])); });
    return detail::package(m, std::move(f), 0.0, mu, static_cast<std::size_t>(grid->nearest_node(iv.centroid)));
}

}  // namespace

TEST_CASE("constant solution has zero residuals") {
    const Domain iv = make_ball(1.0, 1);
    const ErgodicSolution s = solve_ergodic(ou(1), iv, zero_driver(), 0.0);
    const PdeResidualReport r = pde_residual(s, ou(1), iv, zero_driver());
    CHECK(r.interior_max < 1e-12);
    CHECK(r.boundary_max < 1e-12);
    CHECK(r.interior_nodes > 100);
    CHECK(r.boundary_nodes == 2);
}

TEST_CASE("exact cubic solves the degenerate example") {
    // width-2h differences: central misses v' by (2/3) h^2 |v3|, one-sided by (4/3) h^2 |v3|, with |v3| = 2 mu
    const Domain iv = make_ball(1.0, 1);
    std::vector<double> res;
    for (double hx : {2e-3, 1e-3}) {
        const ErgodicSolution s = exact_cubic(degenerate(), 1.0, hx);
        PdeResidualOptions o;
        o.exclusion_center = v1(0.0);
        o.exclusion_radius = 3 * hx;
        const PdeResidualReport r = pde_residual(s, degenerate(), iv, zero_driver(), o);
        CHECK(r.interior_max <= 4.0 / 3.0 * hx * hx * 1.01);
        CHECK(r.boundary_max <= 8.0 / 3.0 * hx * hx * 1.01);
        res.push_back(r.interior_max);
    }
    CHECK(res[1] == Approx(res[0] / 4).epsilon(0.05));
}

TEST_CASE("solver output residuals shrink at second order") {
    const Domain iv = make_ball(1.0, 1);
    const DriverSpec d = cos_sin_driver(1.0, 0.3);
    std::vector<double> res;
    for (double hx : {0.02, 0.01}) {
        ErgodicOptions o;
        o.solve.grid.hx = hx;
        const ErgodicSolution s = solve_ergodic(ou(1), iv, d, 0.5, ErgodicScheme::direct, o);
        const PdeResidualReport r = pde_residual(s, ou(1), iv, d);
        res.push_back(std::max(r.interior_max, r.boundary_max));
    }
    CHECK(res[1] <= 0.35 * res[0]);
    CHECK(res[1] < 1e-3);
}

TEST_CASE("2-d residuals are finite and small for the disc") {
    const Domain disc = make_ball(1.0, 2);
    ErgodicOptions o;
    o.solve.grid.hx = 0.04;
    const ErgodicSolution s = solve_ergodic(ou(2), disc, constant_driver(0.3), 0.0, ErgodicScheme::direct, o);
    const PdeResidualReport r = pde_residual(s, ou(2), disc, constant_driver(0.3));
    CHECK(r.interior_max < 1e-9);
    CHECK(r.boundary_max < 1e-9);
}

TEST_CASE("frozen dynamics give a zero pathwise residual") {
    const Domain iv = make_ball(1.0, 1);
    BsdeResidualOptions o;
    o.paths = 50;
    o.x0 = v1(0.3);
    const BsdeResidualReport r = bsde_residual([](const Vec&) { return 2.0; }, [](const Vec&) -> Vec { return zeros(1); },
                                               0.0, 0.0, frozen(), iv, zero_driver(), o);
    for (double x : r.per_path) CHECK(x == 0.0);
    CHECK(r.residual.mean == 0.0);
}

TEST_CASE("pathwise residual of the exact cubic is centred") {
    const Domain iv = make_ball(1.0, 1);
    const ErgodicSolution s = exact_cubic(degenerate(), 1.0, 1e-3);
    BsdeResidualOptions o;
    o.paths = 2000;
    o.T = 2.0;
    o.h = 1e-2;
    o.x0 = v1(0.9);
    const BsdeResidualReport r = bsde_residual(s, degenerate(), iv, zero_driver(), o);
    CHECK(std::abs(r.residual.mean) <= 3 * r.residual.std_error + 1e-3);
    CHECK(r.partial.size() == 10);
    CHECK(r.checkpoint_times.back() == Approx(2.0));
    std::ostringstream os;
    write_residuals_csv(os, r);
    CHECK(os.str().rfind("path,residual\n", 0) == 0);
}

TEST_CASE("martingale partial sums of the ergodic solution have no drift") {
    const Domain iv = make_ball(1.0, 1);
    const DriverSpec d = cos_sin_driver(1.0, 0.3);
    const ErgodicSolution s = solve_ergodic(ou(1), iv, d, 0.5);
    BsdeResidualOptions o;
    o.paths = 1000;
    o.T = 2.0;
    o.h = 1e-3;
    const BsdeResidualReport r = bsde_residual(s, ou(1), iv, d, o);
    CHECK(std::abs(r.residual.mean) <= 3 * r.residual.std_error + 5e-3);
    CHECK(r.max_partial_z < 4.0);
}

TEST_CASE("drift shift leaves the ergodic constant unchanged") {
    const Domain iv = make_ball(1.0, 1);
    const DriverSpec d = cos_sin_driver(1.0, 0.2);
    const DriftShiftReport z = drift_shift_equivalence(ou(1), iv, d, 0.0, 0.3);
    CHECK(z.lambda_gap == 0.0);
    CHECK(z.v_gap == 0.0);
    const DriftShiftReport r = drift_shift_equivalence(ou(1), iv, d, 0.5, 0.3);
    CHECK(r.lambda_gap < 2e-3);
    CHECK(r.eta_gap < 1e-9);
    CHECK(r.eta_shifted == Approx(-1.5).margin(1e-9));
    CHECK(r.K_psi_z_shifted == Approx(0.2 + 0.5 / std::sqrt(2.0)).margin(1e-9));
    try {
        drift_shift_equivalence(degenerate(), iv, zero_driver(), 0.5);
        FAIL("expected SingularSigma");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SingularSigma);
    }
}
