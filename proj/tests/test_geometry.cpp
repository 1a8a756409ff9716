#include "ebsde/geometry.hpp"

#include <catch_amalgamated.hpp>

using namespace ebsde;
using Catch::Approx;

namespace {

Vec v2(double a, double b) {
    Vec x(2);
    x << a, b;
    return x;
}

Vec v1(double a) {
    Vec x(1);
    x << a;
    return x;
}

Domain ellipse() {
    Mat A(2, 2);
    A << 1.0 / 4.0, 0.0, 0.0, 1.0;
    return make_quadratic(A);
}

// Brute-force nearest point over a dense parametrization of the ellipse boundary.
Vec ellipse_oracle(const Vec& x) {
    Vec best = v2(2, 0);
    double dbest = 1e300;
    const int n = 400000;
    for (int i = 0; i < n; ++i) {
        const double t = 2.0 * M_PI * i / n;
        const Vec p = v2(2.0 * std::cos(t), std::sin(t));
        const double d = (p - x).norm();
        if (d < dbest) {
            dbest = d;
            best = p;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("ball projection and normals") {
    const Domain ball = make_ball(1.0, 2);
    CHECK((project(ball, v2(0.5, 0)) - v2(0.5, 0)).norm() == 0.0);
    CHECK((project(ball, v2(2, 0)) - v2(1, 0)).norm() < 1e-14);
    CHECK((inward_normal(ball, v2(1, 0)) - v2(-1, 0)).norm() < 1e-14);
    CHECK((inward_normal(ball, v2(0, -1)) - v2(0, 1)).norm() < 1e-14);
    const Vec p = v2(0.6, 0.8);
    CHECK((inward_normal(ball, p) + p).norm() < 1e-14);
    REQUIRE_THROWS_AS(inward_normal(ball, v2(0.5, 0)), Error);
    try {
        inward_normal(ball, v2(0.5, 0));
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NotOnBoundary);
    }
}

TEST_CASE("interval normal") {
    const Domain iv = make_ball(1.0, 1);
    CHECK(inward_normal(iv, v1(1.0))[0] == Approx(-1.0));
    CHECK(inward_normal(iv, v1(-1.0))[0] == Approx(1.0));
    CHECK(project(iv, v1(1.1))[0] == Approx(1.0));
}

TEST_CASE("quartic blended ball keeps unit normal on boundary") {
    const Domain b = make_ball(1.0, 2, 0.5);
    for (double t = 0.0; t < 6.28; t += 0.3) {
        const Vec p = v2(std::cos(t), std::sin(t));
        CHECK(std::abs(b.phi(p)) < 1e-14);
        CHECK(b.grad_phi(p).norm() == Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("ellipse projection matches boundary enumeration") {
    const Domain e = ellipse();
    for (const Vec& x : {v2(3, 1), v2(-2.5, -0.5), v2(0.3, 1.7), v2(2.1, 0.05), v2(-1, -2)}) {
        const Vec p = project(e, x);
        const Vec q = ellipse_oracle(x);
        CHECK(std::abs(e.phi(p)) < 1e-9);
        CHECK((p - x).norm() == Approx((q - x).norm()).margin(1e-6));
        CHECK((p - q).norm() < 1e-3);
        // displacement parallel to the normal at the projected point
        const Vec n = e.grad_phi(p).normalized();
        const Vec disp = (p - x).normalized();
        CHECK(std::abs(std::abs(n.dot(disp)) - 1.0) < 1e-8);
    }
}

TEST_CASE("ellipse defining function has unit gradient on the boundary") {
    const Domain e = ellipse();
    for (double t = 0.0; t < 6.28; t += 0.2) {
        const Vec p = v2(2.0 * std::cos(t), std::sin(t));
        CHECK(std::abs(e.phi(p)) < 1e-12);
        CHECK(e.grad_phi(p).norm() == Approx(1.0).epsilon(1e-10));
        // interior / exterior signs
        CHECK(e.phi(0.9 * p) > 0.0);
        CHECK(e.phi(1.1 * p) < 0.0);
    }
}

TEST_CASE("ellipse derivatives agree with finite differences") {
    const Domain e = ellipse();
    const Vec x = v2(0.7, -0.4);
    const double h = 1e-5;
    for (int k = 0; k < 2; ++k) {
        Vec dx = zeros(2);
        dx[k] = h;
        CHECK((e.phi(x + dx) - e.phi(x - dx)) / (2 * h) == Approx(e.grad_phi(x)[k]).margin(1e-8));
        const Vec col = (e.grad_phi(x + dx) - e.grad_phi(x - dx)) / (2 * h);
        CHECK((col - e.hess_phi(x).col(k)).norm() < 1e-7);
    }
}

TEST_CASE("geometric constants") {
    const auto gb = geometric_constants(make_ball(1.0, 2), 9);
    CHECK(gb.diameter == Approx(2.0));
    CHECK(gb.alpha_nonconvex == Approx(-1.0));
    const auto gi = geometric_constants(make_ball(1.0, 1), 9);
    CHECK(gi.diameter == Approx(2.0));
    REQUIRE_THROWS_AS(geometric_constants(make_ball(1.0, 1), 1), Error);

    const Domain e = ellipse();
    double prev_d = 0.0, prev_a = -1e300;
    for (int density : {3, 5, 9, 17, 33}) {
        const auto g = geometric_constants(e, density);
        CHECK(g.diameter >= prev_d);
        CHECK(g.alpha_nonconvex >= prev_a);
        prev_d = g.diameter;
        prev_a = g.alpha_nonconvex;
    }
    CHECK(prev_d == Approx(4.0).margin(1e-9));
}

TEST_CASE("projected samples lie in the closed domain") {
    const Domain e = ellipse();
    for (const Vec& p : domain_samples(e, 17)) CHECK(e.phi(p) >= -1e-9);
}
