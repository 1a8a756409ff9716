#include "ebsde/config.hpp"

#include <catch_amalgamated.hpp>

using namespace ebsde;
using Catch::Approx;

namespace {

json base() {
    return json::parse(R"({
        "domain": {"kind": "ball", "radius": 1, "dim": 1},
        "model": {"kind": "multiplicative", "drift_scale": -1, "sigma_scale": 1},
        "driver": {"kind": "zero"},
        "run": {"mu": 1.0, "grid": 0.01, "seed": 7}
    })");
}

ErrorCode code_of(const json& j) {
    try {
        parse_config(j);
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("degenerate example parses") {
    const ExperimentConfig c = parse_config(base());
    CHECK(c.domain.dim == 1);
    CHECK(c.run.mu == 1.0);
    CHECK(c.run.seed == 7);
    const Vec x = Vec::Constant(1, 0.5);
    CHECK(c.model.drift(x)[0] == Approx(-0.5));
    CHECK(c.model.sigma(x)(0, 0) == Approx(0.5));
    CHECK(c.driver.g(x) == 0.0);
    CHECK(!c.control);
}

TEST_CASE("schema violations raise ConfigError") {
    json j = base();
    j["domain"]["kind"] = "torus";
    CHECK(code_of(j) == ErrorCode::ConfigError);
    j = base();
    j.erase("model");
    CHECK(code_of(j) == ErrorCode::ConfigError);
    j = base();
    j["extra"] = 1;
    CHECK(code_of(j) == ErrorCode::ConfigError);
    j = base();
    j["run"]["tol"] = "small";
    CHECK(code_of(j) == ErrorCode::ConfigError);
    j = base();
    j["run"]["grid"] = -1;
    CHECK(code_of(j) == ErrorCode::ConfigError);
    j = base();
    j["driver"] = {{"kind", "hamiltonian"}};
    CHECK(code_of(j) == ErrorCode::ConfigError);
    j = base();
    j["run"]["x0"] = {0.1, 0.2};
    CHECK(code_of(j) == ErrorCode::ConfigError);
    j = base();
    j["domain"]["radius"] = 0;
    CHECK(code_of(j) == ErrorCode::ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), Error);
}

TEST_CASE("control section and policies") {
    json j = base();
    j["model"] = {{"kind", "kolmogorov"}, {"potential", "quadratic"}};
    j["domain"]["quartic_weight"] = 0.5;
    j["control"] = json::parse(R"({
        "controls": [
            {"label": "quadratic", "R": [0.3], "L": {"kind": "quadratic", "coeff": 1}},
            {"label": "linear", "R": [-0.3], "L": {"kind": "affine", "constant": 0.3, "linear": [-0.3]}}
        ],
        "M_L": 1, "K_L_x": 2, "g": {"linear": [0.5]}
    })");
    j["driver"] = {{"kind", "hamiltonian"}};
    j["policies"] = json::parse(R"([{"kind": "constant", "control": 1}, {"kind": "threshold_x", "threshold": 0},
                                   {"kind": "optimal"}])");
    const ExperimentConfig c = parse_config(j);
    REQUIRE(c.control);
    CHECK(c.control->size() == 2);
    CHECK(c.control->M_R == Approx(0.3));
    const Vec x = Vec::Constant(1, 0.4);
    CHECK(c.control->L(x, 0) == Approx(0.16));
    CHECK(c.control->L(x, 1) == Approx(0.18));
    CHECK(c.driver.g(x) == Approx(0.2));
    CHECK(c.driver.K_psi_z == Approx(0.3));
    const Policy p0 = parse_policy(c.policies[0], *c.control, nullptr);
    CHECK(p0(x) == 1u);
    const Policy p1 = parse_policy(c.policies[1], *c.control, nullptr);
    CHECK(p1(x) == 1u);
    CHECK(p1(Vec::Constant(1, -0.4)) == 0u);
    CHECK_THROWS_AS(parse_policy(c.policies[2], *c.control, nullptr), Error);
    CHECK_THROWS_AS(parse_policy(json{{"kind", "random"}}, *c.control, nullptr), Error);
}

TEST_CASE("linear model and constant-kappa driver") {
    json j = base();
    j["domain"] = json::parse(R"({"kind": "quadratic", "A": [[1, 0], [0, 2]]})");
    j["model"] = json::parse(R"({"kind": "linear", "drift_matrix": [[-1, 0], [0, -2]], "sigma": [[1, 0], [0, 1]]})");
    j["driver"] = json::parse(R"({"kind": "constant", "kappa": 0.4, "g": 0.25})");
    const ExperimentConfig c = parse_config(j);
    CHECK(c.domain.dim == 2);
    CHECK(c.model.sigma_constant);
    Vec x(2);
    x << 0.1, 0.2;
    CHECK(c.model.drift(x)[1] == Approx(-0.4));
    CHECK(c.driver.psi(x, x) == Approx(0.4));
    CHECK(c.driver.g(x) == Approx(0.25));
}
