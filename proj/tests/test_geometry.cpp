#include "carleman/geometry.hpp"

#include "doctest.h"

#include <cmath>
#include <stdexcept>

using namespace carleman;

namespace {

ProblemGeometry paper_geometry() { return make_geometry(0.5, 4.0, 12.0, 100); }

}  // namespace

TEST_CASE("paper constants") {
    const auto g = paper_geometry();
    const auto c = make_carleman(g, 2.5, 0.1, 3.0);
    CHECK(g.T0 == doctest::Approx(8.0));
    CHECK(g.A == doctest::Approx(4.0 / 3.0));
    CHECK(c.eta == doctest::Approx(1107.0 / 1280.0).epsilon(1e-15));
    CHECK(c.p[0] == doctest::Approx(-3.0));
    CHECK(std::abs(c.eta * 4.0 * g.A * g.A - (c.sigma * c.sigma - c.h)) < 1e-14);
    CHECK(validate_geometry(g, c).ok());
    CHECK(g.source_positions.size() == 100);
    CHECK(g.source_positions.front() == doctest::Approx(-0.5 + 1.0 / 101.0));
}

TEST_CASE("validation collects every failure") {
    auto g = paper_geometry();
    auto c = make_carleman(g, 2.5, 0.1, 3.0);
    g.T_minus = 1.0;
    c.sigma = 1.0;
    c.lambda = -1.0;
    const auto rep = validate_geometry(g, c);
    int failed = 0;
    for (const auto& chk : rep.checks) failed += chk.passed ? 0 : 1;
    CHECK(failed >= 3);
    CHECK_FALSE(rep.ok());
}

TEST_CASE("weight values") {
    const auto g = paper_geometry();
    auto c = make_carleman(g, 2.5, 0.1, 3.0);
    CHECK(psi_weight({0, 0, 0}, 8.0, g, c) == doctest::Approx(9.0));
    // |x - p| = 1 at t = T0 gives psi = 1
    CHECK(carleman_weight({-2.0, 0, 0}, 8.0, g, c) == doctest::Approx(std::exp(3.0)));
    c.lambda = 0.0;
    CHECK(carleman_weight({0.3, -0.1, 0.2}, 5.5, g, c) == 1.0);
    c.lambda = 1000.0;
    CHECK_THROWS_AS(carleman_weight({0, 0, 0}, 8.0, g, c), std::overflow_error);
}

TEST_CASE("level domains nest and psi peaks at T0") {
    const auto g = paper_geometry();
    const auto c = make_carleman(g, 2.5, 0.1, 3.0);
    CHECK(level_domain_membership({0, 0, 0}, 8.0, g, c, 4));
    int checked = 0;
    for (double x = -0.5; x <= 0.5; x += 0.05)
        for (double y = -0.5; y <= 0.5; y += 0.1)
            for (double t = 4.0; t <= 12.0; t += 0.1) {
                const Vec3 p{x, y, 0.1};
                for (int k = 4; k > 1; --k)
                    if (level_domain_membership(p, t, g, c, k)) CHECK(level_domain_membership(p, t, g, c, k - 1));
                CHECK(psi_weight(p, g.T0, g, c) >= psi_weight(p, t, g, c));
                ++checked;
            }
    CHECK(checked > 1000);
}

TEST_CASE("cutoff") {
    const auto g = paper_geometry();
    const auto c = make_carleman(g, 2.5, 0.1, 3.0);
    CHECK(cutoff_chi({0.2, 0.1, 0}, 4.3, g, c, ChiMode::identity) == 1.0);
    CHECK(cutoff_chi({0, 0, 0}, 8.0, g, c, ChiMode::paper) == 1.0);
    CHECK(cutoff_chi({0, 0, 0}, 4.0, g, c, ChiMode::paper) == 0.0);
    for (double x = -0.49; x <= 0.49; x += 0.07)
        for (double t = 4.0; t <= 12.0; t += 0.01) {
            const Vec3 p{x, 0.0, 0.0};
            const double chi = cutoff_chi(p, t, g, c, ChiMode::paper);
            CHECK(chi >= 0.0);
            CHECK(chi <= 1.0);
            if (!level_domain_membership(p, t, g, c, 1)) CHECK(chi == 0.0);
        }
}

TEST_CASE("cutoff blend is C2 at both ends") {
    const auto g = paper_geometry();
    const auto c = make_carleman(g, 2.5, 0.1, 3.0);
    // Walk psi through the blend band along t at the origin.
    auto chi_at_psi = [&](double psi) {
        const double t = g.T0 + std::sqrt((9.0 - psi) / c.eta);
        return cutoff_chi({0, 0, 0}, t, g, c, ChiMode::paper);
    };
    const double e = 1e-4;
    for (double edge : {2.0 * c.h, 3.0 * c.h}) {
        const double d1 = (chi_at_psi(edge + e) - chi_at_psi(edge - e)) / (2 * e);
        CHECK(std::abs(d1) < 1e-4);
    }
    CHECK(chi_at_psi(2.5 * c.h) == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("cone containment on the data cylinder") {
    const auto g = make_geometry(0.5, 4.0, 12.0, 16);
    for (std::size_t i = 0; i < g.source_count(); ++i) {
        const Vec3 x0 = g.source_point(i);
        for (double x = -0.5; x <= 0.5; x += 0.1)
            for (double y = -0.5; y <= 0.5; y += 0.1)
                for (double z = -0.5; z <= 0.5; z += 0.1) {
                    const Vec3 p{x, y, z};
                    if (norm(p) > 0.5) continue;
                    CHECK(g.T_minus - dist(p, x0) > 0.0);
                }
    }
}
