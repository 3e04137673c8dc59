#include "carleman/forward.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <cmath>
#include <numbers>

using namespace carleman;

namespace {

const double kPi = std::numbers::pi;

SpaceTimeGrid coarse_grid(const ProblemGeometry& g, double t_end) {
    auto grid = make_forward_grid(g, 1.0 / 20.0, 1.0 / 80.0);
    grid.t_end = t_end;
    return grid;
}

}  // namespace

TEST_CASE("free-space Green's function") {
    CHECK(analytic_free_space({1, 0, 0}, {0, 0, 0}, 2.0) == doctest::Approx(1.0 / (4.0 * kPi)));
    CHECK(analytic_free_space({0, 1, 0}, {0, 0, 0}, 0.5) == 0.0);
    CHECK(analytic_free_space({0, 0, 2}, {0, 0, 0}, 3.0) == doctest::Approx(1.0 / (8.0 * kPi)));
    CHECK_THROWS(analytic_free_space({0, 0, 0}, {0, 0, 0}, 1.0));
    const Vec3 x{0.3, -0.2, 0.1}, x0{0.1, 0.0, -1.0};
    const double r = dist(x, x0);
    const Vec3 nu{0.3 / norm(x), -0.2 / norm(x), 0.1 / norm(x)};
    double dot = 0.0;
    for (int a = 0; a < 3; ++a) dot += x[a] * (x[a] - x0[a]);
    CHECK(analytic_free_space_normal(x, x0, nu) == doctest::Approx(-dot / (4.0 * kPi * norm(x) * r * r * r)));
}

TEST_CASE("coefficient models") {
    const auto g = make_geometry(0.5, 4.0, 12.0, 16);
    const auto ball = preset_target("ball");
    const Vec3 c4 = target_center(ball, 4.0);
    CHECK(c4[0] == doctest::Approx(0.2));
    CHECK(std::abs(c4[1]) < 1e-15);
    CHECK(c4[2] == doctest::Approx(-0.2));
    CHECK(eval_coefficient(ball, g, c4, 4.0 + 1e-9) == 2.0);
    CHECK(eval_coefficient(ball, g, {-0.3, 0.0, 0.2}, 6.0) == 1.0);
    CHECK(eval_coefficient(ball, g, c4, 3.9) == 0.0);
    CHECK(eval_coefficient(ball, g, {0.49, 0.2, 0.0}, 6.0) == 0.0);
    const auto cyl = preset_target("cylinder");
    const Vec3 c8 = target_center(cyl, 8.0);
    CHECK(norm(c8) < 1e-15);
    for (double t = 4.0; t <= 12.0; t += 0.5)
        for (double x = -0.5; x <= 0.5; x += 0.1) CHECK(eval_coefficient(cyl, g, {x, 0.1, -0.1}, t) >= 0.0);
}

TEST_CASE("zero coefficient leaves only the incident field") {
    auto g = make_geometry(0.5, 4.0, 12.0, 1);
    TargetModel none;
    none.kind = TargetKind::none;
    const auto grid = coarse_grid(g, 2.0);
    double causal = 0.0;
    const Vec3 x0 = g.source_point(0);
    auto obs = [&](int, const FieldView& f) {
        for (int i = 0; i < f.n(); i += 3)
            for (int j = 0; j < f.n(); j += 3)
                for (int k = 0; k < f.n(); k += 3) {
                    const Vec3 p{grid.coord(i), grid.coord(j), grid.coord(k)};
                    if (f.t() < dist(p, x0) - 3 * grid.dx) causal = std::max(causal, std::abs(f.total(i, j, k)));
                }
    };
    const auto st = solve_forward(g, none, g.source_positions[0], grid, obs);
    CHECK(st.max_scattered == 0.0);
    CHECK(st.min_scattered == 0.0);
    CHECK(causal < 1e-8);
}

TEST_CASE("traces of the homogeneous problem match the analytic oracle") {
    auto g = make_geometry(0.5, 4.0, 12.0, 2);
    TargetModel none;
    none.kind = TargetKind::none;
    none.background = 0.0;
    const auto grid = coarse_grid(g, 4.5);
    const auto nodes = fibonacci_sphere(32, 0.5);
    const std::vector<double> times{4.0, 4.25, 4.5};
    const auto tr = extract_traces(g, none, g.source_positions[1], grid, nodes, times, Interp::tricubic);
    const Vec3 x0 = g.source_point(1);
    double e0 = 0.0, e1 = 0.0;
    for (std::size_t b = 0; b < nodes.points.size(); ++b)
        for (std::size_t t = 0; t < times.size(); ++t) {
            const double exact0 = oracle::green(dist(nodes.points[b], x0), times[t]);
            const double exact1 = analytic_free_space_normal(nodes.points[b], x0, nodes.normals[b]);
            e0 = std::max(e0, oracle::rel(tr.g0[b * times.size() + t], exact0));
            e1 = std::max(e1, std::abs(tr.g1[b * times.size() + t] - exact1) / std::abs(exact0));
        }
    CHECK(e0 < 1e-3);
    CHECK(e1 < 2e-2);
}

TEST_CASE("positive inclusion raises the field inside the cone") {
    auto g = make_geometry(0.5, 4.0, 12.0, 1);
    auto m = preset_target("static");
    m.static_center = {0.0, 0.0, 0.0};
    auto grid = coarse_grid(g, 6.0);
    const Vec3 x0 = g.source_point(0);
    double worst = 0.0;
    auto obs = [&](int, const FieldView& f) {
        for (int i = 0; i < f.n(); i += 2)
            for (int j = 0; j < f.n(); j += 2)
                for (int k = 0; k < f.n(); k += 2) {
                    const Vec3 p{grid.coord(i), grid.coord(j), grid.coord(k)};
                    if (norm(p) < 0.7 && f.t() > dist(p, x0) + 3 * grid.dx) worst = std::min(worst, f.scattered(i, j, k));
                }
    };
    solve_forward(g, m, g.source_positions[0], grid, obs);
    CHECK(worst >= -1e-12);
}

TEST_CASE("mirror sources give mirrored traces for a symmetric coefficient") {
    auto g = make_geometry(0.5, 4.0, 12.0, 2);
    CHECK(g.source_positions[0] == doctest::Approx(-g.source_positions[1]));
    auto m = preset_target("static");
    m.static_center = {0.0, 0.0, 0.0};
    const auto grid = coarse_grid(g, 5.0);
    BoundaryNodes nodes;
    for (const Vec3& nu : {Vec3{0.6, 0.0, 0.8}, Vec3{0.0, 0.6, -0.8}, Vec3{0.8, 0.6, 0.0}}) {
        for (double sx : {1.0, -1.0}) {
            const Vec3 v{sx * nu[0], nu[1], nu[2]};
            nodes.normals.push_back(v);
            nodes.points.push_back({0.5 * v[0], 0.5 * v[1], 0.5 * v[2]});
        }
    }
    const std::vector<double> times{4.5, 5.0};
    const auto tr = generate_traces(g, m, grid, nodes, times, Interp::tricubic);
    double worst = 0.0;
    for (std::size_t b = 0; b < nodes.points.size(); b += 2)
        for (std::size_t t = 0; t < times.size(); ++t)
            worst = std::max(worst, oracle::rel(tr.g0[tr.index(0, b, t)], tr.g0[tr.index(1, b + 1, t)]));
    CHECK(worst < 1e-8);
}

TEST_CASE("noise model") {
    CauchyTraces tr;
    tr.points = {{0.5, 0, 0}, {0, 0.5, 0}};
    tr.normals = tr.points;
    tr.times = {4.0, 5.0, 6.0};
    tr.sources = {-0.2, 0.2};
    for (int i = 0; i < 12; ++i) {
        tr.g0.push_back(0.1 + 0.01 * i);
        tr.g1.push_back(-0.2 + 0.03 * i);
    }
    const auto same = add_noise(tr, 0.0, 1);
    CHECK(same.g0 == tr.g0);
    CHECK(same.g1 == tr.g1);
    const auto a = add_noise(tr, 0.03, 42), b = add_noise(tr, 0.03, 42), c = add_noise(tr, 0.03, 43);
    CHECK(a.g0 == b.g0);
    CHECK(a.g1 == b.g1);
    CHECK(a.g0 != c.g0);
    for (std::size_t i = 0; i < tr.g0.size(); ++i) {
        CHECK(std::abs(a.g0[i] - tr.g0[i]) <= 0.03 * std::abs(tr.g0[i]) + 1e-15);
        CHECK(std::abs(a.g1[i] - tr.g1[i]) <= 0.03 * std::abs(tr.g1[i]) + 1e-15);
    }
    CHECK_THROWS(add_noise(tr, 5.0, 1));
    CHECK_THROWS(add_noise(tr, -0.1, 1));
}

TEST_CASE("positivity check and container round trip") {
    CauchyTraces tr;
    tr.points = {{0.5, 0, 0}};
    tr.normals = tr.points;
    tr.times = {4.0};
    tr.sources = {0.0};
    tr.g0 = {0.3};
    tr.g1 = {0.1};
    const auto back = traces_from_container(to_container(tr));
    CHECK(back.g0 == tr.g0);
    CHECK(back.g1 == tr.g1);
    CHECK(back.times == tr.times);
    tr.g0[0] = 0.0;
    CHECK_THROWS(check_positive(tr));
}

TEST_CASE("CFL and padding are enforced") {
    const auto g = make_geometry(0.5, 4.0, 12.0, 1);
    auto grid = make_forward_grid(g, 0.05, 0.04);
    CHECK_THROWS(validate_forward_grid(grid, g));
    grid = make_forward_grid(g, 0.05, 0.01, 2);
    CHECK_THROWS(validate_forward_grid(grid, g));
}
