#include "carleman/problem.hpp"

#include "carleman/parallel.hpp"

#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace carleman {

namespace {

std::tuple<int, int, int> reduced_direction(int i, int j, int k) {
    const int d = std::gcd(std::gcd(std::abs(i), std::abs(j)), std::abs(k));
    return {i / d, j / d, k / d};
}

bool same_points(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (dist(a[i], b[i]) > 1e-12) return false;
    return true;
}

}  // namespace

std::vector<double> grid_times(const InversionGrid& g) {
    std::vector<double> t(g.L);
    for (int l = 0; l < g.L; ++l) t[l] = g.time(l);
    return t;
}

BoundaryNodes boundary_directions(const InversionGrid& g) {
    std::map<std::tuple<int, int, int>, int> seen;
    BoundaryNodes out;
    out.kind = "grid_projection";
    for (int s : g.pinned) {
        const int k = s % g.n - g.half, j = (s / g.n) % g.n - g.half, i = s / (g.n * g.n) - g.half;
        if (i == 0 && j == 0 && k == 0) continue;
        const auto key = reduced_direction(i, j, k);
        if (seen.count(key)) continue;
        seen[key] = static_cast<int>(out.points.size());
        const double r = std::sqrt(double(i) * i + double(j) * j + double(k) * k);
        const Vec3 nu{i / r, j / r, k / r};
        out.normals.push_back(nu);
        out.points.push_back({g.R * nu[0], g.R * nu[1], g.R * nu[2]});
    }
    return out;
}

CoefficientVectorField sample_log_field(const ProblemGeometry& geom, const TargetModel& model,
                                        const SpaceTimeGrid& fgrid, const InversionGrid& g, const BasisSet& basis,
                                        Interp order) {
    const std::size_t S = g.spatial(), L = g.L, ns = geom.source_count();
    std::vector<int> steps(L);
    for (std::size_t l = 0; l < L; ++l) {
        const double m = g.time(l) / fgrid.dt;
        if (std::abs(m - std::round(m)) > 1e-6) throw std::invalid_argument("inversion times are not forward time levels");
        steps[l] = static_cast<int>(std::lround(m));
    }
    std::vector<double> logu(ns * L * S);
    parallel_for(ns, [&](std::size_t src) {
        std::size_t next = 0;
        auto observer = [&](int step, const FieldView& f) {
            while (next < L && steps[next] == step) {
                for (std::size_t s = 0; s < S; ++s) {
                    const double u = f.interpolate_total(g.coord(static_cast<int>(s)), order);
                    if (!(u > 0.0)) {
                        std::ostringstream os;
                        os << "log field: u <= 0 at node " << s << ", t = " << g.time(static_cast<int>(next));
                        throw std::runtime_error(os.str());
                    }
                    logu[(src * L + next) * S + s] = std::log(u);
                }
                ++next;
            }
        };
        solve_forward(geom, model, geom.source_point(src)[0], fgrid, observer, steps);
        if (next != L) throw std::runtime_error("log field: not every time level was observed");
    });
    const Projector P(geom.source_positions, basis);
    CoefficientVectorField V = zero_field(g, basis.N);
    for (std::size_t l = 0; l < L; ++l)
        for (std::size_t s = 0; s < S; ++s) P.apply(&logu[l * S + s], L * S, &V.values[(l * S + s) * basis.N]);
    return V;
}

void apply_boundary_data(const InversionGrid& g, CoefficientVectorField& V, const TransformedTraces& data,
                         const TransformedTraces& background, int sphere_degree) {
    const int N = V.N;
    if (data.N != N || background.N != N) throw std::invalid_argument("boundary data: basis size mismatch");
    if (data.q1.empty() || background.q1.empty()) throw std::invalid_argument("boundary data: Neumann data missing");
    const std::size_t L = g.L;
    for (const auto* d : {&data, &background}) {
        if (d->T() != L) throw std::invalid_argument("boundary data: time levels differ from the inversion grid");
        for (std::size_t l = 0; l < L; ++l)
            if (std::abs(d->times[l] - g.time(static_cast<int>(l))) > 1e-9)
                throw std::invalid_argument("boundary data: time levels differ from the inversion grid");
    }
    const BoundaryNodes dirs = boundary_directions(g);
    const std::size_t B = dirs.points.size();
    // dq laid out as (field, direction) with field = (kind, k, l).
    const std::size_t fields = 2 * N * L;
    auto delta_on = [&](const TransformedTraces& d, std::vector<double>& out) {
        const std::size_t nb = d.B();
        std::vector<double> vals(fields * nb);
        for (int c = 0; c < N; ++c)
            for (std::size_t b = 0; b < nb; ++b)
                for (std::size_t l = 0; l < L; ++l) {
                    vals[((0 * N + c) * L + l) * nb + b] = d.q0[d.qindex(c, b, l)];
                    vals[((1 * N + c) * L + l) * nb + b] = d.q1[d.qindex(c, b, l)];
                }
        if (same_points(d.points, dirs.points)) {
            out = std::move(vals);
        } else {
            const int deg = sphere_degree > 0 ? sphere_degree : default_sphere_degree(nb);
            out = resample_on_sphere(d.points, vals, fields, dirs.points, deg);
        }
    };
    std::vector<double> qd, qb;
    delta_on(data, qd);
    delta_on(background, qb);
    std::map<std::tuple<int, int, int>, int> index;
    int next = 0;
    for (int s : g.pinned) {
        const int k = s % g.n - g.half, j = (s / g.n) % g.n - g.half, i = s / (g.n * g.n) - g.half;
        if (i == 0 && j == 0 && k == 0) continue;
        const auto key = reduced_direction(i, j, k);
        if (!index.count(key)) index[key] = next++;
    }
    const std::size_t S = g.spatial();
    for (int s : g.pinned) {
        const int k = s % g.n - g.half, j = (s / g.n) % g.n - g.half, i = s / (g.n * g.n) - g.half;
        if (i == 0 && j == 0 && k == 0) continue;
        const int b = index.at(reduced_direction(i, j, k));
        const double offset = norm(g.coord(s)) - g.R;
        for (std::size_t l = 0; l < L; ++l)
            for (int c = 0; c < N; ++c) {
                const double d0 = qd[((0 * N + c) * L + l) * B + b] - qb[((0 * N + c) * L + l) * B + b];
                const double d1 = qd[((1 * N + c) * L + l) * B + b] - qb[((1 * N + c) * L + l) * B + b];
                V.values[(l * S + s) * N + c] += d0 + offset * d1;
            }
    }
}

}  // namespace carleman
