#include "carleman/forward.hpp"
#include "carleman/parallel.hpp"

#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace carleman {

TargetKind parse_target_kind(const std::string& s) {
    if (s == "none" || s == "background") return TargetKind::none;
    if (s == "ball") return TargetKind::ball;
    if (s == "cylinder") return TargetKind::cylinder;
    if (s == "rotated" || s == "rotated_cylinder") return TargetKind::rotated_cylinder;
    if (s == "static" || s == "static_ball") return TargetKind::static_ball;
    if (s == "custom" || s == "custom-grid") return TargetKind::custom;
    throw std::invalid_argument("unknown target kind: " + s);
}

std::string to_string(TargetKind k) {
    switch (k) {
        case TargetKind::none: return "none";
        case TargetKind::ball: return "ball";
        case TargetKind::cylinder: return "cylinder";
        case TargetKind::rotated_cylinder: return "rotated_cylinder";
        case TargetKind::static_ball: return "static_ball";
        case TargetKind::custom: return "custom";
    }
    return "none";
}

TargetModel preset_target(const std::string& scenario) {
    TargetModel m;
    m.kind = parse_target_kind(scenario);
    switch (m.kind) {
        case TargetKind::ball:
        case TargetKind::static_ball: m.radius = 0.1; break;
        case TargetKind::cylinder: m.radius = 0.1; m.height = 0.2; break;
        case TargetKind::rotated_cylinder: m.radius = 0.1; m.height = 0.1; break;
        default: break;
    }
    if (m.kind == TargetKind::static_ball) m.static_center = {0.1, 0.0, 0.0};
    return m;
}

Vec3 target_center(const TargetModel& m, double t) {
    constexpr double pi = std::numbers::pi;
    const double th = (t - 4.0) * pi / 16.0;
    switch (m.kind) {
        case TargetKind::ball: return {0.2 * std::cos(th), 0.2 * std::sin(th), 0.05 * t - 0.4};
        case TargetKind::cylinder: {
            const double c = 0.05 * t - 0.4;
            return {c, c, c};
        }
        case TargetKind::rotated_cylinder:
            return {0.4 * std::sin(th) - 0.2, 0.05 * t - 0.4, -0.4 * std::cos(th) + 0.2};
        case TargetKind::static_ball: return m.static_center;
        default: return {0.0, 0.0, 0.0};
    }
}

bool inside_target(const TargetModel& m, const Vec3& x, double t) {
    if (m.kind == TargetKind::none || m.kind == TargetKind::custom) return false;
    const Vec3 c = target_center(m, t);
    Vec3 d{x[0] - c[0], x[1] - c[1], x[2] - c[2]};
    switch (m.kind) {
        case TargetKind::ball:
        case TargetKind::static_ball: return norm(d) <= m.radius;
        case TargetKind::cylinder:
            return d[0] * d[0] + d[1] * d[1] <= m.radius * m.radius && std::abs(d[2]) <= 0.5 * m.height;
        case TargetKind::rotated_cylinder: {
            // Undo the rotation about the y-axis.
            const double phi = t * std::numbers::pi / 48.0 + std::numbers::pi / 12.0;
            const double cs = std::cos(phi), sn = std::sin(phi);
            const double xr = cs * d[0] - sn * d[2];
            const double zr = sn * d[0] + cs * d[2];
            return xr * xr + d[1] * d[1] <= m.radius * m.radius && std::abs(zr) <= 0.5 * m.height;
        }
        default: return false;
    }
}

double eval_coefficient(const TargetModel& m, const ProblemGeometry& g, const Vec3& x, double t) {
    if (!(t > g.T_minus && t < g.T) || !(norm(x) < g.R)) return 0.0;
    if (m.kind == TargetKind::custom) return m.custom ? std::max(0.0, m.custom(x, t)) : 0.0;
    return inside_target(m, x, t) ? m.a0 : m.background;
}

double analytic_free_space(const Vec3& x, const Vec3& x0, double t) {
    const double r = dist(x, x0);
    if (r == 0.0) throw std::domain_error("analytic_free_space: x coincides with the source");
    return t > r ? 1.0 / (4.0 * std::numbers::pi * r) : 0.0;
}

double analytic_free_space_normal(const Vec3& x, const Vec3& x0, const Vec3& nu) {
    const Vec3 d{x[0] - x0[0], x[1] - x0[1], x[2] - x0[2]};
    const double r = norm(d);
    if (r == 0.0) throw std::domain_error("analytic_free_space_normal: x coincides with the source");
    return -(nu[0] * d[0] + nu[1] * d[1] + nu[2] * d[2]) / (4.0 * std::numbers::pi * r * r * r);
}

int SpaceTimeGrid::nodes_per_axis() const {
    return static_cast<int>(std::lround(2.0 * half_width / dx)) + 1;
}

SpaceTimeGrid make_forward_grid(const ProblemGeometry& g, double dx, double dt, int padding,
                                int sponge_cells) {
    SpaceTimeGrid grid;
    grid.dx = dx;
    grid.dt = dt;
    grid.t_end = g.T;
    grid.sponge_cells = sponge_cells;
    const int cells = static_cast<int>(std::ceil(g.R / dx - 1e-9)) + padding + sponge_cells;
    grid.half_width = cells * dx;
    return grid;
}

void validate_forward_grid(const SpaceTimeGrid& grid, const ProblemGeometry& g) {
    if (!(grid.dx > 0 && grid.dt > 0)) throw std::invalid_argument("forward grid: steps must be positive");
    if (grid.dt > 0.9 * grid.dx / std::sqrt(3.0)) {
        std::ostringstream os;
        os << "forward grid: CFL violated (dt=" << grid.dt << ", limit " << 0.9 * grid.dx / std::sqrt(3.0) << ")";
        throw std::invalid_argument(os.str());
    }
    const double free_cells = (grid.half_width - g.R) / grid.dx - grid.sponge_cells;
    if (free_cells < 8.0 - 1e-9)
        throw std::invalid_argument("forward grid: fewer than 8 free cells between the ball and the sponge");
    if (std::abs(grid.coord(grid.nodes_per_axis() - 1) - grid.half_width) > 1e-9 * grid.dx)
        throw std::invalid_argument("forward grid: half-width must be a multiple of dx");
}

BoundaryNodes fibonacci_sphere(std::size_t n, double R) {
    BoundaryNodes b;
    b.kind = "fibonacci";
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (std::size_t i = 0; i < n; ++i) {
        const double z = 1.0 - (2.0 * i + 1.0) / static_cast<double>(n);
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double th = golden * static_cast<double>(i);
        const Vec3 nu{r * std::cos(th), r * std::sin(th), z};
        b.normals.push_back(nu);
        b.points.push_back({R * nu[0], R * nu[1], R * nu[2]});
    }
    return b;
}

Interp parse_interp(const std::string& s) {
    if (s == "trilinear" || s == "linear") return Interp::trilinear;
    if (s == "tricubic" || s == "cubic") return Interp::tricubic;
    throw std::invalid_argument("unknown interpolation: " + s);
}

std::string to_string(Interp i) { return i == Interp::trilinear ? "trilinear" : "tricubic"; }

FieldView::FieldView(const SpaceTimeGrid& grid, const Vec3& x0, const std::vector<double>& usc, double t)
    : grid_(grid), x0_(x0), usc_(usc), t_(t), n_(grid.nodes_per_axis()) {}

double FieldView::incident(int i, int j, int k) const {
    return analytic_free_space({grid_.coord(i), grid_.coord(j), grid_.coord(k)}, x0_, t_);
}

double FieldView::interpolate_total(const Vec3& x, Interp order) const {
    int base[3];
    double w[3][4];
    const int width = order == Interp::trilinear ? 2 : 4;
    for (int a = 0; a < 3; ++a) {
        const double u = x[a] / grid_.dx + static_cast<double>(std::lround(grid_.half_width / grid_.dx));
        int i0 = static_cast<int>(std::floor(u));
        const double f = u - i0;
        if (order == Interp::trilinear) {
            base[a] = i0;
            w[a][0] = 1.0 - f;
            w[a][1] = f;
        } else {
            base[a] = i0 - 1;
            w[a][0] = -f * (f - 1.0) * (f - 2.0) / 6.0;
            w[a][1] = (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0;
            w[a][2] = -(f + 1.0) * f * (f - 2.0) / 2.0;
            w[a][3] = (f + 1.0) * f * (f - 1.0) / 6.0;
        }
        if (base[a] < 0 || base[a] + width - 1 > n_ - 1) {
            std::ostringstream os;
            os << "interpolation point (" << x[0] << "," << x[1] << "," << x[2] << ") outside the box";
            throw std::out_of_range(os.str());
        }
    }
    double acc = 0.0;
    for (int a = 0; a < width; ++a)
        for (int b = 0; b < width; ++b)
            for (int c = 0; c < width; ++c)
                acc += w[0][a] * w[1][b] * w[2][c] * total(base[0] + a, base[1] + b, base[2] + c);
    return acc;
}

ForwardStats solve_forward(const ProblemGeometry& g, const TargetModel& model, double s,
                           const SpaceTimeGrid& grid, const ForwardObserver& observer,
                           const std::vector<int>& observe_steps) {
    validate_forward_grid(grid, g);
    const int n = grid.nodes_per_axis();
    const std::size_t nn = static_cast<std::size_t>(n) * n * n;
    const Vec3 x0{s, 0.0, -2.0 * g.R};
    const double dt = grid.dt, dx = grid.dx;
    const int nsteps = static_cast<int>(std::lround(grid.t_end / dt));

    // Cosine-ramped sponge, combined over axes by maximum.
    std::vector<double> prof(n, 0.0);
    const int W = grid.sponge_cells;
    for (int i = 0; i < n; ++i) {
        const int e = std::min(i, n - 1 - i);
        if (W > 0 && e < W) {
            const double depth = static_cast<double>(W - e) / W;
            prof[i] = grid.sponge_strength * 0.5 * (1.0 - std::cos(std::numbers::pi * depth));
        }
    }

    // Nodes where a can be nonzero, with their incident field (the front has passed
    // them long before a switches on, but H(t - r) is kept explicit).
    struct BallNode {
        std::size_t idx;
        Vec3 x;
        double r, uinc;
    };
    std::vector<BallNode> ball;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k) {
                const Vec3 x{grid.coord(i), grid.coord(j), grid.coord(k)};
                if (norm(x) < g.R) {
                    const double r = dist(x, x0);
                    ball.push_back({(static_cast<std::size_t>(i) * n + j) * n + k, x, r,
                                    1.0 / (4.0 * std::numbers::pi * r)});
                }
            }

    std::vector<double> prev(nn, 0.0), cur(nn, 0.0), next(nn, 0.0);
    std::vector<double> src(ball.size(), 0.0);

    // u_sc stays exactly zero while a vanishes.
    int first = nsteps;
    for (int m = 0; m <= nsteps; ++m)
        if (m * dt > g.T_minus) {
            first = m;
            break;
        }
    ForwardStats st;
    st.first_step = std::max(0, first - 1);

    std::vector<char> want;
    if (!observe_steps.empty()) {
        want.assign(nsteps + 1, 0);
        for (int m : observe_steps)
            if (m >= 0 && m <= nsteps) want[m] = 1;
    }
    auto notify = [&](int m, const std::vector<double>& u) {
        if (!observer) return;
        if (!want.empty() && !want[m]) return;
        observer(m, FieldView(grid, x0, u, m * dt));
    };
    for (int m = 0; m <= st.first_step && m <= nsteps; ++m) notify(m, cur);

    const double c2 = dt * dt / (dx * dx);
    const std::size_t sj = n, si = static_cast<std::size_t>(n) * n;
    for (int m = st.first_step; m < nsteps; ++m) {
        const double t = m * dt;
        for (std::size_t b = 0; b < ball.size(); ++b) {
            const double a = eval_coefficient(model, g, ball[b].x, t);
            const double ui = t > ball[b].r ? ball[b].uinc : 0.0;
            src[b] = a * (ui + cur[ball[b].idx]);
        }
        for (int i = 1; i < n - 1; ++i) {
            for (int j = 1; j < n - 1; ++j) {
                const double sij = std::max(prof[i], prof[j]);
                std::size_t idx = static_cast<std::size_t>(i) * si + j * sj + 1;
                for (int k = 1; k < n - 1; ++k, ++idx) {
                    const double lap = cur[idx + si] + cur[idx - si] + cur[idx + sj] + cur[idx - sj] +
                                       cur[idx + 1] + cur[idx - 1] - 6.0 * cur[idx];
                    const double sg = std::max(sij, prof[k]) * dt * 0.5;
                    next[idx] = (2.0 * cur[idx] - (1.0 - sg) * prev[idx] + c2 * lap) / (1.0 + sg);
                }
            }
        }
        for (std::size_t b = 0; b < ball.size(); ++b) next[ball[b].idx] += dt * dt * src[b];
        std::swap(prev, cur);
        std::swap(cur, next);
        ++st.steps;
        if ((m + 1) % 64 == 0 || m + 1 == nsteps) {
            for (std::size_t q = 0; q < nn; ++q)
                if (!std::isfinite(cur[q])) {
                    std::ostringstream os;
                    os << "forward solve: non-finite value at step " << (m + 1);
                    throw std::runtime_error(os.str());
                }
        }
        for (const auto& b : ball) {
            st.max_scattered = std::max(st.max_scattered, cur[b.idx]);
            st.min_scattered = std::min(st.min_scattered, cur[b.idx]);
        }
        notify(m + 1, cur);
    }
    return st;
}

namespace {

std::vector<int> steps_for_times(const SpaceTimeGrid& grid, const std::vector<double>& times) {
    std::vector<int> steps;
    const int nsteps = static_cast<int>(std::lround(grid.t_end / grid.dt));
    for (double t : times) {
        const long m = std::lround(t / grid.dt);
        if (std::abs(m * grid.dt - t) > 1e-9 * std::max(1.0, t) || m < 0 || m > nsteps) {
            std::ostringstream os;
            os << "trace time " << t << " is not a forward time level";
            throw std::invalid_argument(os.str());
        }
        steps.push_back(static_cast<int>(m));
    }
    return steps;
}

}  // namespace

SourceTraces extract_traces(const ProblemGeometry& g, const TargetModel& model, double s,
                            const SpaceTimeGrid& grid, const BoundaryNodes& nodes,
                            const std::vector<double>& times, Interp order) {
    const std::vector<int> steps = steps_for_times(grid, times);
    const std::size_t B = nodes.points.size(), T = times.size();
    const bool normal = !nodes.normals.empty();
    if (normal && nodes.normals.size() != B) throw std::invalid_argument("extract_traces: normals size mismatch");
    SourceTraces out;
    out.g0.assign(B * T, 0.0);
    if (normal) out.g1.assign(B * T, 0.0);
    const double h = grid.dx;
    auto observer = [&](int step, const FieldView& f) {
        for (std::size_t ti = 0; ti < T; ++ti) {
            if (steps[ti] != step) continue;
            for (std::size_t b = 0; b < B; ++b) {
                const Vec3& x = nodes.points[b];
                out.g0[b * T + ti] = f.interpolate_total(x, order);
                if (normal) {
                    const Vec3& nu = nodes.normals[b];
                    const Vec3 xp{x[0] + h * nu[0], x[1] + h * nu[1], x[2] + h * nu[2]};
                    const Vec3 xm{x[0] - h * nu[0], x[1] - h * nu[1], x[2] - h * nu[2]};
                    out.g1[b * T + ti] =
                        (f.interpolate_total(xp, order) - f.interpolate_total(xm, order)) / (2.0 * h);
                }
            }
        }
    };
    solve_forward(g, model, s, grid, observer, steps);
    return out;
}

CauchyTraces generate_traces(const ProblemGeometry& g, const TargetModel& model,
                             const SpaceTimeGrid& grid, const BoundaryNodes& nodes,
                             const std::vector<double>& times, Interp order) {
    CauchyTraces tr;
    tr.points = nodes.points;
    tr.normals = nodes.normals;
    tr.times = times;
    tr.sources = g.source_positions;
    const std::size_t S = tr.S(), B = tr.B(), T = tr.T();
    tr.g0.assign(S * B * T, 0.0);
    if (!nodes.normals.empty()) tr.g1.assign(S * B * T, 0.0);
    std::vector<std::exception_ptr> errors(S);
    parallel_for(S, [&](std::size_t si) {
        try {
            SourceTraces st = extract_traces(g, model, tr.sources[si], grid, nodes, times, order);
            std::copy(st.g0.begin(), st.g0.end(), tr.g0.begin() + si * B * T);
            if (!st.g1.empty()) std::copy(st.g1.begin(), st.g1.end(), tr.g1.begin() + si * B * T);
        } catch (...) {
            errors[si] = std::current_exception();
        }
    });
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    check_positive(tr);
    return tr;
}

void check_positive(const CauchyTraces& tr) {
    for (std::size_t i = 0; i < tr.g0.size(); ++i)
        if (!(tr.g0[i] > 0.0)) {
            const std::size_t T = tr.T(), B = tr.B();
            std::ostringstream os;
            os << "non-positive Dirichlet trace at source " << i / (B * T) << ", node " << (i / T) % B
               << ", time index " << i % T << " (value " << tr.g0[i] << ")";
            throw std::runtime_error(os.str());
        }
}

std::vector<double> uniform_signs(std::size_t n, std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    std::mt19937_64 eng(seq);
    std::vector<double> out(n);
    for (auto& v : out) v = 2.0 * (static_cast<double>(eng() >> 11) * 0x1.0p-53) - 1.0;
    return out;
}

CauchyTraces add_noise(const CauchyTraces& tr, double delta, std::uint64_t seed) {
    if (!(delta >= 0.0)) throw std::invalid_argument("add_noise: delta must be nonnegative");
    CauchyTraces out = tr;
    out.stage = "noisy";
    out.noise_delta = delta;
    out.noise_seed = seed;
    if (delta == 0.0) return out;
    const std::size_t S = tr.S(), B = tr.B(), T = tr.T();
    // One draw per (node, time), shared by every source position.
    const std::vector<double> xi0 = uniform_signs(B * T, seed, 0);
    const std::vector<double> xi1 = uniform_signs(B * T, seed, 1);
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t q = 0; q < B * T; ++q) {
            out.g0[s * B * T + q] = tr.g0[s * B * T + q] * (1.0 + delta * xi0[q]);
            if (!tr.g1.empty()) out.g1[s * B * T + q] = tr.g1[s * B * T + q] * (1.0 + delta * xi1[q]);
        }
    check_positive(out);
    return out;
}

namespace {

std::vector<double> flatten(const std::vector<Vec3>& v) {
    std::vector<double> out;
    out.reserve(v.size() * 3);
    for (const auto& p : v) out.insert(out.end(), p.begin(), p.end());
    return out;
}

std::vector<Vec3> unflatten(const std::vector<double>& v) {
    std::vector<Vec3> out(v.size() / 3);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = {v[3 * i], v[3 * i + 1], v[3 * i + 2]};
    return out;
}

}  // namespace

Container to_container(const CauchyTraces& tr) {
    Container c;
    c.header = tr.meta;
    c.header["kind"] = "cauchy_traces";
    c.header["stage"] = tr.stage;
    c.header["noise"] = {{"delta", tr.noise_delta}, {"seed", tr.noise_seed}};
    c.header["sources"] = tr.sources;
    c.header["layout"] = "source,node,time";
    c.arrays.push_back({"points", {tr.B(), 3}, flatten(tr.points)});
    c.arrays.push_back({"normals", {tr.normals.size(), 3}, flatten(tr.normals)});
    c.arrays.push_back({"times", {tr.T()}, tr.times});
    c.arrays.push_back({"sources", {tr.S()}, tr.sources});
    c.arrays.push_back({"g0", {tr.S(), tr.B(), tr.T()}, tr.g0});
    c.arrays.push_back({"g1", {tr.g1.empty() ? 0 : tr.S(), tr.B(), tr.T()}, tr.g1});
    return c;
}

CauchyTraces traces_from_container(const Container& c) {
    if (c.header.value("kind", "") != "cauchy_traces")
        throw std::runtime_error("container does not hold Cauchy traces");
    CauchyTraces tr;
    tr.stage = c.header.at("stage").get<std::string>();
    tr.noise_delta = c.header.at("noise").at("delta").get<double>();
    tr.noise_seed = c.header.at("noise").at("seed").get<std::uint64_t>();
    tr.meta = c.header;
    tr.meta.erase("arrays");
    tr.points = unflatten(c.get("points").data);
    tr.normals = unflatten(c.get("normals").data);
    tr.times = c.get("times").data;
    tr.sources = c.get("sources").data;
    tr.g0 = c.get("g0").data;
    tr.g1 = c.get("g1").data;
    if (tr.g0.size() != tr.S() * tr.B() * tr.T() || (!tr.g1.empty() && tr.g1.size() != tr.g0.size()))
        throw std::runtime_error("trace container: inconsistent array shapes");
    return tr;
}

void write_traces_csv(const std::string& path, const CauchyTraces& tr, std::size_t source) {
    if (source >= tr.S()) throw std::out_of_range("write_traces_csv: source index");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << std::setprecision(12) << "node,x,y,z,t,g0,g1\n";
    for (std::size_t b = 0; b < tr.B(); ++b)
        for (std::size_t t = 0; t < tr.T(); ++t) {
            const std::size_t i = tr.index(source, b, t);
            out << b << "," << tr.points[b][0] << "," << tr.points[b][1] << "," << tr.points[b][2] << ","
                << tr.times[t] << "," << tr.g0[i] << "," << (tr.g1.empty() ? 0.0 : tr.g1[i]) << "\n";
        }
}

}  // namespace carleman
