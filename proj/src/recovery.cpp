#include "carleman/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace carleman {

namespace {

ReconstructedCoefficient empty_like(const InversionGrid& g) {
    ReconstructedCoefficient r;
    r.grid = g;
    r.values.assign(g.nodes(), 0.0);
    return r;
}

}  // namespace

ReconstructedCoefficient recover_coefficient(const InversionGrid& g, const CoefficientVectorField& V,
                                             const CouplingTensors& tensors) {
    const int N = tensors.N;
    if (V.N != N) throw std::invalid_argument("recover: field and tensors disagree on N");
    const FieldDerivatives d = field_derivatives(g, V);
    auto rec = empty_like(g);
    const std::size_t S = g.spatial();
#pragma omp parallel for schedule(static)
    for (int l = 0; l < g.L; ++l)
        for (int s : g.eval_nodes) {
            const std::size_t b = (static_cast<std::size_t>(l) * S + s) * N;
            double a = 0.0;
            for (int n = 0; n < N; ++n) {
                a += (d.tt[b + n] - d.xx[b + n] - d.yy[b + n] - d.zz[b + n]) * tensors.C1(n);
                for (int k = 0; k < N; ++k)
                    a += (d.t[b + n] * d.t[b + k] - d.x[b + n] * d.x[b + k] - d.y[b + n] * d.y[b + k] -
                          d.z[b + n] * d.z[b + k]) *
                         tensors.C2(n, k);
            }
            rec.values[static_cast<std::size_t>(l) * S + s] = a;
        }
    return rec;
}

ReconstructedCoefficient recover_coefficient_quadrature(const InversionGrid& g, const CoefficientVectorField& V,
                                                        const BasisSet& basis) {
    const int N = basis.N;
    if (V.N != N) throw std::invalid_argument("recover: field and basis disagree on N");
    const FieldDerivatives d = field_derivatives(g, V);
    const auto& q = basis.quadrature;
    const std::size_t nq = q.nodes.size();
    std::vector<double> psi(nq * N), dpsi(N);
    for (std::size_t j = 0; j < nq; ++j) basis.evaluate(q.nodes[j], &psi[j * N], dpsi.data());
    auto rec = empty_like(g);
    const std::size_t S = g.spatial();
#pragma omp parallel for schedule(static)
    for (int l = 0; l < g.L; ++l)
        for (int s : g.eval_nodes) {
            const std::size_t b = (static_cast<std::size_t>(l) * S + s) * N;
            double integral = 0.0;
            for (std::size_t j = 0; j < nq; ++j) {
                const double* p = &psi[j * N];
                double vt = 0, vtt = 0, lap = 0, vx = 0, vy = 0, vz = 0;
                for (int n = 0; n < N; ++n) {
                    vt += d.t[b + n] * p[n];
                    vtt += d.tt[b + n] * p[n];
                    lap += (d.xx[b + n] + d.yy[b + n] + d.zz[b + n]) * p[n];
                    vx += d.x[b + n] * p[n];
                    vy += d.y[b + n] * p[n];
                    vz += d.z[b + n] * p[n];
                }
                integral += q.weights[j] * (vtt - lap + vt * vt - vx * vx - vy * vy - vz * vz);
            }
            rec.values[static_cast<std::size_t>(l) * S + s] = integral / (2.0 * basis.R);
        }
    return rec;
}

namespace {

double open_time(const InversionGrid& g, const ProblemGeometry& geom, int l) {
    const double eps = 1e-9 * (geom.T - geom.T_minus);
    return std::clamp(g.time(l), geom.T_minus + eps, geom.T - eps);
}

}  // namespace

std::vector<char> target_mask(const InversionGrid& g, const TargetModel& m, const ProblemGeometry& geom) {
    std::vector<char> mask(g.nodes(), 0);
    for (int l = 0; l < g.L; ++l) {
        const double t = g.time(l);
        if (!(t > geom.T_minus && t < geom.T)) continue;
        for (int s : g.eval_nodes)
            if (m.kind != TargetKind::none && inside_target(m, g.coord(s), t))
                mask[static_cast<std::size_t>(l) * g.spatial() + s] = 1;
    }
    return mask;
}

ReconstructedCoefficient sample_model(const InversionGrid& g, const TargetModel& m, const ProblemGeometry& geom) {
    auto rec = empty_like(g);
    for (int l = 0; l < g.L; ++l) {
        const double t = open_time(g, geom, l);
        for (int s : g.eval_nodes) rec.values[static_cast<std::size_t>(l) * g.spatial() + s] = eval_coefficient(m, geom, g.coord(s), t);
    }
    return rec;
}

double compute_contrast(const ReconstructedCoefficient& rec, const std::vector<char>& mask, double background) {
    if (mask.size() != rec.values.size()) throw std::invalid_argument("contrast: mask size mismatch");
    double best = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) {
            best = std::max(best, rec.values[i]);
            any = true;
        }
    if (!any) throw std::invalid_argument("contrast: empty target mask");
    return best / background;
}

std::optional<Vec3> extract_center(const ReconstructedCoefficient& rec, int l, double threshold, double background) {
    const InversionGrid& g = rec.grid;
    double peak = 0.0;
    for (int s : g.eval_nodes) peak = std::max(peak, rec.at(l, s) - background);
    if (!(peak > 0.0)) return std::nullopt;
    double w = 0.0;
    Vec3 c{0.0, 0.0, 0.0};
    for (int s : g.eval_nodes) {
        const double ex = rec.at(l, s) - background;
        if (ex < threshold * peak) continue;
        const Vec3 x = g.coord(s);
        for (int a = 0; a < 3; ++a) c[a] += ex * x[a];
        w += ex;
    }
    for (auto& v : c) v /= w;
    return c;
}

FieldMetrics field_error(const ReconstructedCoefficient& rec, const TargetModel& m, const ProblemGeometry& geom,
                         double threshold) {
    const InversionGrid& g = rec.grid;
    const auto truth = sample_model(g, m, geom);
    const auto mask = target_mask(g, m, geom);
    FieldMetrics fm;
    double num = 0.0, den = 0.0;
    bool any = false;
    for (std::size_t i = 0; i < rec.values.size(); ++i) {
        const double e = rec.values[i] - truth.values[i];
        num += e * e;
        den += truth.values[i] * truth.values[i];
        if (mask[i]) {
            fm.mask_max_error = std::max(fm.mask_max_error, std::abs(e));
            any = true;
        }
    }
    fm.relative_l2 = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
    fm.contrast = any ? compute_contrast(rec, mask, m.background) : 0.0;
    for (int l = 0; l < g.L; ++l) {
        CenterSample cs;
        cs.t = g.time(l);
        const bool open = cs.t > geom.T_minus && cs.t < geom.T;
        const auto c = open ? extract_center(rec, l, threshold, m.background) : std::nullopt;
        if (c && m.kind != TargetKind::none && m.kind != TargetKind::custom) {
            cs.found = true;
            cs.computed = *c;
            cs.exact = target_center(m, open_time(g, geom, l));
            cs.distance = dist(cs.exact, cs.computed);
        }
        fm.centers.push_back(cs);
    }
    return fm;
}

double mean_center_error(const FieldMetrics& fm, const std::vector<double>& times, double miss) {
    if (times.empty() || fm.centers.empty()) return miss;
    double sum = 0.0;
    for (double t : times) {
        const CenterSample* best = &fm.centers.front();
        for (const auto& c : fm.centers)
            if (std::abs(c.t - t) < std::abs(best->t - t)) best = &c;
        sum += best->found ? best->distance : miss;
    }
    return sum / times.size();
}

void write_coefficient_csv(const std::string& path, const ReconstructedCoefficient& rec) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "x,y,z,t,value\n" << std::setprecision(17);
    const InversionGrid& g = rec.grid;
    for (int l = 0; l < g.L; ++l)
        for (int s : g.eval_nodes) {
            const Vec3 x = g.coord(s);
            out << x[0] << ',' << x[1] << ',' << x[2] << ',' << g.time(l) << ',' << rec.at(l, s) << '\n';
        }
}

std::vector<std::string> write_coefficient_vtk(const std::string& prefix, const ReconstructedCoefficient& rec) {
    const InversionGrid& g = rec.grid;
    std::vector<std::string> files;
    for (int l = 0; l < g.L; ++l) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "_%04d.vtk", l);
        const std::string path = prefix + buf;
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write " + path);
        out << "# vtk DataFile Version 3.0\n"
            << "a_comp t=" << std::setprecision(17) << g.time(l) << "\nASCII\nDATASET STRUCTURED_POINTS\n"
            << "DIMENSIONS " << g.n << ' ' << g.n << ' ' << g.n << "\n"
            << "ORIGIN " << -g.half * g.hx << ' ' << -g.half * g.hx << ' ' << -g.half * g.hx << "\n"
            << "SPACING " << g.hx << ' ' << g.hx << ' ' << g.hx << "\n"
            << "POINT_DATA " << g.spatial() << "\nSCALARS a_comp double 1\nLOOKUP_TABLE default\n";
        // VTK runs x fastest; our spatial index runs z fastest.
        for (int k = 0; k < g.n; ++k)
            for (int j = 0; j < g.n; ++j)
                for (int i = 0; i < g.n; ++i) out << rec.at(l, g.index(i, j, k)) << '\n';
        files.push_back(path);
    }
    return files;
}

void write_centers_csv(const std::string& path, const FieldMetrics& fm) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "t,found,x,y,z,exact_x,exact_y,exact_z,distance\n" << std::setprecision(17);
    for (const auto& c : fm.centers) {
        out << c.t << ',' << (c.found ? 1 : 0);
        if (c.found)
            out << ',' << c.computed[0] << ',' << c.computed[1] << ',' << c.computed[2] << ',' << c.exact[0] << ','
                << c.exact[1] << ',' << c.exact[2] << ',' << c.distance << '\n';
        else
            out << ",,,,,,,\n";
    }
}

}  // namespace carleman
