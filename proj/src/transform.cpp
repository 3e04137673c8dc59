#include "carleman/transform.hpp"
#include "carleman/parallel.hpp"
#include "carleman/spline.hpp"

#include <boost/math/special_functions/spherical_harmonic.hpp>

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace carleman {

void log_traces(const CauchyTraces& tr, std::vector<double>& p0, std::vector<double>& p1) {
    p0.resize(tr.g0.size());
    p1.assign(tr.g1.size(), 0.0);
    for (std::size_t i = 0; i < tr.g0.size(); ++i) {
        if (!(tr.g0[i] > 0.0)) {
            std::ostringstream os;
            os << "log_traces: g0 <= 0 at flat index " << i << " (source " << i / (tr.B() * tr.T())
               << ", node " << (i / tr.T()) % tr.B() << ", time " << i % tr.T() << ")";
            throw std::domain_error(os.str());
        }
        p0[i] = std::log(tr.g0[i]);
        if (!tr.g1.empty()) p1[i] = tr.g1[i] / tr.g0[i];
    }
}

std::vector<double> spline_s_derivative(const std::vector<double>& s_grid, const std::vector<double>& values) {
    if (s_grid.size() < 4) throw std::invalid_argument("spline_s_derivative: at least 4 samples required");
    return spline_derivative_at_nodes(s_grid, values);
}

void assemble_boundary_coefficients(const std::vector<double>& s_grid, const std::vector<double>& p,
                                    std::size_t nodes, std::size_t times, const BasisSet& basis,
                                    std::vector<double>& q) {
    const std::size_t S = s_grid.size(), BT = nodes * times;
    if (p.size() != S * BT) throw std::invalid_argument("assemble_boundary_coefficients: shape mismatch");
    const Projector proj(s_grid, basis);
    const int N = basis.N;
    q.assign(static_cast<std::size_t>(N) * BT, 0.0);
    parallel_for(nodes, [&](std::size_t b) {
        std::vector<double> out(N);
        for (std::size_t t = 0; t < times; ++t) {
            const std::size_t q0 = b * times + t;
            proj.apply(p.data() + q0, BT, out.data());
            for (int k = 0; k < N; ++k) q[k * BT + q0] = out[k];
        }
    });
}

TransformedTraces transform_traces(const CauchyTraces& tr, const BasisSet& basis) {
    TransformedTraces out;
    out.N = basis.N;
    out.points = tr.points;
    out.normals = tr.normals;
    out.times = tr.times;
    out.sources = tr.sources;
    out.meta = tr.meta;
    log_traces(tr, out.p0, out.p1);
    assemble_boundary_coefficients(tr.sources, out.p0, tr.B(), tr.T(), basis, out.q0);
    if (!out.p1.empty()) assemble_boundary_coefficients(tr.sources, out.p1, tr.B(), tr.T(), basis, out.q1);
    return out;
}

int default_sphere_degree(std::size_t nodes) {
    // Keep roughly two samples per coefficient.
    int L = 0;
    while (static_cast<std::size_t>((L + 2) * (L + 2)) * 2 <= nodes) ++L;
    return L;
}

namespace {

void sh_row(const Vec3& x, int L, double* row) {
    const double r = norm(x);
    const double theta = std::acos(std::clamp(x[2] / r, -1.0, 1.0));
    const double phi = std::atan2(x[1], x[0]);
    int c = 0;
    for (int l = 0; l <= L; ++l) {
        row[c++] = boost::math::spherical_harmonic_r(l, 0, theta, phi);
        for (int m = 1; m <= l; ++m) {
            row[c++] = std::sqrt(2.0) * boost::math::spherical_harmonic_r(l, m, theta, phi);
            row[c++] = std::sqrt(2.0) * boost::math::spherical_harmonic_i(l, m, theta, phi);
        }
    }
}

}  // namespace

std::vector<double> resample_on_sphere(const std::vector<Vec3>& from, const std::vector<double>& values,
                                       std::size_t fields, const std::vector<Vec3>& to, int degree) {
    const std::size_t nf = from.size(), nt = to.size();
    if (values.size() != fields * nf) throw std::invalid_argument("resample_on_sphere: shape mismatch");
    const int nc = (degree + 1) * (degree + 1);
    if (static_cast<std::size_t>(nc) > nf) throw std::invalid_argument("resample_on_sphere: degree too high");
    Eigen::MatrixXd A(nf, nc), E(nt, nc);
    for (std::size_t i = 0; i < nf; ++i) {
        std::vector<double> row(nc);
        sh_row(from[i], degree, row.data());
        for (int c = 0; c < nc; ++c) A(i, c) = row[c];
    }
    for (std::size_t i = 0; i < nt; ++i) {
        std::vector<double> row(nc);
        sh_row(to[i], degree, row.data());
        for (int c = 0; c < nc; ++c) E(i, c) = row[c];
    }
    // Combined map from samples to target values.
    const Eigen::MatrixXd pinv = A.completeOrthogonalDecomposition().pseudoInverse();
    const Eigen::MatrixXd map = E * pinv;
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> V(values.data(), fields, nf);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out = V * map.transpose();
    return std::vector<double>(out.data(), out.data() + out.size());
}

namespace {

std::vector<double> flat(const std::vector<Vec3>& v) {
    std::vector<double> out;
    for (const auto& p : v) out.insert(out.end(), p.begin(), p.end());
    return out;
}

std::vector<Vec3> unflat(const std::vector<double>& v) {
    std::vector<Vec3> out(v.size() / 3);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = {v[3 * i], v[3 * i + 1], v[3 * i + 2]};
    return out;
}

}  // namespace

Container to_container(const TransformedTraces& t) {
    Container c;
    c.header = t.meta;
    c.header["kind"] = "transformed_traces";
    c.header["stage"] = "transformed";
    c.header["N"] = t.N;
    c.header["layout"] = "p: source,node,time; q: k,node,time";
    c.arrays.push_back({"points", {t.B(), 3}, flat(t.points)});
    c.arrays.push_back({"normals", {t.normals.size(), 3}, flat(t.normals)});
    c.arrays.push_back({"times", {t.T()}, t.times});
    c.arrays.push_back({"sources", {t.S()}, t.sources});
    c.arrays.push_back({"p0", {t.S(), t.B(), t.T()}, t.p0});
    c.arrays.push_back({"p1", {t.p1.empty() ? 0 : t.S(), t.B(), t.T()}, t.p1});
    c.arrays.push_back({"q0", {static_cast<std::size_t>(t.N), t.B(), t.T()}, t.q0});
    c.arrays.push_back({"q1", {t.q1.empty() ? 0 : static_cast<std::size_t>(t.N), t.B(), t.T()}, t.q1});
    return c;
}

TransformedTraces transformed_from_container(const Container& c) {
    if (c.header.value("kind", "") != "transformed_traces")
        throw std::runtime_error("container does not hold transformed traces");
    TransformedTraces t;
    t.N = c.header.at("N").get<int>();
    t.meta = c.header;
    t.meta.erase("arrays");
    t.points = unflat(c.get("points").data);
    t.normals = unflat(c.get("normals").data);
    t.times = c.get("times").data;
    t.sources = c.get("sources").data;
    t.p0 = c.get("p0").data;
    t.p1 = c.get("p1").data;
    t.q0 = c.get("q0").data;
    t.q1 = c.get("q1").data;
    return t;
}

}  // namespace carleman
