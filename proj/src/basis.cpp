#include "carleman/basis.hpp"
#include "carleman/spline.hpp"

#include <gsl/gsl_integration.h>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace carleman {

Quadrature gauss_legendre(int n, double a, double b) {
    if (n < 1) throw std::invalid_argument("gauss_legendre: n >= 1 required");
    gsl_integration_glfixed_table* tab = gsl_integration_glfixed_table_alloc(n);
    if (!tab) throw std::runtime_error("gauss_legendre: table allocation failed");
    Quadrature q;
    q.nodes.resize(n);
    q.weights.resize(n);
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    for (int i = 0; i < n; ++i) {
        double x, w;
        gsl_integration_glfixed_point(-1.0, 1.0, i, &x, &w, tab);
        // GSL's computed (untabulated) rules drift to ~1e-10 for large n; polish on P_n.
        double dp = 1.0;
        for (int it = 0; it < 3; ++it) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            if (n == 1) p0 = 1.0;
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            x -= p1 / dp;
        }
        q.nodes[i] = mid + half * x;
        q.weights[i] = half * 2.0 / ((1.0 - x * x) * dp * dp);
    }
    gsl_integration_glfixed_table_free(tab);
    return q;
}

namespace {

// P(u) and dP/du by Horner.
void poly_eval(const std::vector<double>& c, double u, double& p, double& dp) {
    p = 0.0;
    dp = 0.0;
    for (std::size_t i = c.size(); i-- > 0;) {
        dp = dp * u + p;
        p = p * u + c[i];
    }
}

}  // namespace

double BasisSet::value(int n, double s) const {
    double p, dp;
    poly_eval(poly_coeffs.at(n), s / R, p, dp);
    return p * std::exp(s);
}

double BasisSet::derivative(int n, double s) const {
    double p, dp;
    poly_eval(poly_coeffs.at(n), s / R, p, dp);
    return (p + dp / R) * std::exp(s);
}

void BasisSet::evaluate(double s, double* psi, double* dpsi) const {
    const double e = std::exp(s);
    for (int n = 0; n < N; ++n) {
        double p, dp;
        poly_eval(poly_coeffs[n], s / R, p, dp);
        psi[n] = p * e;
        if (dpsi) dpsi[n] = (p + dp / R) * e;
    }
}

BasisSet build_basis(int N, double R, int quadrature_nodes) {
    if (N < 1) throw std::invalid_argument("build_basis: N >= 1 required");
    if (!(R > 0)) throw std::invalid_argument("build_basis: R > 0 required");
    BasisSet b;
    b.N = N;
    b.R = R;
    b.quadrature = gauss_legendre(std::max(quadrature_nodes, 3 * N + 8), -R, R);
    const auto& q = b.quadrature;
    const std::size_t nq = q.nodes.size();

    // Work with values at the quadrature nodes alongside the coefficient vectors.
    std::vector<std::vector<double>> vals, coef;
    auto inner = [&](const std::vector<double>& f, const std::vector<double>& g) {
        double acc = 0.0;
        for (std::size_t i = 0; i < nq; ++i) acc += q.weights[i] * f[i] * g[i];
        return acc;
    };
    for (int n = 0; n < N; ++n) {
        std::vector<double> c(N, 0.0), v(nq);
        c[n] = 1.0;
        for (std::size_t i = 0; i < nq; ++i)
            v[i] = std::pow(q.nodes[i] / R, n) * std::exp(q.nodes[i]);
        for (int pass = 0; pass < 2; ++pass) {
            for (int j = 0; j < n; ++j) {
                const double r = inner(vals[j], v);
                for (std::size_t i = 0; i < nq; ++i) v[i] -= r * vals[j][i];
                for (int k = 0; k < N; ++k) c[k] -= r * coef[j][k];
            }
        }
        const double nrm = std::sqrt(inner(v, v));
        for (auto& x : v) x /= nrm;
        for (auto& x : c) x /= nrm;
        vals.push_back(v);
        coef.push_back(c);
    }
    for (int n = 0; n < N; ++n) {
        b.poly_coeffs.emplace_back(coef[n].begin(), coef[n].begin() + n + 1);
        if (coef[n][n] == 0.0) throw std::runtime_error("build_basis: degenerate leading coefficient");
    }
    // Orthogonality recomputed from the stored polynomials.
    std::vector<std::vector<double>> psi(N, std::vector<double>(nq));
    for (int n = 0; n < N; ++n)
        for (std::size_t i = 0; i < nq; ++i) psi[n][i] = b.value(n, q.nodes[i]);
    for (int n = 0; n < N; ++n)
        for (int m = 0; m <= n; ++m) {
            const double g = inner(psi[n], psi[m]) - (m == n ? 1.0 : 0.0);
            if (std::abs(g) > 1e-8) {
                std::ostringstream os;
                os << "build_basis: orthogonality lost at n=" << n << " (residual " << g << ")";
                throw std::runtime_error(os.str());
            }
        }
    return b;
}

CouplingTensors coupling_tensors(const BasisSet& basis, const Quadrature& q) {
    const int N = basis.N;
    CouplingTensors t;
    t.N = N;
    t.M = Eigen::MatrixXd::Zero(N, N);
    t.B.assign(static_cast<std::size_t>(N) * N * N, 0.0);
    t.C1 = Eigen::VectorXd::Zero(N);
    t.C2 = Eigen::MatrixXd::Zero(N, N);
    std::vector<double> psi(N), dpsi(N);
    const double inv2R = 1.0 / (2.0 * basis.R);
    for (std::size_t i = 0; i < q.nodes.size(); ++i) {
        basis.evaluate(q.nodes[i], psi.data(), dpsi.data());
        const double w = q.weights[i];
        for (int m = 0; m < N; ++m) {
            t.C1(m) += w * psi[m] * inv2R;
            for (int k = 0; k < N; ++k) {
                t.M(m, k) += w * dpsi[k] * psi[m];
                t.C2(m, k) += w * psi[m] * psi[k] * inv2R;
                for (int n = 0; n < N; ++n)
                    t.B[(static_cast<std::size_t>(m) * N + n) * N + k] += w * dpsi[k] * psi[n] * psi[m];
            }
        }
    }
    t.M_inv = t.M.inverse();
    return t;
}

CouplingTensors coupling_tensors(const BasisSet& basis) {
    const auto& q = basis.quadrature;
    CouplingTensors t = coupling_tensors(basis, q);
    const CouplingTensors t2 =
        coupling_tensors(basis, gauss_legendre(2 * static_cast<int>(q.nodes.size()), -basis.R, basis.R));
    double drift = (t.M - t2.M).cwiseAbs().maxCoeff();
    drift = std::max(drift, (t.C1 - t2.C1).cwiseAbs().maxCoeff());
    drift = std::max(drift, (t.C2 - t2.C2).cwiseAbs().maxCoeff());
    for (std::size_t i = 0; i < t.B.size(); ++i) drift = std::max(drift, std::abs(t.B[i] - t2.B[i]));
    if (drift > 1e-10) {
        std::ostringstream os;
        os << "coupling_tensors: quadrature drift " << drift << " on node doubling";
        throw std::runtime_error(os.str());
    }
    return t;
}

namespace {

void check_uniform(const std::vector<double>& s) {
    if (s.size() < 4) throw std::invalid_argument("projection: at least 4 samples required");
    const double h = (s.back() - s.front()) / static_cast<double>(s.size() - 1);
    for (std::size_t i = 1; i < s.size(); ++i)
        if (std::abs(s[i] - s[i - 1] - h) > 1e-9 * std::max(1.0, std::abs(h)))
            throw std::invalid_argument("projection: s-grid must be uniform");
}

}  // namespace

Projector::Projector(const std::vector<double>& s_grid, const BasisSet& basis)
    : N_(basis.N), S_(s_grid.size()) {
    check_uniform(s_grid);
    const auto& q = basis.quadrature;
    const std::size_t nq = q.nodes.size();
    const double hs = (s_grid.back() - s_grid.front()) / static_cast<double>(S_ - 1);
    const double hq = 2.0 * basis.R / static_cast<double>(nq);
    if (hs > 2.0 * hq) {
        std::ostringstream os;
        os << "projection: s-grid step " << hs << " too coarse for " << nq << " quadrature nodes";
        throw std::invalid_argument(os.str());
    }
    const std::vector<double> Sm = spline_matrix(s_grid, q.nodes);
    P_ = Eigen::MatrixXd::Zero(N_, static_cast<Eigen::Index>(S_));
    std::vector<double> psi(N_);
    for (std::size_t i = 0; i < nq; ++i) {
        basis.evaluate(q.nodes[i], psi.data(), nullptr);
        for (int k = 0; k < N_; ++k)
            for (std::size_t j = 0; j < S_; ++j) P_(k, j) += q.weights[i] * psi[k] * Sm[i * S_ + j];
    }
}

void Projector::apply(const double* f, std::size_t stride, double* out) const {
    for (int k = 0; k < N_; ++k) {
        double acc = 0.0;
        for (std::size_t j = 0; j < S_; ++j) acc += P_(k, j) * f[j * stride];
        out[k] = acc;
    }
}

Eigen::VectorXd Projector::apply(const std::vector<double>& f) const {
    if (f.size() != S_) throw std::invalid_argument("projection: sample count mismatch");
    Eigen::VectorXd out(N_);
    apply(f.data(), 1, out.data());
    return out;
}

Eigen::VectorXd project_onto_basis(const std::vector<double>& s_grid,
                                   const std::vector<double>& samples, const BasisSet& basis) {
    return Projector(s_grid, basis).apply(samples);
}

void write_tensors_csv(const std::string& path, const CouplingTensors& t) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << std::setprecision(17);
    out << "tensor,i,j,k,value\n";
    for (int m = 0; m < t.N; ++m)
        for (int k = 0; k < t.N; ++k) out << "M," << m << "," << k << ",," << t.M(m, k) << "\n";
    for (int m = 0; m < t.N; ++m)
        for (int k = 0; k < t.N; ++k) out << "M_inv," << m << "," << k << ",," << t.M_inv(m, k) << "\n";
    for (int m = 0; m < t.N; ++m)
        for (int n = 0; n < t.N; ++n)
            for (int k = 0; k < t.N; ++k)
                out << "B," << m << "," << n << "," << k << "," << t.b(m, n, k) << "\n";
    for (int n = 0; n < t.N; ++n) out << "C1," << n << ",,," << t.C1(n) << "\n";
    for (int n = 0; n < t.N; ++n)
        for (int k = 0; k < t.N; ++k) out << "C2," << n << "," << k << ",," << t.C2(n, k) << "\n";
}

}  // namespace carleman
