#include "carleman/inversion.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace carleman {

void evaluate_F1(const CouplingTensors& t, const double* vt, const double* vx, const double* vy,
                 const double* vz, double* out) {
    const int N = t.N;
    std::vector<double> Q(static_cast<std::size_t>(N) * N), F(N, 0.0);
    for (int n = 0; n < N; ++n)
        for (int k = 0; k < N; ++k) Q[n * N + k] = vt[n] * vt[k] - vx[n] * vx[k] - vy[n] * vy[k] - vz[n] * vz[k];
    for (int m = 0; m < N; ++m) {
        double acc = 0.0;
        for (int n = 0; n < N; ++n)
            for (int k = 0; k < N; ++k) acc += t.b(m, n, k) * Q[n * N + k];
        F[m] = 2.0 * acc;
    }
    for (int m = 0; m < N; ++m) {
        double acc = 0.0;
        for (int j = 0; j < N; ++j) acc += t.M_inv(m, j) * F[j];
        out[m] = acc;
    }
}

Functional::Functional(const InversionGrid& grid, const ProblemGeometry& geom, const CarlemanParams& carl,
                       const CouplingTensors& tensors, const InversionConfig& cfg)
    : grid_(grid), geom_(geom), carl_(carl), T_(tensors), cfg_(cfg), N_(tensors.N) {
    if (!(cfg.alpha >= 0.0 && cfg.alpha < 1.0)) throw std::invalid_argument("inversion: alpha must lie in [0,1)");
    if (!(cfg.lambda >= 0.0)) throw std::invalid_argument("inversion: lambda must be nonnegative");
    if (N_ < 1 || N_ > 16) throw std::invalid_argument("inversion: basis size must lie in 1..16");
    carl_.lambda = cfg.lambda;
    const std::size_t E = grid_.eval_nodes.size();
    weight_.resize(E * grid_.L);
    chi_.resize(E * grid_.L);
    const double pre = std::exp(-8.0 * cfg.lambda * carl_.h) * grid_.cell_volume() * cfg.weight_scale;
    for (int l = 0; l < grid_.L; ++l)
        for (std::size_t e = 0; e < E; ++e) {
            const Vec3 x = grid_.coord(grid_.eval_nodes[e]);
            const double t = grid_.time(l);
            const double phi = carleman_weight(x, t, geom_, carl_);
            const double w = pre * phi * phi;
            if (!std::isfinite(w)) throw std::overflow_error("inversion: Carleman weight overflows");
            weight_[l * E + e] = w;
            chi_[l * E + e] = cutoff_chi(x, t, geom_, carl_, cfg.chi);
        }
    Bsym_.resize(static_cast<std::size_t>(N_) * N_ * N_);
    for (int j = 0; j < N_; ++j)
        for (int p = 0; p < N_; ++p)
            for (int k = 0; k < N_; ++k) Bsym_[(j * N_ + p) * N_ + k] = T_.b(j, p, k) + T_.b(j, k, p);
    // r = chi (Lop (V_tt - Delta V) + Fop F) - r*.
    const std::size_t NN = static_cast<std::size_t>(N_) * N_;
    Lop_.resize(NN);
    LopT_.resize(NN);
    Fop_.resize(NN);
    FopT_.resize(NN);
    const bool scaled = cfg.residual_form == ResidualForm::scaled;
    for (int a = 0; a < N_; ++a)
        for (int b = 0; b < N_; ++b) {
            Lop_[a * N_ + b] = scaled ? (a == b ? 1.0 : 0.0) : T_.M(a, b);
            LopT_[a * N_ + b] = scaled ? (a == b ? 1.0 : 0.0) : T_.M(b, a);
            Fop_[a * N_ + b] = scaled ? T_.M_inv(a, b) : (a == b ? 1.0 : 0.0);
            FopT_[a * N_ + b] = scaled ? T_.M_inv(b, a) : (a == b ? 1.0 : 0.0);
        }
    eval_mask_.assign(grid_.spatial(), 0);
    for (int s : grid_.eval_nodes) eval_mask_[s] = 1;
    for (int m = 0; m <= 4; ++m) {
        ops_t_.push_back(grid_.L >= m + 2 ? make_stencil(m, grid_.L, grid_.ht) : Stencil1D{});
        ops_s_.push_back(grid_.n >= m + 2 ? make_stencil(m, grid_.n, grid_.hx) : Stencil1D{});
    }
}

void apply_stencil(const InversionGrid& grid, int N, int axis, const Stencil1D& st, const std::vector<double>& in,
                   std::vector<double>& out, bool transpose, bool accumulate) {
    const std::size_t dims[4] = {static_cast<std::size_t>(grid.L), static_cast<std::size_t>(grid.n),
                                 static_cast<std::size_t>(grid.n), static_cast<std::size_t>(grid.n)};
    std::size_t outer = 1, inner = static_cast<std::size_t>(N);
    for (int a = 0; a < axis; ++a) outer *= dims[a];
    for (int a = axis + 1; a < 4; ++a) inner *= dims[a];
    const std::size_t len = dims[axis];
    if (out.size() != in.size()) out.assign(in.size(), 0.0);
    const long long total = static_cast<long long>(outer * len);
#pragma omp parallel for schedule(static)
    for (long long op = 0; op < total; ++op) {
        const std::size_t o = static_cast<std::size_t>(op) / len, p = static_cast<std::size_t>(op) % len;
        double* dst = out.data() + (o * len + p) * inner;
        if (!accumulate)
            for (std::size_t q = 0; q < inner; ++q) dst[q] = 0.0;
        if (!transpose) {
            const auto& c = st.coef[p];
            const double* src = in.data() + (o * len + st.start[p]) * inner;
            for (std::size_t j = 0; j < c.size(); ++j) {
                const double w = c[j];
                const double* sj = src + j * inner;
                for (std::size_t q = 0; q < inner; ++q) dst[q] += w * sj[q];
            }
        } else {
            for (const auto& [r, w] : st.cols[p]) {
                const double* sj = in.data() + (o * len + r) * inner;
                for (std::size_t q = 0; q < inner; ++q) dst[q] += w * sj[q];
            }
        }
    }
}

FieldDerivatives field_derivatives(const InversionGrid& g, const CoefficientVectorField& V) {
    const Stencil1D t1 = make_stencil(1, g.L, g.ht), t2 = make_stencil(2, g.L, g.ht);
    const Stencil1D s1 = make_stencil(1, g.n, g.hx), s2 = make_stencil(2, g.n, g.hx);
    FieldDerivatives d;
    apply_stencil(g, V.N, 0, t1, V.values, d.t, false, false);
    apply_stencil(g, V.N, 0, t2, V.values, d.tt, false, false);
    apply_stencil(g, V.N, 1, s1, V.values, d.x, false, false);
    apply_stencil(g, V.N, 1, s2, V.values, d.xx, false, false);
    apply_stencil(g, V.N, 2, s1, V.values, d.y, false, false);
    apply_stencil(g, V.N, 2, s2, V.values, d.yy, false, false);
    apply_stencil(g, V.N, 3, s1, V.values, d.z, false, false);
    apply_stencil(g, V.N, 3, s2, V.values, d.zz, false, false);
    return d;
}

void Functional::apply(int axis, const Stencil1D& st, const std::vector<double>& in, std::vector<double>& out,
                       bool transpose, bool accumulate) const {
    apply_stencil(grid_, N_, axis, st, in, out, transpose, accumulate);
}

void Functional::derivatives(const std::vector<double>& v, Derivs& d) const {
    apply(0, ops_t_[1], v, d.t, false, false);
    apply(0, ops_t_[2], v, d.tt, false, false);
    apply(1, ops_s_[1], v, d.x, false, false);
    apply(1, ops_s_[2], v, d.xx, false, false);
    apply(2, ops_s_[1], v, d.y, false, false);
    apply(2, ops_s_[2], v, d.yy, false, false);
    apply(3, ops_s_[1], v, d.z, false, false);
    apply(3, ops_s_[2], v, d.zz, false, false);
}

void Functional::node_residual(const Derivs& d, std::size_t base, const double* target, double* r, double* Q) const {
    const int N = N_;
    const double *vt = &d.t[base], *vx = &d.x[base], *vy = &d.y[base], *vz = &d.z[base];
    for (int n = 0; n < N; ++n)
        for (int k = n; k < N; ++k) {
            const double q = vt[n] * vt[k] - vx[n] * vx[k] - vy[n] * vy[k] - vz[n] * vz[k];
            Q[n * N + k] = q;
            Q[k * N + n] = q;
        }
    double F[16];
    for (int m = 0; m < N; ++m) {
        double acc = 0.0;
        const double* bm = &T_.B[static_cast<std::size_t>(m) * N * N];
        for (int nk = 0; nk < N * N; ++nk) acc += bm[nk] * Q[nk];
        F[m] = 2.0 * acc;
    }
    double LV[16];
    for (int j = 0; j < N; ++j) LV[j] = d.tt[base + j] - d.xx[base + j] - d.yy[base + j] - d.zz[base + j];
    for (int m = 0; m < N; ++m) {
        double acc = 0.0;
        for (int j = 0; j < N; ++j) acc += Lop_[m * N + j] * LV[j] + Fop_[m * N + j] * F[j];
        r[m] = acc;
    }
    (void)target;
}

std::vector<double> Functional::residual(const CoefficientVectorField& V, bool subtract_target) const {
    Derivs d;
    derivatives(V.values, d);
    const std::size_t E = grid_.eval_nodes.size(), S = grid_.spatial();
    std::vector<double> out(E * grid_.L * N_);
    const long long total = static_cast<long long>(E * grid_.L);
#pragma omp parallel for schedule(static)
    for (long long le = 0; le < total; ++le) {
        const std::size_t l = static_cast<std::size_t>(le) / E, e = static_cast<std::size_t>(le) % E;
        const std::size_t base = (l * S + grid_.eval_nodes[e]) * N_;
        double Q[256];
        double* r = &out[static_cast<std::size_t>(le) * N_];
        node_residual(d, base, nullptr, r, Q);
        const double chi = chi_[le];
        for (int m = 0; m < N_; ++m) {
            r[m] *= chi;
            if (subtract_target && !target_.empty()) r[m] -= target_[static_cast<std::size_t>(le) * N_ + m];
        }
    }
    return out;
}

namespace {

// Multi-indices (t, x, y, z) of total order <= k.
std::vector<std::array<int, 4>> multi_indices(int k) {
    std::vector<std::array<int, 4>> out;
    for (int total = 0; total <= k; ++total)
        for (int a = 0; a <= total; ++a)
            for (int b = 0; a + b <= total; ++b)
                for (int c = 0; a + b + c <= total; ++c) out.push_back({a, b, c, total - a - b - c});
    return out;
}

int pure_axis(const std::array<int, 4>& b) {
    int axis = -1, count = 0;
    for (int a = 0; a < 4; ++a)
        if (b[a] > 0) {
            axis = a;
            ++count;
        }
    return count == 1 ? axis : -1;
}

}  // namespace

double Functional::penalty(const std::vector<double>& v, const Derivs& d, std::vector<double>* grad,
                           std::vector<double>* per_node) const {
    const std::size_t E = grid_.eval_nodes.size(), S = grid_.spatial();
    const double vol = grid_.cell_volume();
    const double galpha = 2.0 * cfg_.alpha * vol;
    std::vector<double> node_sum(E * grid_.L, 0.0);
    std::vector<double> tmp, tmp2, seed;
    for (const auto& beta : multi_indices(cfg_.penalty_order)) {
        const int order = beta[0] + beta[1] + beta[2] + beta[3];
        const std::vector<double>* D = nullptr;
        const int axis = pure_axis(beta);
        if (order == 0) {
            D = &v;
        } else if (axis >= 0 && order <= 2) {
            static const std::vector<double> Derivs::*first[4] = {&Derivs::t, &Derivs::x, &Derivs::y, &Derivs::z};
            static const std::vector<double> Derivs::*second[4] = {&Derivs::tt, &Derivs::xx, &Derivs::yy, &Derivs::zz};
            D = order == 1 ? &(d.*first[axis]) : &(d.*second[axis]);
        } else {
            tmp = v;
            for (int a = 0; a < 4; ++a)
                if (beta[a] > 0) {
                    apply(a, a == 0 ? ops_t_[beta[a]] : ops_s_[beta[a]], tmp, tmp2, false, false);
                    std::swap(tmp, tmp2);
                }
            D = &tmp;
        }
        for (std::size_t l = 0; l < static_cast<std::size_t>(grid_.L); ++l)
            for (std::size_t e = 0; e < E; ++e) {
                const std::size_t base = (l * S + grid_.eval_nodes[e]) * N_;
                double acc = 0.0;
                for (int c = 0; c < N_; ++c) acc += (*D)[base + c] * (*D)[base + c];
                node_sum[l * E + e] += acc;
            }
        if (grad) {
            seed.assign(v.size(), 0.0);
            for (std::size_t l = 0; l < static_cast<std::size_t>(grid_.L); ++l)
                for (std::size_t e = 0; e < E; ++e) {
                    const std::size_t base = (l * S + grid_.eval_nodes[e]) * N_;
                    for (int c = 0; c < N_; ++c) seed[base + c] = galpha * (*D)[base + c];
                }
            for (int a = 3; a >= 0; --a)
                if (beta[a] > 0) {
                    apply(a, a == 0 ? ops_t_[beta[a]] : ops_s_[beta[a]], seed, tmp2, true, false);
                    std::swap(seed, tmp2);
                }
            for (std::size_t i = 0; i < v.size(); ++i) (*grad)[i] += seed[i];
        }
    }
    double total = 0.0;
    for (std::size_t i = 0; i < node_sum.size(); ++i) {
        const double term = cfg_.alpha * vol * node_sum[i];
        if (per_node) (*per_node)[i] += term;
        total += term;
    }
    return total;
}

double Functional::value_and_gradient(const CoefficientVectorField& V, std::vector<double>& grad,
                                      bool mask_pinned) const {
    const std::vector<double>& v = V.values;
    if (v.size() != grid_.nodes() * N_) throw std::invalid_argument("functional: field size mismatch");
    Derivs d;
    derivatives(v, d);
    const std::size_t E = grid_.eval_nodes.size(), S = grid_.spatial();
    const std::size_t total = E * grid_.L;
    std::vector<double> terms(total);
    std::vector<double> s_t(v.size(), 0.0), s_tt(v.size(), 0.0), s_x(v.size(), 0.0), s_y(v.size(), 0.0),
        s_z(v.size(), 0.0), s_lap(v.size(), 0.0);
    const int N = N_;
#pragma omp parallel for schedule(static)
    for (long long le = 0; le < static_cast<long long>(total); ++le) {
        const std::size_t l = static_cast<std::size_t>(le) / E, e = static_cast<std::size_t>(le) % E;
        const std::size_t base = (l * S + grid_.eval_nodes[e]) * N;
        double Q[256], r[16], rho[16], g[16], lrho[16], A[256];
        node_residual(d, base, nullptr, r, Q);
        const double chi = chi_[le], W = weight_[le];
        double rr = 0.0;
        for (int m = 0; m < N; ++m) {
            r[m] *= chi;
            if (!target_.empty()) r[m] -= target_[static_cast<std::size_t>(le) * N + m];
            rr += r[m] * r[m];
            rho[m] = 2.0 * W * chi * r[m];
        }
        terms[le] = W * rr;
        for (int j = 0; j < N; ++j) {
            double acc = 0.0;
            double acc2 = 0.0;
            for (int m = 0; m < N; ++m) {
                acc += FopT_[j * N + m] * rho[m];
                acc2 += LopT_[j * N + m] * rho[m];
            }
            g[j] = acc;
            lrho[j] = acc2;
        }
        for (int p = 0; p < N; ++p)
            for (int k = 0; k < N; ++k) {
                double acc = 0.0;
                for (int j = 0; j < N; ++j) acc += g[j] * Bsym_[(j * N + p) * N + k];
                A[p * N + k] = acc;
            }
        for (int p = 0; p < N; ++p) {
            double at = 0.0, ax = 0.0, ay = 0.0, az = 0.0;
            for (int k = 0; k < N; ++k) {
                at += A[p * N + k] * d.t[base + k];
                ax += A[p * N + k] * d.x[base + k];
                ay += A[p * N + k] * d.y[base + k];
                az += A[p * N + k] * d.z[base + k];
            }
            s_tt[base + p] = lrho[p];
            s_lap[base + p] = -lrho[p];
            s_t[base + p] = 2.0 * at;
            s_x[base + p] = -2.0 * ax;
            s_y[base + p] = -2.0 * ay;
            s_z[base + p] = -2.0 * az;
        }
    }
    double J = 0.0;
    for (std::size_t i = 0; i < total; ++i) {
        if (!std::isfinite(terms[i])) {
            std::ostringstream os;
            os << "functional: non-finite value at time level " << i / E << ", node " << grid_.eval_nodes[i % E];
            throw std::runtime_error(os.str());
        }
        J += terms[i];
    }
    grad.assign(v.size(), 0.0);
    std::vector<double> tmp;
    apply(0, ops_t_[2], s_tt, grad, true, true);
    apply(0, ops_t_[1], s_t, grad, true, true);
    apply(1, ops_s_[2], s_lap, grad, true, true);
    apply(2, ops_s_[2], s_lap, grad, true, true);
    apply(3, ops_s_[2], s_lap, grad, true, true);
    apply(1, ops_s_[1], s_x, grad, true, true);
    apply(2, ops_s_[1], s_y, grad, true, true);
    apply(3, ops_s_[1], s_z, grad, true, true);
    if (cfg_.alpha > 0.0) J += penalty(v, d, &grad, nullptr);
    if (!std::isfinite(J)) throw std::runtime_error("functional: non-finite value");
    if (mask_pinned)
        for (int l = 0; l < grid_.L; ++l)
            for (int s : grid_.pinned) {
                const std::size_t base = (static_cast<std::size_t>(l) * S + s) * N;
                for (int c = 0; c < N; ++c) grad[base + c] = 0.0;
            }
    return J;
}

double Functional::value(const CoefficientVectorField& V) const {
    const auto terms = node_terms(V);
    double J = 0.0;
    for (double t : terms) J += t;
    return J;
}

std::vector<double> Functional::node_terms(const CoefficientVectorField& V) const {
    const std::vector<double>& v = V.values;
    if (v.size() != grid_.nodes() * N_) throw std::invalid_argument("functional: field size mismatch");
    const auto r = residual(V);
    const std::size_t total = grid_.eval_nodes.size() * grid_.L;
    std::vector<double> terms(total);
    for (std::size_t i = 0; i < total; ++i) {
        double rr = 0.0;
        for (int m = 0; m < N_; ++m) rr += r[i * N_ + m] * r[i * N_ + m];
        terms[i] = weight_[i] * rr;
        if (!std::isfinite(terms[i])) {
            std::ostringstream os;
            os << "functional: non-finite value at time level " << i / grid_.eval_nodes.size() << ", node "
               << grid_.eval_nodes[i % grid_.eval_nodes.size()];
            throw std::runtime_error(os.str());
        }
    }
    if (cfg_.alpha > 0.0) {
        Derivs d;
        derivatives(v, d);
        std::vector<double> pen(total, 0.0);
        penalty(v, d, nullptr, &pen);
        terms.insert(terms.end(), pen.begin(), pen.end());
    }
    return terms;
}

double Functional::penalty_norm2(const std::vector<double>& v) const {
    Derivs d;
    derivatives(v, d);
    const std::size_t E = grid_.eval_nodes.size(), S = grid_.spatial();
    const double vol = grid_.cell_volume();
    double total = 0.0;
    std::vector<double> tmp, tmp2;
    for (const auto& beta : multi_indices(cfg_.penalty_order)) {
        const int order = beta[0] + beta[1] + beta[2] + beta[3];
        const int axis = pure_axis(beta);
        const std::vector<double>* D = nullptr;
        if (order == 0) {
            D = &v;
        } else if (axis >= 0 && order <= 2) {
            static const std::vector<double> Derivs::*first[4] = {&Derivs::t, &Derivs::x, &Derivs::y, &Derivs::z};
            static const std::vector<double> Derivs::*second[4] = {&Derivs::tt, &Derivs::xx, &Derivs::yy, &Derivs::zz};
            D = order == 1 ? &(d.*first[axis]) : &(d.*second[axis]);
        } else {
            tmp = v;
            for (int a = 0; a < 4; ++a)
                if (beta[a] > 0) {
                    apply(a, a == 0 ? ops_t_[beta[a]] : ops_s_[beta[a]], tmp, tmp2, false, false);
                    std::swap(tmp, tmp2);
                }
            D = &tmp;
        }
        for (std::size_t l = 0; l < static_cast<std::size_t>(grid_.L); ++l)
            for (std::size_t e = 0; e < E; ++e) {
                const std::size_t base = (l * S + grid_.eval_nodes[e]) * N_;
                for (int c = 0; c < N_; ++c) total += (*D)[base + c] * (*D)[base + c];
            }
    }
    return vol * total;
}

double Functional::penalty_norm2(const CoefficientVectorField& V) const { return penalty_norm2(V.values); }

double Functional::h1_norm2(const std::vector<double>& v) const {
    Derivs d;
    derivatives(v, d);
    const std::size_t S = grid_.spatial();
    double total = 0.0;
    for (std::size_t l = 0; l < static_cast<std::size_t>(grid_.L); ++l)
        for (int s : grid_.eval_nodes) {
            const std::size_t base = (l * S + s) * N_;
            for (int c = 0; c < N_; ++c) {
                const std::size_t i = base + c;
                total += v[i] * v[i] + d.t[i] * d.t[i] + d.x[i] * d.x[i] + d.y[i] * d.y[i] + d.z[i] * d.z[i];
            }
        }
    return grid_.cell_volume() * total;
}

std::vector<double> Functional::jacobi_diagonal(const CoefficientVectorField& V) const {
    const std::vector<double>& v = V.values;
    Derivs d;
    derivatives(v, d);
    const std::size_t E = grid_.eval_nodes.size(), S = grid_.spatial();
    const int N = N_, n = grid_.n;
    std::vector<double> diag(v.size(), 0.0);
    const Stencil1D &Dt = ops_t_[1], &Dtt = ops_t_[2], &Dx = ops_s_[1], &Dxx = ops_s_[2];
    const int sstride[3] = {n * n, n, 1};
    std::vector<double> Gt(N * N), Ga[3], Ht(N * N), Ha[3], Jb(N * N);
    for (auto& a : Ga) a.resize(N * N);
    for (auto& a : Ha) a.resize(N * N);
    for (std::size_t l = 0; l < static_cast<std::size_t>(grid_.L); ++l)
        for (std::size_t e = 0; e < E; ++e) {
            const int s = grid_.eval_nodes[e];
            const std::size_t base = (l * S + s) * N;
            const double W = weight_[l * E + e], chi = chi_[l * E + e];
            if (W == 0.0 || chi == 0.0) continue;
            const double* vd[4] = {&d.t[base], &d.x[base], &d.y[base], &d.z[base]};
            for (int m = 0; m < N; ++m)
                for (int p = 0; p < N; ++p) {
                    double acc[4] = {0, 0, 0, 0};
                    for (int k = 0; k < N; ++k) {
                        const double b = Bsym_[(m * N + p) * N + k];
                        for (int a = 0; a < 4; ++a) acc[a] += b * vd[a][k];
                    }
                    Gt[m * N + p] = 2.0 * acc[0];
                    for (int a = 0; a < 3; ++a) Ga[a][m * N + p] = -2.0 * acc[a + 1];
                }
            auto mul = [&](const std::vector<double>& G, std::vector<double>& H) {
                for (int m = 0; m < N; ++m)
                    for (int p = 0; p < N; ++p) {
                        double acc = 0.0;
                        for (int j = 0; j < N; ++j) acc += Fop_[m * N + j] * G[j * N + p];
                        H[m * N + p] = acc;
                    }
            };
            mul(Gt, Ht);
            for (int a = 0; a < 3; ++a) mul(Ga[a], Ha[a]);
            auto scatter = [&](std::size_t target_base) {
                for (int c = 0; c < N; ++c) {
                    double acc = 0.0;
                    for (int m = 0; m < N; ++m) acc += Jb[m * N + c] * Jb[m * N + c];
                    diag[target_base + c] += 2.0 * W * chi * chi * acc;
                }
            };
            // Time column offsets (spatial offset zero), including the node itself.
            std::vector<int> cols;
            for (std::size_t j = 0; j < Dtt.coef[l].size(); ++j) cols.push_back(Dtt.start[l] + j);
            for (std::size_t j = 0; j < Dt.coef[l].size(); ++j) cols.push_back(Dt.start[l] + j);
            std::sort(cols.begin(), cols.end());
            cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
            const int i0 = 1;  // spatial rows are centered at evaluation nodes
            for (int lc : cols) {
                double ctt = 0.0, ct = 0.0;
                if (lc >= Dtt.start[l] && lc < Dtt.start[l] + static_cast<int>(Dtt.coef[l].size()))
                    ctt = Dtt.coef[l][lc - Dtt.start[l]];
                if (lc >= Dt.start[l] && lc < Dt.start[l] + static_cast<int>(Dt.coef[l].size()))
                    ct = Dt.coef[l][lc - Dt.start[l]];
                double cdiag = ctt;
                if (lc == static_cast<int>(l)) cdiag -= 3.0 * Dxx.coef[i0][1];
                for (int m = 0; m < N; ++m)
                    for (int c = 0; c < N; ++c) Jb[m * N + c] = cdiag * Lop_[m * N + c] + ct * Ht[m * N + c];
                scatter((static_cast<std::size_t>(lc) * S + s) * N);
            }
            for (int a = 0; a < 3; ++a)
                for (int sign = -1; sign <= 1; sign += 2) {
                    const double caa = Dxx.coef[i0][1 + sign], ca = Dx.coef[i0][1 + sign];
                    for (int m = 0; m < N; ++m)
                        for (int c = 0; c < N; ++c) Jb[m * N + c] = -caa * Lop_[m * N + c] + ca * Ha[a][m * N + c];
                    scatter((l * S + s + sign * sstride[a]) * N);
                }
        }
    if (cfg_.alpha > 0.0) {
        std::vector<double> mask(v.size(), 0.0), acc(v.size(), 0.0), tmp, tmp2;
        for (std::size_t l = 0; l < static_cast<std::size_t>(grid_.L); ++l)
            for (int s : grid_.eval_nodes)
                for (int c = 0; c < N; ++c) mask[(l * S + s) * N + c] = 1.0;
        for (const auto& beta : multi_indices(cfg_.penalty_order)) {
            tmp = mask;
            for (int a = 3; a >= 0; --a)
                if (beta[a] > 0) {
                    apply(a, (a == 0 ? ops_t_[beta[a]] : ops_s_[beta[a]]).squared(), tmp, tmp2, true, false);
                    std::swap(tmp, tmp2);
                }
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += tmp[i];
        }
        const double galpha = 2.0 * cfg_.alpha * grid_.cell_volume();
        for (std::size_t i = 0; i < diag.size(); ++i) diag[i] += galpha * acc[i];
    }
    for (int l = 0; l < grid_.L; ++l)
        for (int s : grid_.pinned)
            for (int c = 0; c < N; ++c) diag[(static_cast<std::size_t>(l) * S + s) * N + c] = 1.0;
    return diag;
}

double Functional::convexity_probe(const CoefficientVectorField& V1, const CoefficientVectorField& V2) const {
    const std::size_t S = grid_.spatial();
    for (int l = 0; l < grid_.L; ++l)
        for (int s : grid_.pinned)
            for (int c = 0; c < N_; ++c) {
                const std::size_t i = (static_cast<std::size_t>(l) * S + s) * N_ + c;
                if (V1.values[i] != V2.values[i])
                    throw std::invalid_argument("convexity probe: fields differ on pinned nodes");
            }
    std::vector<double> delta(V1.values.size());
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = V1.values[i] - V2.values[i];
    const auto r1 = residual(V1), r2 = residual(V2);
    Derivs dd;
    derivatives(delta, dd);
    const std::size_t E = grid_.eval_nodes.size();
    double data = 0.0;
    for (std::size_t l = 0; l < static_cast<std::size_t>(grid_.L); ++l)
        for (std::size_t e = 0; e < E; ++e) {
            const std::size_t le = l * E + e;
            const std::size_t base = (l * S + grid_.eval_nodes[e]) * N_;
            double Q[256], q[16], F[16];
            // Quadratic part chi M^{-1} F(delta).
            const int N = N_;
            for (int n = 0; n < N; ++n)
                for (int k = 0; k < N; ++k)
                    Q[n * N + k] = dd.t[base + n] * dd.t[base + k] - dd.x[base + n] * dd.x[base + k] -
                                   dd.y[base + n] * dd.y[base + k] - dd.z[base + n] * dd.z[base + k];
            for (int m = 0; m < N; ++m) {
                double acc = 0.0;
                for (int nk = 0; nk < N * N; ++nk) acc += T_.B[static_cast<std::size_t>(m) * N * N + nk] * Q[nk];
                F[m] = 2.0 * acc;
            }
            double diff2 = 0.0, cross = 0.0;
            for (int m = 0; m < N; ++m) {
                double acc = 0.0;
                for (int j = 0; j < N; ++j) acc += Fop_[m * N + j] * F[j];
                q[m] = chi_[le] * acc;
                const double dr = r1[le * N + m] - r2[le * N + m];
                diff2 += dr * dr;
                cross += r2[le * N + m] * q[m];
            }
            data += weight_[le] * (diff2 + 2.0 * cross);
        }
    return data + 0.5 * cfg_.alpha * penalty_norm2(delta);
}

}  // namespace carleman
