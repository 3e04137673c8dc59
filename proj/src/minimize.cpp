#include "carleman/inversion.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>

namespace carleman {

namespace {

std::vector<char> free_mask(const InversionGrid& g, int N) {
    std::vector<char> m(g.nodes() * N, 0);
    for (int l = 0; l < g.L; ++l)
        for (int s : g.interior)
            for (int c = 0; c < N; ++c) m[(static_cast<std::size_t>(l) * g.spatial() + s) * N + c] = 1;
    return m;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

double estimate_lipschitz(const Functional& f, const CoefficientVectorField& V, const std::vector<double>& metric,
                          int iters, std::uint64_t seed) {
    const InversionGrid& g = f.grid();
    const int N = f.N();
    const auto mask = free_mask(g, N);
    const std::size_t n = V.values.size();
    std::vector<double> x(n, 0.0), y(n), z(n), gp, gm;
    std::mt19937_64 eng(seed);
    for (std::size_t i = 0; i < n; ++i)
        if (mask[i]) x[i] = static_cast<double>(eng() >> 11) * 0x1.0p-53 - 0.5;
    double nx = std::sqrt(dot(x, x));
    if (nx == 0.0) return 0.0;
    for (auto& v : x) v /= nx;
    double vmax = 0.0;
    for (double v : V.values) vmax = std::max(vmax, std::abs(v));
    double est = 0.0;
    CoefficientVectorField Vp = V, Vm = V;
    for (int it = 0; it < iters; ++it) {
        double ymax = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = mask[i] ? x[i] / std::sqrt(metric[i]) : 0.0;
            ymax = std::max(ymax, std::abs(y[i]));
        }
        const double eps = 1e-4 * (vmax + 1.0) / ymax;
        for (std::size_t i = 0; i < n; ++i) {
            Vp.values[i] = V.values[i] + eps * y[i];
            Vm.values[i] = V.values[i] - eps * y[i];
        }
        f.value_and_gradient(Vp, gp);
        f.value_and_gradient(Vm, gm);
        for (std::size_t i = 0; i < n; ++i) z[i] = mask[i] ? (gp[i] - gm[i]) / (2.0 * eps) / std::sqrt(metric[i]) : 0.0;
        const double nz = std::sqrt(dot(z, z));
        if (!(nz > 0.0) || !std::isfinite(nz)) break;
        est = nz;
        for (std::size_t i = 0; i < n; ++i) x[i] = z[i] / nz;
    }
    return est;
}

MinimizeResult minimize(const Functional& f, const CoefficientVectorField& initial, const IterationCallback& callback) {
    const InversionConfig& cfg = f.config();
    const InversionGrid& g = f.grid();
    const int N = f.N();
    for (double v : initial.values)
        if (!std::isfinite(v)) throw std::invalid_argument("minimize: initial field is not finite");
    const auto mask = free_mask(g, N);
    const std::size_t n = initial.values.size();

    std::vector<double> metric(n, 1.0);
    if (cfg.metric == Metric::jacobi) {
        metric = f.jacobi_diagonal(initial);
        for (std::size_t i = 0; i < n; ++i)
            if (mask[i] && !(metric[i] > 0.0)) throw std::runtime_error("minimize: degenerate metric diagonal");
    }

    MinimizeResult res;
    res.field = initial;
    const double norm0 = std::sqrt(f.penalty_norm2(initial));
    res.K = cfg.K > 0.0 ? cfg.K : 10.0 * std::max(norm0, 1e-12);
    if (cfg.gamma > 0.0) {
        res.gamma = cfg.gamma;
    } else {
        res.lipschitz = estimate_lipschitz(f, initial, metric, cfg.power_iters);
        if (!(res.lipschitz > 0.0)) throw std::runtime_error("minimize: Lipschitz estimate is not positive");
        res.gamma = 0.5 / res.lipschitz;
    }

    CoefficientVectorField& V = res.field;
    std::vector<double> grad;
    const auto t0 = std::chrono::steady_clock::now();
    double Jprev = 0.0;
    int increases = 0;
    res.stop_reason = "max_iters";
    for (int it = 0;; ++it) {
        const double J = f.value_and_gradient(V, grad);
        IterationRecord rec;
        rec.iter = it;
        rec.J = J;
        rec.grad_norm = std::sqrt(dot(grad, grad));
        rec.V_norm = std::sqrt(f.penalty_norm2(V));
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        res.log.push_back(rec);
        if (callback) callback(rec, V);
        if (cfg.checkpoint_every > 0 && !cfg.checkpoint_prefix.empty() && it > 0 && it % cfg.checkpoint_every == 0) {
            std::ostringstream os;
            os << cfg.checkpoint_prefix << "_" << std::setw(6) << std::setfill('0') << it << ".cwf";
            write_container(os.str(), field_to_container(g, V));
        }
        if (rec.grad_norm < cfg.grad_tol) {
            res.converged = true;
            res.stop_reason = "grad_tol";
            break;
        }
        if (it > 0) {
            increases = J > Jprev ? increases + 1 : 0;
            if (increases >= cfg.abort_after_increases) {
                std::ostringstream os;
                os << "minimize: J increased for " << increases << " consecutive iterations (iteration " << it
                   << ", J = " << J << ", gamma = " << res.gamma << ")";
                throw std::runtime_error(os.str());
            }
        }
        Jprev = J;
        if (it >= cfg.max_iters) break;
        if (cfg.metric == Metric::jacobi && cfg.metric_refresh > 0 && it > 0 && it % cfg.metric_refresh == 0) {
            const auto fresh = f.jacobi_diagonal(V);
            // Only ever stiffen, so the step stays below the initial stability bound.
            for (std::size_t i = 0; i < n; ++i)
                if (mask[i]) metric[i] = std::max(metric[i], fresh[i]);
            if (!(cfg.gamma > 0.0)) {
                const double lip = estimate_lipschitz(f, V, metric, cfg.power_iters);
                if (lip > res.lipschitz) {
                    res.lipschitz = lip;
                    res.gamma = 0.5 / lip;
                }
            }
        }
        for (std::size_t i = 0; i < n; ++i)
            if (mask[i]) V.values[i] -= res.gamma * grad[i] / metric[i];
        const double vn = std::sqrt(f.penalty_norm2(V));
        if (!std::isfinite(vn)) {
            std::ostringstream os;
            os << "minimize: iterate diverged at iteration " << it << " (gamma = " << res.gamma << ")";
            throw std::runtime_error(os.str());
        }
        if (vn > res.K) {
            // Radial pull toward the initial field; pinned values are untouched.
            std::vector<double> d(n);
            for (std::size_t i = 0; i < n; ++i) d[i] = V.values[i] - initial.values[i];
            const double dn = std::sqrt(f.penalty_norm2(d));
            const double mu = dn > 0.0 ? std::max(0.0, (res.K - norm0) / dn) : 0.0;
            for (std::size_t i = 0; i < n; ++i) V.values[i] = initial.values[i] + std::min(mu, 1.0) * d[i];
            ++res.projections;
        }
    }
    for (std::size_t i = 0; i < n; ++i)
        if (!mask[i]) res.max_pinned_change = std::max(res.max_pinned_change, std::abs(V.values[i] - initial.values[i]));
    return res;
}

void write_iteration_log(const std::string& path, const std::vector<IterationRecord>& log) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "iter,J,grad_norm,V_norm,wall_ms\n" << std::setprecision(17);
    for (const auto& r : log) out << r.iter << ',' << r.J << ',' << r.grad_norm << ',' << r.V_norm << ',' << r.wall_ms << '\n';
}

Container field_to_container(const InversionGrid& g, const CoefficientVectorField& V) {
    Container c;
    c.header["kind"] = "coefficient_field";
    c.header["R"] = g.R;
    c.header["hx"] = g.hx;
    c.header["ht"] = g.ht;
    c.header["t0"] = g.t0;
    c.header["L"] = g.L;
    c.header["n"] = g.n;
    c.header["half"] = g.half;
    c.header["N"] = V.N;
    c.arrays.push_back({"V", {static_cast<std::size_t>(g.L), g.spatial(), static_cast<std::size_t>(V.N)}, V.values});
    return c;
}

CoefficientVectorField field_from_container(const Container& c, const InversionGrid& g) {
    if (c.header.value("kind", "") != "coefficient_field") throw std::runtime_error("container is not a coefficient field");
    if (c.header.at("n").get<int>() != g.n || c.header.at("L").get<int>() != g.L ||
        std::abs(c.header.at("hx").get<double>() - g.hx) > 1e-12 || std::abs(c.header.at("ht").get<double>() - g.ht) > 1e-12)
        throw std::runtime_error("coefficient field grid does not match");
    CoefficientVectorField V;
    V.N = c.header.at("N").get<int>();
    V.values = c.get("V").data;
    if (V.values.size() != g.nodes() * V.N) throw std::runtime_error("coefficient field has the wrong size");
    return V;
}

}  // namespace carleman
