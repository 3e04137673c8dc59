#include "carleman/inversion.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace carleman {

std::vector<double> fd_weights(int m, const std::vector<double>& x) {
    // Fornberg's recursion at z = 0.
    const int n = static_cast<int>(x.size());
    if (n <= m) throw std::invalid_argument("fd_weights: need more points than the derivative order");
    std::vector<std::vector<double>> c(n, std::vector<double>(m + 1, 0.0));
    double c1 = 1.0, c4 = x[0];
    c[0][0] = 1.0;
    for (int i = 1; i < n; ++i) {
        const int mn = std::min(i, m);
        double c2 = 1.0;
        const double c5 = c4;
        c4 = x[i];
        for (int j = 0; j < i; ++j) {
            const double c3 = x[i] - x[j];
            c2 *= c3;
            if (j == i - 1) {
                for (int k = mn; k >= 1; --k) c[i][k] = c1 * (k * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for (int k = mn; k >= 1; --k) c[j][k] = (c4 * c[j][k] - k * c[j][k - 1]) / c3;
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i) w[i] = c[i][m];
    return w;
}

Stencil1D Stencil1D::squared() const {
    Stencil1D s = *this;
    for (auto& row : s.coef)
        for (auto& v : row) v *= v;
    for (auto& col : s.cols)
        for (auto& e : col) e.second *= e.second;
    return s;
}

Stencil1D make_stencil(int order, int n, double h) {
    Stencil1D st;
    st.order = order;
    st.n = n;
    st.start.resize(n);
    st.coef.resize(n);
    st.cols.assign(n, {});
    if (order == 0) {
        for (int r = 0; r < n; ++r) {
            st.start[r] = r;
            st.coef[r] = {1.0};
        }
    } else {
        const int half = (order + 1) / 2;
        const int one_sided = order + 2;
        if (n < one_sided) throw std::invalid_argument("make_stencil: line too short for the derivative order");
        const double scale = std::pow(h, -order);
        for (int r = 0; r < n; ++r) {
            int first, count;
            if (r - half >= 0 && r + half <= n - 1) {
                first = r - half;
                count = 2 * half + 1;
            } else {
                count = one_sided;
                first = r - half < 0 ? 0 : n - count;
            }
            std::vector<double> off(count);
            for (int j = 0; j < count; ++j) off[j] = first + j - r;
            auto w = fd_weights(order, off);
            for (auto& v : w) v *= scale;
            st.start[r] = first;
            st.coef[r] = std::move(w);
        }
    }
    for (int r = 0; r < n; ++r)
        for (std::size_t j = 0; j < st.coef[r].size(); ++j)
            st.cols[st.start[r] + j].push_back({r, st.coef[r][j]});
    return st;
}

Vec3 InversionGrid::coord(int s) const {
    const int k = s % n, j = (s / n) % n, i = s / (n * n);
    return {(i - half) * hx, (j - half) * hx, (k - half) * hx};
}

InversionGrid make_inversion_grid(double R, double T_minus, double T, double hx, double ht, int penalty_order) {
    if (!(hx > 0 && ht > 0)) throw std::invalid_argument("inversion grid: steps must be positive");
    if (penalty_order < 1 || penalty_order > 4) throw std::invalid_argument("inversion grid: penalty order in 1..4");
    InversionGrid g;
    g.R = R;
    g.hx = hx;
    g.ht = ht;
    g.t0 = T_minus;
    const double levels = (T - T_minus) / ht;
    if (std::abs(levels - std::round(levels)) > 1e-9 * levels)
        throw std::invalid_argument("inversion grid: time step must divide the window");
    g.L = static_cast<int>(std::lround(levels)) + 1;
    g.margin = std::max(1, (penalty_order + 1) / 2);
    const int imax = static_cast<int>(std::ceil(R / hx - 1e-12)) - 1;
    g.half = imax + g.margin;
    g.n = 2 * g.half + 1;
    const int stencil_need = penalty_order + 2;
    if (g.L < stencil_need) {
        std::ostringstream os;
        os << "inversion grid: at least " << stencil_need << " time levels required";
        throw std::invalid_argument(os.str());
    }
    g.role.assign(g.spatial(), NodeRole::ghost);
    auto inside = [&](int i, int j, int k) {
        if (i < 0 || j < 0 || k < 0 || i >= g.n || j >= g.n || k >= g.n) return false;
        const double x = (i - g.half) * hx, y = (j - g.half) * hx, z = (k - g.half) * hx;
        return std::sqrt(x * x + y * y + z * z) < R;
    };
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.n; ++j)
            for (int k = 0; k < g.n; ++k) {
                if (!inside(i, j, k)) continue;
                const int s = g.index(i, j, k);
                g.eval_nodes.push_back(s);
                const bool deep = inside(i + 1, j, k) && inside(i - 1, j, k) && inside(i, j + 1, k) &&
                                  inside(i, j - 1, k) && inside(i, j, k + 1) && inside(i, j, k - 1);
                g.role[s] = deep ? NodeRole::interior : NodeRole::boundary;
            }
    for (int s = 0; s < static_cast<int>(g.spatial()); ++s) {
        if (g.role[s] == NodeRole::interior)
            g.interior.push_back(s);
        else
            g.pinned.push_back(s);
    }
    if (g.interior.empty()) throw std::invalid_argument("inversion grid: no interior nodes");
    return g;
}

CoefficientVectorField zero_field(const InversionGrid& g, int N) {
    CoefficientVectorField f;
    f.N = N;
    f.values.assign(g.nodes() * N, 0.0);
    return f;
}

Metric parse_metric(const std::string& s) {
    if (s == "euclidean" || s == "identity") return Metric::euclidean;
    if (s == "jacobi" || s == "diagonal") return Metric::jacobi;
    throw std::invalid_argument("unknown metric: " + s);
}

std::string to_string(Metric m) { return m == Metric::euclidean ? "euclidean" : "jacobi"; }

ResidualForm parse_residual_form(const std::string& s) {
    if (s == "scaled") return ResidualForm::scaled;
    if (s == "unscaled") return ResidualForm::unscaled;
    throw std::invalid_argument("unknown residual form: " + s);
}

std::string to_string(ResidualForm f) { return f == ResidualForm::scaled ? "scaled" : "unscaled"; }

bool alpha_advisory_ok(const InversionConfig& cfg, const CarlemanParams& c) {
    return cfg.alpha >= 2.0 * std::exp(-cfg.lambda * c.h);
}

}  // namespace carleman
