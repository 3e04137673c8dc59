#include "carleman/geometry.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace carleman {

ProblemGeometry make_geometry(double R, double T_minus, double T, std::size_t source_count) {
    ProblemGeometry g;
    g.R = R;
    g.T = T;
    g.T_minus = T_minus;
    g.T0 = 0.5 * (T + T_minus);
    g.A = (T - T_minus) / 6.0;
    const double hs = 2.0 * R / static_cast<double>(source_count + 1);
    for (std::size_t i = 1; i <= source_count; ++i) g.source_positions.push_back(-R + i * hs);
    return g;
}

CarlemanParams make_carleman(const ProblemGeometry& g, double sigma, double h, double lambda) {
    CarlemanParams c;
    c.sigma = sigma;
    c.h = h;
    c.eta = (sigma * sigma - h) / (4.0 * g.A * g.A);
    c.p = {-g.R - sigma, 0.0, 0.0};
    c.lambda = lambda;
    return c;
}

bool ValidationReport::ok() const {
    for (const auto& c : checks)
        if (!c.passed) return false;
    return !checks.empty();
}

std::string ValidationReport::summary() const {
    std::ostringstream os;
    for (const auto& c : checks)
        os << (c.passed ? "pass " : "FAIL ") << c.name << ": " << c.detail << "\n";
    return os.str();
}

namespace {

bool close(double a, double b, double tol = 1e-12) {
    return std::abs(a - b) <= tol * std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

}  // namespace

ValidationReport validate_geometry(const ProblemGeometry& g, const CarlemanParams& c) {
    ValidationReport rep;
    auto add = [&](std::string name, bool ok, std::string detail) {
        rep.checks.push_back({std::move(name), ok, std::move(detail)});
    };
    std::ostringstream os;
    os.precision(10);

    bool finite = std::isfinite(g.R) && std::isfinite(g.T) && std::isfinite(g.T_minus) &&
                  std::isfinite(g.T0) && std::isfinite(g.A) && std::isfinite(c.sigma) &&
                  std::isfinite(c.h) && std::isfinite(c.eta) && std::isfinite(c.lambda);
    for (double s : g.source_positions) finite = finite && std::isfinite(s);
    for (double v : c.p) finite = finite && std::isfinite(v);
    add("finite parameters", finite, finite ? "all finite" : "non-finite field present");

    const double cone = g.R * (std::sqrt(5.0) + 1.0);
    os << "T=" << g.T << " T_minus=" << g.T_minus << " R(sqrt5+1)=" << cone;
    add("time window", g.R > 0 && g.T > g.T_minus && g.T_minus > cone, os.str());

    os.str("");
    os << "T0=" << g.T0 << " A=" << g.A;
    add("window center and half-width",
        close(g.T0, 0.5 * (g.T + g.T_minus)) && close(g.A, (g.T - g.T_minus) / 6.0), os.str());

    bool inside = !g.source_positions.empty();
    for (double s : g.source_positions) inside = inside && s > -g.R && s < g.R;
    os.str("");
    os << g.source_positions.size() << " sources";
    add("sources on the open segment (-R,R)", inside, os.str());

    const double smin = 2.0 * g.R / (std::sqrt(2.0) - 1.0);
    os.str("");
    os << "sigma=" << c.sigma << " bound=" << smin;
    add("sigma lower bound", c.sigma > smin, os.str());

    os.str("");
    os << "h=" << c.h << " sigma^2/5=" << c.sigma * c.sigma / 5.0;
    add("level h", c.h > 0 && c.h < c.sigma * c.sigma / 5.0, os.str());

    const double eta = (c.sigma * c.sigma - c.h) / (4.0 * g.A * g.A);
    os.str("");
    os << "eta=" << c.eta << " (sigma^2-h)/(2A)^2=" << eta;
    add("eta", close(c.eta, eta) && c.eta > 0 && c.eta < 1, os.str());

    os.str("");
    os << "p=(" << c.p[0] << "," << c.p[1] << "," << c.p[2] << ")";
    add("weight center p", close(c.p[0], -g.R - c.sigma) && c.p[1] == 0 && c.p[2] == 0, os.str());

    os.str("");
    os << "lambda=" << c.lambda;
    add("lambda nonnegative", c.lambda >= 0, os.str());
    return rep;
}

double psi_weight(const Vec3& x, double t, const ProblemGeometry& g, const CarlemanParams& c) {
    const double dx = x[0] - c.p[0], dy = x[1] - c.p[1], dz = x[2] - c.p[2];
    const double dt = t - g.T0;
    return dx * dx + dy * dy + dz * dz - c.eta * dt * dt;
}

double carleman_weight(const Vec3& x, double t, const ProblemGeometry& g, const CarlemanParams& c) {
    const double w = std::exp(c.lambda * psi_weight(x, t, g, c));
    if (!std::isfinite(w) || w <= 0.0) {
        std::ostringstream os;
        os << "Carleman weight out of range at t=" << t << " (lambda=" << c.lambda << ")";
        throw std::overflow_error(os.str());
    }
    return w;
}

bool level_domain_membership(const Vec3& x, double t, const ProblemGeometry& g,
                             const CarlemanParams& c, int k) {
    return psi_weight(x, t, g, c) > k * c.h && norm(x) < g.R;
}

double cutoff_chi(const Vec3& x, double t, const ProblemGeometry& g, const CarlemanParams& c,
                  ChiMode mode) {
    if (mode == ChiMode::identity) return 1.0;
    if (norm(x) >= g.R) return 0.0;
    const double tau = (psi_weight(x, t, g, c) - 2.0 * c.h) / c.h;
    if (tau <= 0.0) return 0.0;
    if (tau >= 1.0) return 1.0;
    return tau * tau * tau * (10.0 + tau * (-15.0 + 6.0 * tau));
}

ChiMode parse_chi_mode(const std::string& s) {
    if (s == "identity") return ChiMode::identity;
    if (s == "paper" || s == "cutoff") return ChiMode::paper;
    throw std::invalid_argument("unknown chi mode: " + s);
}

std::string to_string(ChiMode m) { return m == ChiMode::identity ? "identity" : "paper"; }

}  // namespace carleman
