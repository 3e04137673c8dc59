#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace carleman {

using Vec3 = std::array<double, 3>;

inline double norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }
inline double dist(const Vec3& a, const Vec3& b) {
    return norm(Vec3{a[0] - b[0], a[1] - b[1], a[2] - b[2]});
}

struct ProblemGeometry {
    double R = 0.5;
    double T = 12.0;
    double T_minus = 4.0;
    double T0 = 8.0;
    double A = 4.0 / 3.0;
    std::vector<double> source_positions;

    std::size_t source_count() const { return source_positions.size(); }
    // Source point (s, 0, -2R).
    Vec3 source_point(std::size_t i) const { return {source_positions.at(i), 0.0, -2.0 * R}; }
};

// Uniform sources s_i = -R + i*2R/(count+1), i = 1..count.
ProblemGeometry make_geometry(double R, double T_minus, double T, std::size_t source_count);

struct CarlemanParams {
    double sigma = 2.5;
    double h = 0.1;
    double eta = 1107.0 / 1280.0;
    Vec3 p{-3.0, 0.0, 0.0};
    double lambda = 3.0;
};

// eta = (sigma^2 - h)/(2A)^2 and p = (-R - sigma, 0, 0).
CarlemanParams make_carleman(const ProblemGeometry& g, double sigma, double h, double lambda);

struct ValidationCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct ValidationReport {
    std::vector<ValidationCheck> checks;
    bool ok() const;
    std::string summary() const;
};

ValidationReport validate_geometry(const ProblemGeometry& g, const CarlemanParams& c);

// psi(x,t) = |x - p|^2 - eta (t - T0)^2, called the weight exponent to keep it
// apart from the basis functions.
double psi_weight(const Vec3& x, double t, const ProblemGeometry& g, const CarlemanParams& c);

// exp(lambda psi); throws on overflow.
double carleman_weight(const Vec3& x, double t, const ProblemGeometry& g, const CarlemanParams& c);

bool level_domain_membership(const Vec3& x, double t, const ProblemGeometry& g,
                             const CarlemanParams& c, int k);

enum class ChiMode { identity, paper };

double cutoff_chi(const Vec3& x, double t, const ProblemGeometry& g, const CarlemanParams& c,
                  ChiMode mode);

ChiMode parse_chi_mode(const std::string& s);
std::string to_string(ChiMode m);

}  // namespace carleman
